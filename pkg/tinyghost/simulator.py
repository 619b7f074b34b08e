import io
import os
from dataclasses import dataclass
import numpy as np
from numba import jit
from joblib import Parallel, delayed
from tqdm import tqdm
from tinyghost.helpers import PhysicsError, AnalysisError, FWHM_PER_SIGMA, ProfileOp, n_jobs, progress_disabled
from tinyghost.physics import FiberChannel, sample_detuning
from tinyghost.optics import position_of_detuning
from tinyghost.scene import reflectivity_along_line

RECORDER_BIN = 164.61e-12
SIGNAL, IDLER = 1, 2

@dataclass(frozen=True)
class DetectorModel:
  efficiency: float = 1.
  jitter: float = 0.            # FWHM, s
  dark_rate: float = 0.         # counts/s
  dead_time: float = 0.         # s
  bin_width: float = RECORDER_BIN

  def __post_init__(self):
    if not 0 <= self.efficiency <= 1: raise PhysicsError(f"efficiency must lie in [0, 1], got {self.efficiency}")
    if not self.bin_width > 0: raise PhysicsError(f"recorder bin must be positive, got {self.bin_width}")
    if self.jitter < 0 or self.dark_rate < 0 or self.dead_time < 0:
      raise PhysicsError("jitter, dark rate and dead time must be non-negative")

@dataclass(frozen=True)
class SimConfig:
  signal_fiber: FiberChannel
  idler_fiber: FiberChannel
  rep_rate: float = 40e6
  mu: float = 0.01
  duration: float = 1e-3
  seed: int = 0
  drift: float = 4e-14                       # s per °C per m of idler fiber
  temperature: tuple = ((0., 0.),)           # (time s, °C) knots, piecewise linear
  grating_blur: bool = True
  block: int = 1 << 20                       # pulses per RNG block

  def __post_init__(self):
    if self.mu < 0: raise PhysicsError(f"mean pairs per pulse must be non-negative, got {self.mu}")
    if not self.duration > 0: raise PhysicsError(f"run duration must be positive, got {self.duration}")
    if not self.rep_rate > 0: raise PhysicsError(f"repetition rate must be positive, got {self.rep_rate}")

  @property
  def pulses(self): return int(round(self.duration*self.rep_rate))

  def drift_at(self, t):
    times, temps = np.array(self.temperature, dtype=np.float64).reshape(-1, 2).T
    dT = np.interp(t, times, temps) - np.interp(0., times, temps)
    return self.drift*self.idler_fiber.length*dT

# **** streams ****

class TimestampStream:
  def __init__(self, channel, bins, bin_width, duration=0., seed=None, config_hash=""):
    self.channel, self.bins, self.bin_width = channel, np.asarray(bins, dtype=np.int64), float(bin_width)
    self.duration, self.seed, self.config_hash = float(duration), seed, config_hash
    assert self.bins.ndim == 1, "timestamps must be 1-D"
    assert len(self.bins) == 0 or (self.bins[0] >= 0 and np.all(np.diff(self.bins) >= 0)), "timestamps must be sorted and non-negative"

  def __repr__(self):
    return f"<TimestampStream channel {self.channel} with {len(self)} events at {self.bin_width*1e12:.2f} ps>"

  def __len__(self): return len(self.bins)

  @property
  def times(self):
    return (self.bins + 0.5)*self.bin_width

  def to_csv(self, fn):
    np.savetxt(fn, np.c_[np.full(len(self.bins), self.channel), self.bins], delimiter=",",
               header="channel,bin_index", comments="", fmt="%d")
    with open(os.path.splitext(fn)[0] + ".meta", "w") as f:
      f.write(f"channel={self.channel}\nbin_width_s={self.bin_width!r}\nduration_s={self.duration!r}\nseed={self.seed}\nconfig_hash={self.config_hash}\n")

  @classmethod
  def from_csv(cls, fn):
    meta = os.path.splitext(fn)[0] + ".meta"
    if not os.path.isfile(meta): raise AnalysisError(f"{fn}: missing metadata file {meta}")
    with open(meta) as f:
      kv = dict(line.strip().split("=", 1) for line in f if "=" in line)
    with open(fn) as f:
      header, body = f.readline().strip(), f.read()
    if header != "channel,bin_index": raise AnalysisError(f"{fn}: expected header 'channel,bin_index', got {header!r}")
    dat = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2) if body.strip() else np.zeros((0, 2), dtype=np.int64)
    channel = int(kv["channel"]) if "channel" in kv else int(dat[0, 0]) if len(dat) else 0
    seed = None if kv.get("seed", "None") == "None" else int(kv["seed"])
    return cls(channel, dat[:, 1], float(kv["bin_width_s"]), float(kv.get("duration_s", 0.)), seed, kv.get("config_hash", ""))

class TruthLog:
  def __init__(self, pulse, omega, signal, idler):
    self.pulse, self.omega, self.signal, self.idler = pulse, omega, signal, idler

  def __len__(self): return len(self.pulse)

  def to_csv(self, fn):
    np.savetxt(fn, np.c_[self.pulse, self.omega, self.signal, self.idler], delimiter=",",
               header="pulse_index,detuning_rad_s,signal_detected,idler_detected", comments="",
               fmt=["%d", "%.17g", "%d", "%d"])

# **** detection ****

@jit(nopython=True)
def _dead_time_keep(t, dead):
  keep = np.ones(len(t), dtype=np.bool_)
  last = -np.inf
  for k in range(len(t)):
    if t[k] - last < dead:
      keep[k] = False
    else:
      last = t[k]
  return keep

def _detect(times, pair, detector):
  """Sort, apply dead time (the later event is lost), drop negative times, quantize."""
  order = np.argsort(times, kind="stable")
  times, pair = times[order], pair[order]
  keep = times >= 0
  if detector.dead_time > 0: keep &= _dead_time_keep(times, detector.dead_time)
  bins = np.floor(times[keep]/detector.bin_width).astype(np.int64)
  return bins, pair[keep]

def _simulate_block(config, f, bench, reflectivity, detectors, row, k0, k1, truth):
  rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(row, k0//config.block)))
  sdet, idet = detectors
  counts = rng.poisson(config.mu, k1-k0)
  pulse = np.repeat(np.arange(k0, k1, dtype=np.int64), counts)
  n = len(pulse)
  omega = sample_detuning(f, rng, n)
  t0 = pulse/config.rep_rate

  x = position_of_detuning(bench, omega, f.center_detuning)
  if config.grating_blur: x = x + rng.normal(0., bench.spot_width/FWHM_PER_SIGMA, n)
  refl = np.ones(n) if reflectivity is None else np.abs(reflectivity(x))**2
  sig = rng.random(n) < refl*sdet.efficiency*config.signal_fiber.loss
  idl = rng.random(n) < idet.efficiency*config.idler_fiber.loss
  ts = t0 + config.signal_fiber.group_delay(omega, f.center_detuning) + rng.normal(0., sdet.jitter/FWHM_PER_SIGMA, n)
  ti = t0 + config.idler_fiber.group_delay(omega, f.center_detuning) + config.drift_at(t0) + rng.normal(0., idet.jitter/FWHM_PER_SIGMA, n)

  t_start, span = k0/config.rep_rate, (k1-k0)/config.rep_rate
  dark_s = t_start + span*rng.random(rng.poisson(sdet.dark_rate*span))
  dark_i = t_start + span*rng.random(rng.poisson(idet.dark_rate*span))

  idx = np.arange(n, dtype=np.int64)
  out = (np.concatenate([ts[sig], dark_s]), np.concatenate([idx[sig], np.full(len(dark_s), -1)]),
         np.concatenate([ti[idl], dark_i]), np.concatenate([idx[idl], np.full(len(dark_i), -1)]))
  return out + ((pulse, omega) if truth else (None, None))

def simulate_row(config, f, bench, line_reflectivity, detectors, row=0, workers=1, truth=False, config_hash=""):
  """Monte Carlo of one scan row. Returns (signal stream, idler stream, truth log or None).

  `line_reflectivity` None means no object in the signal arm (detection independent of Ω).
  Blocks of pulses draw from RNG streams derived from (seed, row, block), so results do not
  depend on `workers`.
  """
  sdet, idet = detectors
  if sdet.bin_width != idet.bin_width: raise PhysicsError("both channels must share the recorder bin")
  n = config.pulses
  with ProfileOp("simulate_row"):
    blocks = [(k0, min(k0+config.block, n)) for k0 in range(0, n, config.block)]
    parts = Parallel(n_jobs=n_jobs(workers))(
      delayed(_simulate_block)(config, f, bench, line_reflectivity, detectors, row, k0, k1, truth) for k0, k1 in blocks)

    offsets = np.cumsum([0] + [len(p[4]) if truth else 0 for p in parts])
    def merge(i):
      if not parts: return np.empty(0), np.empty(0, dtype=np.int64)
      times = np.concatenate([p[i] for p in parts])
      pair = np.concatenate([np.where(p[i+1] >= 0, p[i+1] + off, -1) for p, off in zip(parts, offsets)])
      return times, pair
    sbins, spair = _detect(*merge(0), sdet)
    ibins, ipair = _detect(*merge(2), idet)

  meta = dict(duration=config.duration, seed=config.seed, config_hash=config_hash)
  signal = TimestampStream(SIGNAL, sbins, sdet.bin_width, **meta)
  idler = TimestampStream(IDLER, ibins, idet.bin_width, **meta)
  log = None
  if truth:
    pulse = np.concatenate([p[4] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    omega = np.concatenate([p[5] for p in parts]) if parts else np.empty(0)
    sflag, iflag = np.zeros(len(pulse), dtype=np.int64), np.zeros(len(pulse), dtype=np.int64)
    sflag[spair[spair >= 0]] = 1
    iflag[ipair[ipair >= 0]] = 1
    log = TruthLog(pulse, omega, sflag, iflag)
  return signal, idler, log

def simulate_scan(config, f, bench, mask, plan, detectors, workers=1, truth=False, antialias=False, config_hash="", quiet=False):
  """Independent runs of simulate_row, one per scan row, in scan order."""
  rows = tqdm(enumerate(plan.offsets), total=plan.rows, disable=progress_disabled(quiet), desc="scan")
  return Parallel(n_jobs=n_jobs(workers))(
    delayed(simulate_row)(config, f, bench, reflectivity_along_line(mask, y, bench, antialias=antialias), detectors,
                          row=j, workers=1, truth=truth, config_hash=config_hash) for j, y in rows)
