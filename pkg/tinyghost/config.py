import os
import re
import hashlib
import configparser
from dataclasses import dataclass
import numpy as np
from tinyghost.helpers import C, FWHM_PER_SIGMA, ConfigError, GhostError

# **** units ****

# dimension exponents over (m, s, rad, dB, K)
def _dim(m=0, s=0, rad=0, dB=0, K=0): return (m, s, rad, dB, K)
NONE, LENGTH, TIME, FREQ, ANGLE, TEMP = _dim(), _dim(m=1), _dim(s=1), _dim(s=-1), _dim(rad=1), _dim(K=1)
DISPERSION, ATTENUATION, DRIFT = _dim(m=-1, s=1), _dim(m=-1, dB=1), _dim(m=-1, s=1, K=-1)
STR, INT, BOOL = "str", "int", "bool"

PREFIXES = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3, "": 1., "k": 1e3, "M": 1e6, "G": 1e9}
UNITS = {"rad": (1., ANGLE), "deg": (np.pi/180., ANGLE), "dB": (1., _dim(dB=1)), "K": (1., TEMP), "degC": (1., TEMP), "1": (1., NONE)}
for p, f in PREFIXES.items():
  UNITS[p+"m"], UNITS[p+"s"], UNITS[p+"Hz"] = (f, LENGTH), (f, TIME), (f, FREQ)

def parse_unit(unit):
  """'ps/nm' -> (1e-3, dims). Terms are separated by '/', each may carry ^n."""
  scale, dims = 1., np.zeros(5, dtype=np.int64)
  for k, term in enumerate(unit.split("/")):
    name, _, power = term.strip().partition("^")
    if name not in UNITS: raise ConfigError(f"unknown unit {name!r} in {unit!r}")
    power = int(power) if power else 1
    f, d = UNITS[name]
    sign = 1 if k == 0 else -1
    scale *= f**(sign*power)
    dims += sign*power*np.array(d)
  return scale, tuple(int(x) for x in dims)

def parse_quantity(text, dim=None, where=""):
  m = re.fullmatch(r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*", text)
  if m is None: raise ConfigError(f"{where} cannot parse quantity {text!r}")
  value, unit = float(m.group(1)), m.group(2)
  if not unit:
    if dim not in (None, NONE): raise ConfigError(f"{where} {text!r} needs a unit suffix")
    return value
  scale, dims = parse_unit(unit)
  if dim is not None and dims != dim: raise ConfigError(f"{where} unit {unit!r} has the wrong dimension")
  return value*scale

def format_quantity(value, unit):
  return f"{float(value/parse_unit(unit)[0])!r} {unit}"

# **** keys ****

KEYS = {
  "source": {
    "shape": (STR, "flat-top"), "order": (INT, 8), "signal_wavelength": (LENGTH, 1530e-9),
    "idler_wavelength": (LENGTH, 1570e-9), "pump_wavelength": (LENGTH, None), "bandwidth": (LENGTH, 16e-9),
    "bandwidth_reference": (STR, "signal"), "grid_points": (INT, 1025), "table": (STR, None),
    "rep_rate": (FREQ, 40e6), "pairs_per_pulse": (NONE, 0.01)},
  "bench": {
    "period": (LENGTH, 1.67e-6), "center_angle": (ANGLE, np.radians(11.9)), "incident_angle": (ANGLE, None),
    "grooves": (NONE, 1044.), "focal_length": (LENGTH, 25.4e-3), "beam_diameter": (LENGTH, 2.1e-3),
    "grating_blur": (BOOL, True)},
  "fibers": {
    "signal_length": (LENGTH, 2.), "signal_group_index": (NONE, 1.468), "signal_dispersion": (DISPERSION, 0.),
    "signal_attenuation": (ATTENUATION, 0.2e-3), "idler_length": (LENGTH, 50e3), "idler_group_index": (NONE, 1.468),
    "idler_dispersion": (DISPERSION, 0.9), "idler_attenuation": (ATTENUATION, 0.2e-3),
    "drift": (DRIFT, 4e-14), "temperature_rise": (TEMP, 0.)},
  "detectors": {
    "signal_efficiency": (NONE, 0.2), "idler_efficiency": (NONE, 0.2), "signal_jitter": (TIME, 250e-12),
    "idler_jitter": (TIME, 250e-12), "signal_dark_rate": (FREQ, 100.), "idler_dark_rate": (FREQ, 100.),
    "dead_time": (TIME, 0.), "bin_width": (TIME, 164.61e-12), "timing_resolution": (TIME, None)},
  "scene": {
    "pattern": (STR, None), "pitch": (LENGTH, 1e-6), "line_width": (LENGTH, 13e-6), "separation": (LENGTH, 50e-6),
    "checker_size": (LENGTH, 20e-6), "antialias": (BOOL, False)},
  "scan": {"step": (LENGTH, 10e-6)},
  "run": {
    "seed": (INT, None), "duration": (TIME, 0.05), "workers": (INT, 0), "truth_log": (BOOL, False),
    "window": (TIME, None), "x_pitch": (LENGTH, 5e-6), "normalize_rows": (BOOL, False), "background": (BOOL, False),
    "quadrature_points": (INT, 0), "tau_points": (INT, 257)},
}

PRESETS = ("paper", "ideal", "improved", "jsd")
PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")

def resolve_config(name):
  if os.path.isfile(name): return name
  stem = name[:-len(".conf")] if name.endswith(".conf") else name
  if stem in PRESETS: return os.path.join(PRESET_DIR, stem + ".conf")
  raise ConfigError(f"no config file or preset named {name!r}, presets are {PRESETS}")

def _parse_value(kind, raw, where):
  if kind == STR: return raw.strip()
  if kind == INT:
    try: return int(raw)
    except ValueError: raise ConfigError(f"{where} expected an integer, got {raw!r}")
  if kind == BOOL:
    if raw.strip().lower() not in configparser.ConfigParser.BOOLEAN_STATES: raise ConfigError(f"{where} expected a boolean, got {raw!r}")
    return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
  return parse_quantity(raw, kind, where)

@dataclass(frozen=True)
class RunConfig:
  values: dict
  path: str = ""
  digest: str = ""

  def __getitem__(self, section):
    return self.values[section]

  @classmethod
  def from_text(cls, text, path=""):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
      cp.read_string(text)
    except configparser.Error as e:
      raise ConfigError(f"{path or 'config'}: {e}")
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in KEYS.items()}
    for section in cp.sections():
      if section not in KEYS: raise ConfigError(f"unknown section [{section}]")
      for key, raw in cp.items(section):
        if key not in KEYS[section]: raise ConfigError(f"[{section}] unknown key {key!r}")
        values[section][key] = _parse_value(KEYS[section][key][0], raw, f"[{section}] {key}:")
    canon = repr(sorted((s, sorted(v.items())) for s, v in values.items()))
    return cls(values, path, hashlib.sha1(canon.encode("utf-8")).hexdigest()[:12])

  @classmethod
  def load(cls, name):
    path = resolve_config(name)
    with open(path) as f:
      return cls.from_text(f.read(), path)

  def override(self, section, key, value):
    values = {s: dict(v) for s, v in self.values.items()}
    values[section][key] = value
    canon = repr(sorted((s, sorted(v.items())) for s, v in values.items()))
    return RunConfig(values, self.path, hashlib.sha1(canon.encode("utf-8")).hexdigest()[:12])

  def require(self, section, key):
    v = self.values[section][key]
    if v is None: raise ConfigError(f"[{section}] {key} is required")
    return v

  # ***** builders *****

  def _build(self, section, fn, *args, **kwargs):
    try:
      return fn(*args, **kwargs)
    except ConfigError:
      raise
    except GhostError as e:
      raise ConfigError(f"[{section}] {e}")

  def spectral_amplitude(self):
    from tinyghost.physics import make_spectral_amplitude
    s = self["source"]
    table = s["table"]
    if table is not None and not os.path.isabs(table): table = os.path.join(os.path.dirname(self.path), table)
    return self._build("source", make_spectral_amplitude, s["shape"], s["signal_wavelength"], s["idler_wavelength"],
                       s["bandwidth"], s["grid_points"], s["order"], s["pump_wavelength"], s["bandwidth_reference"], table)

  def bench(self):
    from tinyghost.optics import OpticalBench
    b, s = self["bench"], self["source"]
    args = (b["grooves"], b["focal_length"], s["signal_wavelength"], s["idler_wavelength"])
    kwargs = dict(bandwidth=s["bandwidth"], beam_diameter=b["beam_diameter"])
    if b["incident_angle"] is not None:
      return self._build("bench", OpticalBench, b["period"], b["incident_angle"], *args, **kwargs)
    return self._build("bench", OpticalBench.from_center_angle, b["period"], b["center_angle"], *args, **kwargs)

  def fibers(self):
    from tinyghost.physics import FiberChannel
    f, s = self["fibers"], self["source"]
    def arm(role, wavelength):
      return self._build("fibers", FiberChannel.from_dispersion, f[role+"_dispersion"], wavelength, f[role+"_length"],
                         beta1=f[role+"_group_index"]/C, attenuation=f[role+"_attenuation"]*1e3, role=role)
    return arm("signal", s["signal_wavelength"]), arm("idler", s["idler_wavelength"])

  def detectors(self):
    from tinyghost.simulator import DetectorModel
    d = self["detectors"]
    return tuple(self._build("detectors", DetectorModel, d[a+"_efficiency"], d[a+"_jitter"], d[a+"_dark_rate"],
                             d["dead_time"], d["bin_width"]) for a in ("signal", "idler"))

  def timing_resolution(self):
    d = self["detectors"]
    if d["timing_resolution"] is not None: return d["timing_resolution"]
    # both jitters plus the uniform quantization of each channel, as a gaussian FWHM
    return np.sqrt(d["signal_jitter"]**2 + d["idler_jitter"]**2 + 2*FWHM_PER_SIGMA**2*d["bin_width"]**2/12.)

  def sim_config(self, seed=None):
    from tinyghost.simulator import SimConfig
    s, f, r = self["source"], self["fibers"], self["run"]
    seed = seed if seed is not None else self.require("run", "seed")
    signal, idler = self.fibers()
    return self._build("run", SimConfig, signal, idler, s["rep_rate"], s["pairs_per_pulse"], r["duration"], seed,
                       f["drift"], ((0., 0.), (r["duration"], f["temperature_rise"])), self["bench"]["grating_blur"])

  def mask(self):
    from tinyghost.scene import PATTERNS, make_pattern, load_mask
    sc = self["scene"]
    pattern = self.require("scene", "pattern")
    if pattern in PATTERNS:
      return self._build("scene", make_pattern, pattern, sc["pitch"], sc["line_width"], sc["separation"], sc["checker_size"])
    if not os.path.isabs(pattern): pattern = os.path.join(os.path.dirname(self.path), pattern)
    return self._build("scene", load_mask, pattern, sc["pitch"])

  def plan(self, mask, bench):
    from tinyghost.scene import make_scan_plan
    return self._build("scan", make_scan_plan, mask, bench, self["scan"]["step"])
