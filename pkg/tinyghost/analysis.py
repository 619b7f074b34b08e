import os
from dataclasses import dataclass
import numpy as np
from numba import jit
from joblib import Parallel, delayed
from scipy.stats import pearsonr
from tinyghost.helpers import C, AnalysisError, ProfileOp, n_jobs
from tinyghost.optics import delay_of_position
from tinyghost.scene import write_pgm

# **** coincidence histogram ****

class CoincidenceHistogram:
  """Counts of τ = t_s − t_i. Bin k covers integer bin differences lo+k·w ... lo+(k+1)·w−1."""
  def __init__(self, edges, counts, singles=(0, 0), duration=0., bin_width=None):
    self.edges, self.counts = np.asarray(edges, dtype=np.float64), np.asarray(counts)
    self.singles, self.duration = tuple(singles), duration
    self.bin_width = bin_width if bin_width is not None else self.edges[1]-self.edges[0]
    assert len(self.edges) == len(self.counts)+1, f"{len(self.edges)} edges for {len(self.counts)} bins"
    assert np.all(np.diff(self.edges) > 0), "τ edges must be strictly increasing"

  def __repr__(self):
    return f"<CoincidenceHistogram {len(self.counts)} bins, {self.total:g} coincidences>"

  @property
  def tau(self): return 0.5*(self.edges[1:] + self.edges[:-1])
  @property
  def values(self): return self.counts.astype(np.float64)
  @property
  def total(self): return self.counts.sum()

  def centroid(self):
    return np.average(self.tau, weights=self.values) if self.total > 0 else np.nan

  def fwhm(self, floor=0.):
    """Width of the tallest peak at half height above `floor`, crossings interpolated linearly."""
    v = self.values - floor
    k = int(np.argmax(v))
    half = 0.5*v[k]
    if not half > 0: return 0.
    l = k
    while l > 0 and v[l-1] >= half: l -= 1
    r = k
    while r < len(v)-1 and v[r+1] >= half: r += 1
    t = self.tau
    left = t[l] if l == 0 else t[l-1] + (half - v[l-1])/(v[l] - v[l-1])*(t[l] - t[l-1])
    right = t[r] if r == len(v)-1 else t[r] + (v[r] - half)/(v[r] - v[r+1])*(t[r+1] - t[r])
    return right - left

  def rebin(self, factor):
    # coarser bins by an integer factor, padding with empty bins at the top
    factor = int(factor)
    assert factor >= 1, f"rebin factor must be a positive integer, got {factor}"
    pad = (-len(self.counts)) % factor
    counts = np.concatenate([self.counts, np.zeros(pad, dtype=self.counts.dtype)]).reshape(-1, factor).sum(axis=1)
    step = self.edges[1]-self.edges[0]
    edges = self.edges[0] + step*factor*np.arange(len(counts)+1)
    return CoincidenceHistogram(edges, counts, self.singles, self.duration, self.bin_width)

  def to_csv(self, fn):
    np.savetxt(fn, np.c_[self.tau*1e12, self.counts], delimiter=",", header="tau_ps,counts", comments="", fmt="%.17g")

@jit(nopython=True)
def _sweep(s, i, lo, hi, w, out):
  # idlers with lo <= s-i < hi sit in (s-hi, s-lo]; both cursors only move forward
  j0 = 0
  for k in range(len(s)):
    while j0 < len(i) and i[j0] <= s[k] - hi: j0 += 1
    j = j0
    while j < len(i) and i[j] <= s[k] - lo:
      out[(s[k] - i[j] - lo)//w] += 1
      j += 1
  return out

def _sweep_part(s, i, lo, hi, w, nbins):
  # idlers that can pair with this slice of signals: one window beyond either end
  a, b = np.searchsorted(i, s[0] - hi, side="right"), np.searchsorted(i, s[-1] - lo, side="right")
  return _sweep(s, i[a:b], lo, hi, w, np.zeros(nbins, dtype=np.int64))

def tau_grid(bin_width, tau_range, window=None):
  """Integer bin-difference range (lo, hi, w) covering tau_range in windows of w recorder bins."""
  w = 1 if window is None else int(round(window/bin_width))
  if w < 1 or (window is not None and abs(w*bin_width - window) > 1e-6*bin_width):
    raise AnalysisError(f"window {window} s is not a whole number of {bin_width} s recorder bins")
  lo = int(round(tau_range[0]/bin_width))
  nbins = max(1, int(np.ceil((tau_range[1]-tau_range[0])/(w*bin_width) - 1e-9)))
  return lo, lo + nbins*w, w

def coincidences(signal, idler, window=None, tau_range=(-12.5e-9, 12.5e-9), workers=1):
  """Histogram every (signal, idler) pair with τ in range, by a two-cursor sweep."""
  if not np.isclose(signal.bin_width, idler.bin_width, rtol=1e-12, atol=0):
    raise AnalysisError(f"recorder bins differ: {signal.bin_width} s and {idler.bin_width} s")
  bw = signal.bin_width
  lo, hi, w = tau_grid(bw, tau_range, window)
  nbins = (hi-lo)//w
  with ProfileOp("coincidences", [signal.bins, idler.bins]):
    counts = np.zeros(nbins, dtype=np.int64)
    if len(signal) and len(idler):
      nparts = int(workers) if workers else (os.cpu_count() or 1)
      chunks = [c for c in np.array_split(signal.bins, nparts) if len(c)]
      parts = Parallel(n_jobs=n_jobs(workers))(delayed(_sweep_part)(c, idler.bins, lo, hi, w, nbins) for c in chunks)
      counts = np.sum(parts, axis=0)
  edges = (lo + w*np.arange(nbins+1) - 0.5)*bw
  return CoincidenceHistogram(edges, counts, (len(signal), len(idler)), max(signal.duration, idler.duration), bw)

def coincidence_to_accidental(signal, idler, rep_rate, tau_range, window=None, shifts=(1, 2, 3)):
  """True coincidences in the band over the mean of the same band displaced by whole pump periods."""
  true = coincidences(signal, idler, window, tau_range).total
  period = 1./rep_rate
  acc = [coincidences(signal, idler, window, (tau_range[0]+k*period, tau_range[1]+k*period)).total
         for s in shifts for k in (s, -s)]
  acc = np.mean(acc)
  return true/acc if acc > 0 else np.inf

def subtract_background(hist, band):
  """Remove a flat floor estimated from the bins outside the τ interval `band`."""
  outside = (hist.tau < band[0]) | (hist.tau >= band[1])
  floor = hist.values[outside].mean() if outside.any() else 0.
  return CoincidenceHistogram(hist.edges, hist.values - floor, hist.singles, hist.duration, hist.bin_width)

# **** calibration ****

@dataclass(frozen=True)
class Calibration:
  origin: float   # τ of the line centre, s
  scale: float    # |dτ/dx|, s/m
  sign: float     # +1 if τ grows with x

  def x_of_tau(self, tau):
    return (np.asarray(tau) - self.origin)/(self.sign*self.scale)

  def tau_of_x(self, x):
    return self.origin + self.sign*self.scale*np.asarray(x)

def calibrate(bench, idler_fiber, reference):
  """τ origin from the band centroid of a mirror reference, scale and orientation from the optics.

  `reference` is a CoincidenceHistogram or a G2Profile.
  """
  tau, v = reference.tau, np.asarray(reference.values, dtype=np.float64)
  # the lowest decile of the range lies off the band
  bg, peak = (np.percentile(v, 10), v.max()) if len(v) else (0., 0.)
  if not peak > 0 or peak <= 10*bg:
    raise AnalysisError(f"reference band not found: peak {peak:g} against background {bg:g}")
  band = v - bg > 0.5*(peak - bg)
  origin = np.average(tau[band], weights=v[band] - bg)
  # τ = t_s − t_i moves opposite to the idler delay
  slope = -float(delay_of_position(bench, idler_fiber, 1.))
  if slope == 0: raise AnalysisError("idler arm has no dispersion, τ does not encode position")
  return Calibration(float(origin), abs(slope), float(np.sign(slope)))

# **** profiles and images ****

class LineProfile:
  def __init__(self, edges, counts):
    self.edges, self.counts = np.asarray(edges, dtype=np.float64), np.asarray(counts, dtype=np.float64)
    assert len(self.edges) == len(self.counts)+1

  @property
  def x(self): return 0.5*(self.edges[1:] + self.edges[:-1])

  def to_csv(self, fn):
    np.savetxt(fn, np.c_[self.x*1e6, self.counts], delimiter=",", header="x_um,counts", comments="", fmt="%.17g")

def line_profile(hist, calibration, x_pitch, x_range=None):
  """Map τ bins to x and rebin at x_pitch, spreading each bin's counts uniformly over its x interval."""
  with ProfileOp("line_profile", [hist.counts]):
    xe, c = calibration.x_of_tau(hist.edges), hist.values
    if calibration.sign < 0: xe, c = xe[::-1], c[::-1]
    cum = np.concatenate([[0.], np.cumsum(c)])
    if x_range is None:
      lo, hi = np.floor(xe[0]/x_pitch)*x_pitch, np.ceil(xe[-1]/x_pitch)*x_pitch
    else:
      lo, hi = x_range
    edges = lo + x_pitch*np.arange(int(round((hi-lo)/x_pitch))+1)
    return LineProfile(edges, np.diff(np.interp(edges, xe, cum)))

def centered_range(line_length, x_pitch):
  half = np.ceil(0.5*line_length/x_pitch)*x_pitch
  return -half, half

class ImageRaster:
  def __init__(self, counts, x_edges, row_pitch):
    self.counts, self.x_edges, self.row_pitch = np.asarray(counts, dtype=np.float64), np.asarray(x_edges), row_pitch
    assert self.counts.ndim == 2 and np.all(self.counts >= 0), "image counts must be a non-negative 2-D raster"

  def __repr__(self):
    return f"<ImageRaster {self.counts.shape[0]} rows x {self.counts.shape[1]} bins>"

  @property
  def x_pitch(self): return self.x_edges[1]-self.x_edges[0]
  @property
  def x(self): return 0.5*(self.x_edges[1:] + self.x_edges[:-1])

def assemble_image(profiles, plan, normalize=False):
  if len(profiles) != plan.rows: raise AnalysisError(f"{len(profiles)} profiles for a {plan.rows}-row scan")
  if len({len(p.counts) for p in profiles}) > 1: raise AnalysisError("profiles have different lengths")
  counts = np.stack([np.maximum(p.counts, 0.) for p in profiles])
  if normalize:
    peak = counts.max(axis=1, keepdims=True)
    counts = np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)
  return ImageRaster(counts, profiles[0].edges, plan.step)

def write_image(raster, fn):
  """PGM P2 scaled so the maximum is 255, plus the raw counts as CSV next to it."""
  peak = raster.counts.max()
  scaled = np.zeros(raster.counts.shape, dtype=np.int64) if peak <= 0 else np.rint(raster.counts*255./peak).astype(np.int64)
  write_pgm(fn, scaled)
  csv = os.path.splitext(fn)[0] + ".csv"
  np.savetxt(csv, raster.counts, delimiter=",", fmt="%.17g")
  return fn, csv

# **** joint spectral density ****

@jit(nopython=True)
def _slot_pairs(a, b):
  # all index pairs with equal slot, a and b sorted
  n, j0 = 0, 0
  for k in range(len(a)):
    while j0 < len(b) and b[j0] < a[k]: j0 += 1
    j = j0
    while j < len(b) and b[j] == a[k]:
      n += 1
      j += 1
  ia, ib = np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64)
  n, j0 = 0, 0
  for k in range(len(a)):
    while j0 < len(b) and b[j0] < a[k]: j0 += 1
    j = j0
    while j < len(b) and b[j] == a[k]:
      ia[n], ib[n] = k, j
      n += 1
      j += 1
  return ia, ib

class JointSpectrum:
  def __init__(self, lambda_s, lambda_i, bins=64, lambda_range=None):
    self.lambda_s, self.lambda_i = np.asarray(lambda_s), np.asarray(lambda_i)
    self.counts, self.edges_s, self.edges_i = np.histogram2d(self.lambda_s, self.lambda_i, bins=bins, range=lambda_range)

  def __len__(self): return len(self.lambda_s)

  def pearson(self):
    return pearsonr(self.lambda_s, self.lambda_i)[0]

  def widths(self):
    # full width of the uniform band with the same variance
    return np.sqrt(12.)*np.std(self.lambda_s), np.sqrt(12.)*np.std(self.lambda_i)

  def to_csv(self, fn):
    cs, ci = 0.5*(self.edges_s[1:]+self.edges_s[:-1]), 0.5*(self.edges_i[1:]+self.edges_i[:-1])
    S, I = np.meshgrid(cs, ci, indexing="ij")
    np.savetxt(fn, np.c_[S.ravel()*1e9, I.ravel()*1e9, self.counts.ravel()], delimiter=",",
               header="lambda_s_nm,lambda_i_nm,counts", comments="", fmt="%.10g")

def _slot(stream, fiber, rep_rate):
  t = stream.times - fiber.beta1*fiber.length
  slot = np.rint(t*rep_rate).astype(np.int64)
  return slot, t - slot/rep_rate

def jsd_2d(signal, idler, signal_fiber, idler_fiber, rep_rate, pump_frequency, center_detuning, bins=64, lambda_range=None):
  """Joint spectrum from both arms dispersed: each event goes to its nearest pump slot and its
  delay within the slot is read back as a frequency through that arm's delay law."""
  if signal_fiber.gdd == 0 or idler_fiber.gdd == 0:
    raise AnalysisError("both arms need dispersion to map arrival time to wavelength")
  with ProfileOp("jsd_2d", [signal.bins, idler.bins]):
    ss, rs = _slot(signal, signal_fiber, rep_rate)
    si, ri = _slot(idler, idler_fiber, rep_rate)
    a, b = _slot_pairs(ss, si)
    omega_s = center_detuning + rs[a]/signal_fiber.gdd
    omega_i = center_detuning - ri[b]/idler_fiber.gdd
    return JointSpectrum(2.*np.pi*C/(pump_frequency + omega_s), 2.*np.pi*C/(pump_frequency - omega_i), bins, lambda_range)
