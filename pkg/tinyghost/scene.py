import re
from dataclasses import dataclass
import numpy as np
from PIL import Image
from tinyghost.helpers import SceneError, FWHM_PER_SIGMA, warn

# **** PGM ****

def read_pgm(fn):
  """8-bit P2/P5 PGM as an int64 raster. The header is checked here, Pillow decodes the pixels."""
  with open(fn, "rb") as f:
    dat = f.read(1024)
  tokens, pos = [], 0
  # magic, width, height, maxval with # comments in between
  while len(tokens) < 4:
    m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)").match(dat, pos)
    if m is None: raise SceneError(f"{fn}: malformed PGM header")
    tokens.append(m.group(1))
    pos = m.end()
  magic = tokens[0]
  if magic not in (b"P2", b"P5"): raise SceneError(f"{fn}: not a P2/P5 PGM, magic is {magic!r}")
  try:
    w, h, maxval = (int(t) for t in tokens[1:])
  except ValueError:
    raise SceneError(f"{fn}: malformed PGM header {tokens[1:]!r}")
  if w <= 0 or h <= 0: raise SceneError(f"{fn}: zero dimensions {w}x{h}")
  if maxval != 255: raise SceneError(f"{fn}: max value must be 255, got {maxval}")
  try:
    with Image.open(fn) as im:
      px = np.asarray(im, dtype=np.int64)
  except (OSError, ValueError, SyntaxError) as e:
    raise SceneError(f"{fn}: {e}")
  if px.shape != (h, w): raise SceneError(f"{fn}: expected {h}x{w} pixels, decoded {px.shape}")
  return px, maxval

def write_pgm(fn, img):
  img = np.asarray(img)
  assert img.ndim == 2 and img.min() >= 0 and img.max() <= 255, f"PGM needs a 2-D raster in 0..255, got {img.shape}"
  with open(fn, "w") as f:
    f.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
    for row in img.astype(np.int64):
      f.write(" ".join(str(v) for v in row) + "\n")

# **** masks ****

class ObjectMask:
  """Amplitude reflectivity raster. Row i, column j covers [x0 + j·pitch, x0 + (j+1)·pitch) × [y0 + i·pitch, ...)."""
  def __init__(self, r, pitch, origin=None):
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or 0 in r.shape: raise SceneError(f"mask must be a non-empty 2-D raster, got shape {r.shape}")
    if r.min() < 0 or r.max() > 1: raise SceneError("reflectivity must lie in [0, 1]")
    if not pitch > 0: raise SceneError(f"pixel pitch must be positive, got {pitch}")
    self.r, self.pitch = r, float(pitch)
    # centred on the illuminating line by default
    self.origin = (-0.5*self.width, 0.) if origin is None else tuple(origin)
    self.r.setflags(write=False)

  def __repr__(self):
    return f"<ObjectMask {self.r.shape[1]}x{self.r.shape[0]} px at {self.pitch*1e6:g} um>"

  @property
  def width(self): return self.r.shape[1]*self.pitch
  @property
  def height(self): return self.r.shape[0]*self.pitch

  def row_of(self, y):
    return int(np.floor((y - self.origin[1])/self.pitch))

def load_mask(fn, pitch=1e-6, origin=None):
  img, maxval = read_pgm(fn)
  return ObjectMask(img/255., pitch, origin)

def _span(a, b, pitch):
  # pixels whose centres fall in [a, b)
  return int(np.ceil(a/pitch - 0.5 - 1e-9)), int(np.ceil(b/pitch - 0.5 - 1e-9))

def _rect(r, pitch, x0, x1, y0, y1):
  (i0, i1), (j0, j1) = _span(y0, y1, pitch), _span(x0, x1, pitch)
  r[max(i0, 0):i1, max(j0, 0):j1] = 1.

PATTERNS = ("bars", "narrow-line", "double-line", "checker", "mirror")

def make_pattern(name, pitch=1e-6, line_width=13e-6, separation=50e-6, checker_size=20e-6):
  """Built-in masks on a 150 um x 140 um field (mirror is wider than the illuminated line)."""
  w, h = 150e-6, 140e-6
  if name == "mirror": w = 300e-6
  cols, rows = int(round(w/pitch)), int(round(h/pitch))
  r = np.zeros((rows, cols))
  if name == "bars":
    _rect(r, pitch, 0., 60e-6, 0., h)
    _rect(r, pitch, 90e-6, w, 30e-6, 110e-6)
  elif name == "narrow-line":
    _rect(r, pitch, 0.5*(w-line_width), 0.5*(w+line_width), 0., h)
  elif name == "double-line":
    for c in (0.5*(w-separation), 0.5*(w+separation)):
      _rect(r, pitch, c-0.5*line_width, c+0.5*line_width, 0., h)
  elif name == "checker":
    y, x = (np.indices(r.shape) + 0.5)*pitch
    r[:] = (np.floor(x/checker_size) + np.floor(y/checker_size)) % 2
  elif name == "mirror":
    r[:] = 1.
  else:
    raise SceneError(f"unknown pattern {name!r}, expected one of {PATTERNS}")
  return ObjectMask(r, pitch)

# **** illuminating line ****

class LineReflectivity:
  """r(x) along one scan row. x is measured from the spot of the centre frequency."""
  def __init__(self, profile, pitch, x0, antialias=False, blur=0.):
    self.profile, self.pitch, self.x0 = np.asarray(profile, dtype=np.float64), pitch, x0
    self.antialias, self.blur = antialias, blur
    if blur > 0:
      # |r|² under a gaussian spot, sampled at a finer pitch
      sigma = blur/FWHM_PER_SIGMA
      step = min(pitch, sigma)/4.
      pad = 5.*sigma
      self._xs = np.arange(x0 - pad, x0 + len(self.profile)*pitch + pad, step)
      xk = np.arange(-pad, pad + 0.5*step, step)
      kern = np.exp(-0.5*(xk/sigma)**2)
      kern /= kern.sum()
      self._r2 = np.sqrt(np.maximum(np.convolve(self._sample(self._xs)**2, kern, mode="same"), 0.))

  @classmethod
  def constant(cls, value):
    return cls(np.array([value]), np.inf, -np.inf)

  def _sample(self, x):
    x = np.asarray(x, dtype=np.float64)
    if np.isinf(self.pitch): return np.full(x.shape, self.profile[0])
    if self.antialias:
      # box filter of one pixel, zero beyond half a pixel outside the mask
      centers = self.x0 + (np.arange(len(self.profile)) + 0.5)*self.pitch
      xp = np.concatenate([[centers[0] - self.pitch], centers, [centers[-1] + self.pitch]])
      fp = np.concatenate([[0.], self.profile, [0.]])
      return np.interp(x, xp, fp, left=0., right=0.)
    col = np.floor((x - self.x0)/self.pitch)
    inside = (col >= 0) & (col < len(self.profile))
    return np.where(inside, self.profile[np.clip(col, 0, len(self.profile)-1).astype(np.int64)], 0.)

  def __call__(self, x):
    if self.blur > 0:
      return np.interp(x, self._xs, self._r2, left=0., right=0.)
    return self._sample(x)

def reflectivity_along_line(mask, row_offset, bench=None, antialias=False, blur=False):
  """Nearest-neighbour r(x) of the mask row under the illuminating line, zero off the mask.

  `blur` is a spot FWHM in metres, or True for the grating-limited spot of `bench`.
  """
  if blur is True:
    assert bench is not None, "blur=True needs the bench for the grating spot"
    blur = bench.spot_width
  i = mask.row_of(row_offset)
  if not 0 <= i < mask.r.shape[0]:
    return LineReflectivity(np.zeros(1), mask.pitch, mask.origin[0])
  return LineReflectivity(mask.r[i], mask.pitch, mask.origin[0], antialias=antialias, blur=float(blur))

# **** scanning ****

@dataclass(frozen=True)
class ScanPlan:
  step: float
  rows: int
  line_length: float
  line_pitch: float
  first_row: float

  @property
  def offsets(self):
    return self.first_row + self.step*np.arange(self.rows)

def make_scan_plan(mask, bench, step):
  if not step > 0: raise SceneError(f"scan step must be positive, got {step}")
  if step > mask.height:
    warn(f"scan step {step*1e6:g} um exceeds the mask height {mask.height*1e6:g} um, scanning a single row")
    return ScanPlan(step, 1, bench.line_length, mask.pitch, mask.origin[1] + 0.5*mask.height)
  rows = max(1, int(np.ceil(mask.height/step - 1e-9)))
  return ScanPlan(step, rows, bench.line_length, mask.pitch, mask.origin[1] + 0.5*step)
