import numpy as np
from tinyghost.physics import g2_analytic, g2_bruteforce
from tinyghost.scene import make_pattern, reflectivity_along_line

SCALES = (1, 4, 16)
INFO_SCALE = 0.01
PATTERNS = ("mirror", "narrow-line", "double-line")

def linf_deviation(a, b):
  """Largest gap between two profiles after each is scaled to a unit peak."""
  a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
  pa, pb = a.max(initial=0.), b.max(initial=0.)
  if pa == 0 and pb == 0: return 0.
  if pa == 0 or pb == 0: return 1.
  return float(np.max(np.abs(a/pa - b/pb)))

def oracle_tau(f, gdd, points=257):
  # the whole spectral grid mapped to delay, with 10% margin
  half = 1.1*abs(gdd)*0.5*(f.omega[-1]-f.omega[0])
  return np.linspace(-half, half, points)

def compare(f, reflectivity, bench, fiber, points=257, workers=1):
  tau = oracle_tau(f, fiber.gdd, points)
  exact = g2_bruteforce(f, reflectivity, bench, fiber, tau, workers=workers)
  approx = g2_analytic(f, reflectivity, bench, fiber, tau, strict=False)
  return linf_deviation(exact.values, approx.values)

class OracleReport:
  def __init__(self, rows):
    self.rows = rows   # (pattern, scale, deviation)

  def deviations(self, pattern):
    return [d for p, s, d in self.rows if p == pattern and s in SCALES]

  def converges(self):
    """Deviation strictly falls as dispersion grows, for every pattern."""
    pats = {p for p, _, _ in self.rows}
    return all(np.all(np.diff(self.deviations(p)) < 0) for p in pats)

  def to_csv(self, fn):
    with open(fn, "w") as f:
      f.write("pattern,scale,deviation\n")
      for p, s, d in self.rows: f.write(f"{p},{s:g},{d:.6e}\n")

def stationary_phase_sweep(f, bench, fiber, patterns=PATTERNS, scales=SCALES, info_scale=INFO_SCALE,
                           points=257, workers=1, line_width=13e-6, separation=50e-6):
  """Brute-force against stationary-phase G² for each test object and dispersion multiple.

  The objects are seen through the grating-limited spot, so both paths integrate the same
  band-limited reflectivity. `info_scale` adds a row below the stationary-phase regime, on the
  bare object: the spot would smooth away the edges where the approximation fails.
  """
  rows = []
  for name in patterns:
    mask = make_pattern(name, line_width=line_width, separation=separation)
    y = mask.origin[1] + 0.5*mask.height
    refl = reflectivity_along_line(mask, y, bench, blur=True)
    for s in scales:
      rows.append((name, s, compare(f, refl, bench, fiber.scaled(s), points, workers)))
    if info_scale:
      rows.append((name, info_scale, compare(f, reflectivity_along_line(mask, y), bench, fiber.scaled(info_scale), points, workers)))
  return OracleReport(rows)
