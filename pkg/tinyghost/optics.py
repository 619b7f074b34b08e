from dataclasses import dataclass
import numpy as np
from tinyghost.helpers import C, PhysicsError, omega_of_wavelength

GRATING_TOLERANCE = 1e-12

class OpticalBench:
  """Grating, lens and carrier wavelengths of the illumination arm.

  The grating obeys p(sin θ − sin θ_i) = λ, the lens puts the object in its back focal
  plane, so frequency maps to position along a line of length Δλ·l/(p cos θ₀).
  """
  def __init__(self, period, incident_angle, grooves, focal_length, signal_wavelength, idler_wavelength,
               bandwidth=16e-9, beam_diameter=None):
    if not period > 0: raise PhysicsError(f"grating period must be positive, got {period}")
    if not focal_length > 0: raise PhysicsError(f"focal length must be positive, got {focal_length}")
    if not grooves >= 1: raise PhysicsError(f"need at least one groove in the beam, got {grooves}")
    if not 0 < signal_wavelength < idler_wavelength:
      raise PhysicsError(f"need 0 < λ_s0 < λ_i0, got {signal_wavelength} and {idler_wavelength}")
    self.period, self.incident_angle, self.grooves, self.focal_length = float(period), float(incident_angle), float(grooves), float(focal_length)
    self.signal_wavelength, self.idler_wavelength = float(signal_wavelength), float(idler_wavelength)
    self.bandwidth, self.beam_diameter = float(bandwidth), beam_diameter
    for lam in (signal_wavelength-0.5*bandwidth, signal_wavelength+0.5*bandwidth):
      diffraction_angle(self, lam)
    self.center_angle = diffraction_angle(self, signal_wavelength)

  @classmethod
  def from_center_angle(cls, period, center_angle, grooves, focal_length, signal_wavelength, idler_wavelength, **kwargs):
    s = np.sin(center_angle) - signal_wavelength/period
    if abs(s) > 1: raise PhysicsError(f"no incident angle puts {signal_wavelength*1e9:.2f} nm at {np.degrees(center_angle):.3f}°")
    return cls(period, np.arcsin(s), grooves, focal_length, signal_wavelength, idler_wavelength, **kwargs)

  def __repr__(self):
    return (f"<OpticalBench p={self.period*1e6:.3f} um θ_i={np.degrees(self.incident_angle):.2f}° "
            f"θ₀={np.degrees(self.center_angle):.2f}° N={self.grooves:g} l={self.focal_length*1e3:.2f} mm>")

  @property
  def pump_frequency(self):
    return 0.5*(omega_of_wavelength(self.signal_wavelength) + omega_of_wavelength(self.idler_wavelength))

  @property
  def center_detuning(self):
    return 0.5*(omega_of_wavelength(self.signal_wavelength) - omega_of_wavelength(self.idler_wavelength))

  @property
  def grating_residual(self):
    return self.period*(np.sin(self.center_angle) - np.sin(self.incident_angle)) - self.signal_wavelength

  @property
  def dispersion_length(self):
    # p cos θ₀, wavelength per unit angle
    return self.period*np.cos(self.center_angle)

  @property
  def line_length(self):
    return self.bandwidth*self.focal_length/self.dispersion_length

  @property
  def spot_width(self):
    # grating-limited spot of one frequency on the object
    return self.focal_length*resolving_power(self)/self.dispersion_length

def diffraction_angle(bench, lam):
  s = np.asarray(lam, dtype=np.float64)/bench.period + np.sin(bench.incident_angle)
  if np.any(np.abs(s) > 1 + GRATING_TOLERANCE):
    raise PhysicsError(f"first order is evanescent for λ up to {np.max(lam)*1e9:.3f} nm, |λ/p + sin θ_i| = {np.max(np.abs(s)):.6f} > 1")
  return np.arcsin(np.clip(s, -1., 1.))

def position_of_detuning(bench, omega, omega0=None, exact=False):
  """Position on the object, relative to the centre frequency's spot.

  First order in Ω−Ω₀ unless `exact`, which runs the full grating equation and x = l·tan(θ−θ₀).
  """
  omega0 = bench.center_detuning if omega0 is None else omega0
  omega = np.asarray(omega, dtype=np.float64)
  ws0 = bench.pump_frequency + omega0
  if exact:
    theta = diffraction_angle(bench, 2.*np.pi*C/(bench.pump_frequency + omega))
    return bench.focal_length*np.tan(theta - diffraction_angle(bench, 2.*np.pi*C/ws0))
  return -2.*np.pi*C*bench.focal_length*(omega-omega0)/(ws0**2*bench.dispersion_length)

def detuning_of_position(bench, x, check=False):
  x = np.asarray(x, dtype=np.float64)
  ws0 = bench.pump_frequency + bench.center_detuning
  omega = bench.center_detuning - ws0**2*bench.dispersion_length*x/(2.*np.pi*C*bench.focal_length)
  if check: return omega, np.abs(x) <= 0.5*bench.line_length
  return omega

def delay_of_position(bench, idler_fiber, dx):
  """Idler arrival-time shift for an object shift dx. The coincidence τ moves by the opposite amount."""
  ratio = (bench.idler_wavelength/bench.signal_wavelength)**2
  return -ratio*bench.dispersion_length*idler_fiber.dispersion*np.asarray(dx, dtype=np.float64)/bench.focal_length

def resolving_power(bench):
  return bench.signal_wavelength/bench.grooves

# **** resolution budget ****

@dataclass(frozen=True)
class ResolutionBudget:
  dlam: float    # grating resolving power, m
  dtau1: float   # point spread of the coincidence peak from the grating, s
  dtau2: float   # timing jitter of detection, s
  dx: float      # spatial resolution, m
  scale: float   # coincidence delay per object shift, s/m

  def rows(self):
    return [("delta_lambda", self.dlam*1e9, "nm"), ("delta_tau1", self.dtau1*1e12, "ps"),
            ("delta_tau2", self.dtau2*1e12, "ps"), ("delta_x", self.dx*1e6, "um"),
            ("scale", self.scale*1e12*1e-6, "ps/um")]

  def to_csv(self, fn):
    with open(fn, "w") as f:
      f.write("term,value,units\n")
      for term, value, units in self.rows(): f.write(f"{term},{value:.10g},{units}\n")

def spatial_resolution(bench, d, dtau2):
  """Quadrature sum of the grating limit and the timing jitter mapped through d."""
  if d == 0: raise PhysicsError("resolution budget is undefined without dispersion")
  d = abs(d)
  dlam = resolving_power(bench)
  dx = bench.focal_length/bench.dispersion_length*np.sqrt(dlam**2 + (dtau2/d)**2)
  scale = (bench.idler_wavelength/bench.signal_wavelength)**2*bench.dispersion_length*d/bench.focal_length
  return ResolutionBudget(dlam, dlam*d, dtau2, dx, scale)
