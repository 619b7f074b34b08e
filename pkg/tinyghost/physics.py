import os
import copy
from dataclasses import dataclass, replace
import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import czt
from joblib import Parallel, delayed
from tinyghost.helpers import C, PhysicsError, ProfileOp, n_jobs, omega_of_wavelength, detuning_span
from tinyghost.optics import position_of_detuning
from tinyghost import ops_gpu

SHAPES = ("gaussian", "flat-top", "tabulated")
PUMP_TOLERANCE = 1e-3      # relative mismatch allowed between a stated pump and the frequency midpoint
EDGE_FLOOR = 1e-6          # |f|² at the grid edges, relative to the peak
STATIONARY_RATIO = 10.     # dispersed spread over transform-limited width

# **** spectral amplitude ****

class SpectralAmplitude:
  """Biphoton spectral amplitude f(Ω) on a uniform detuning grid.

  The signal photon sits at ω_p+Ω and the idler at ω_p−Ω. The envelope is stored
  normalized, Σ|f|²ΔΩ = 1, and a global phase is kept apart from it: it never
  reaches an intensity.
  """
  def __init__(self, omega, envelope, pump_frequency, center_detuning=None, shape="tabulated", global_phase=0.):
    omega, envelope = np.asarray(omega, dtype=np.float64), np.asarray(envelope, dtype=np.complex128)
    if omega.ndim != 1 or omega.shape != envelope.shape or len(omega) < 2:
      raise PhysicsError(f"detuning grid and amplitude must be matching 1-D arrays, got {omega.shape} and {envelope.shape}")
    steps = np.diff(omega)
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
      raise PhysicsError("detuning grid must be uniform and increasing")
    mid = 0.5*(omega[0]+omega[-1])
    if center_detuning is not None and abs(center_detuning-mid) > 1e-6*steps[0]:
      raise PhysicsError(f"grid is not symmetric about Ω₀={center_detuning:.6g} rad/s")
    if shape not in SHAPES: raise PhysicsError(f"unknown shape {shape!r}, expected one of {SHAPES}")
    spacing = (omega[-1]-omega[0])/(len(omega)-1)
    norm = np.sum(np.abs(envelope)**2)*spacing
    if not norm > 0: raise PhysicsError("spectral amplitude is identically zero")
    envelope = envelope/np.sqrt(norm)
    intensity = np.abs(envelope)**2
    if max(intensity[0], intensity[-1]) >= EDGE_FLOOR*intensity.max():
      raise PhysicsError(f"grid too narrow, |f|² at the edges is {max(intensity[0], intensity[-1])/intensity.max():.2e} of the peak")

    self.omega, self.envelope, self.spacing = omega, envelope, spacing
    self.pump_frequency, self.center_detuning = float(pump_frequency), float(mid if center_detuning is None else center_detuning)
    self.shape, self.global_phase = shape, float(global_phase)
    self.intensity = intensity
    for a in (self.omega, self.envelope, self.intensity): a.setflags(write=False)

  def __repr__(self):
    return f"<SpectralAmplitude {self.shape} with {len(self.omega)} points around Ω₀={self.center_detuning:.4e} rad/s>"

  @property
  def values(self):
    return self.envelope*np.exp(1j*self.global_phase)

  @property
  def signal_frequency(self): return self.pump_frequency + self.omega
  @property
  def idler_frequency(self): return self.pump_frequency - self.omega

  @property
  def rms_width(self):
    mean = np.sum(self.omega*self.intensity)*self.spacing
    return np.sqrt(np.sum((self.omega-mean)**2*self.intensity)*self.spacing)

  def with_global_phase(self, phase):
    ret = copy.copy(self)
    ret.global_phase = float(phase)
    return ret

  def envelope_at(self, omega):
    # linear interpolation, zero outside the grid
    omega = np.asarray(omega, dtype=np.float64)
    re = np.interp(omega, self.omega, self.envelope.real, left=0., right=0.)
    im = np.interp(omega, self.omega, self.envelope.imag, left=0., right=0.)
    return re + 1j*im

  def __call__(self, omega):
    return self.envelope_at(omega)*np.exp(1j*self.global_phase)

  def cdf_table(self):
    # piecewise constant density on bins centred at the grid points
    if not hasattr(self, "_cdf"):
      edges = np.append(self.omega - 0.5*self.spacing, self.omega[-1] + 0.5*self.spacing)
      cdf = np.concatenate([[0.], np.cumsum(self.intensity*self.spacing)])
      self._cdf = edges, cdf/cdf[-1]
    return self._cdf

  def cdf(self, omega):
    edges, cdf = self.cdf_table()
    return np.interp(omega, edges, cdf)

  # ***** tabulated import/export *****

  @classmethod
  def from_csv(cls, fn, pump_frequency):
    with open(fn) as f:
      header = f.readline().strip()
    if header != "detuning_rad_s,re,im":
      raise PhysicsError(f"{fn}: expected header 'detuning_rad_s,re,im', got {header!r}")
    dat = np.loadtxt(fn, delimiter=",", skiprows=1, ndmin=2)
    return cls(dat[:, 0], dat[:, 1] + 1j*dat[:, 2], pump_frequency, shape="tabulated")

  def to_csv(self, fn):
    v = self.values
    np.savetxt(fn, np.c_[self.omega, v.real, v.imag], delimiter=",", header="detuning_rad_s,re,im", comments="", fmt="%.17g")

def make_spectral_amplitude(shape, signal_wavelength, idler_wavelength, bandwidth, grid_points=1025, order=8,
                            pump_wavelength=None, reference="signal", table=None):
  """Build a normalized f(Ω) for a pair centred at the given signal/idler wavelengths.

  `bandwidth` is the full width at 1/e² of |f|², as a wavelength span on the `reference` arm.
  gaussian is the order 1 case of the super-Gaussian exp(−(2ΔΩ/W)^(2m)).
  """
  if signal_wavelength <= 0 or idler_wavelength <= signal_wavelength:
    raise PhysicsError(f"need 0 < λ_s0 < λ_i0, got {signal_wavelength:.6g} m and {idler_wavelength:.6g} m")
  ws, wi = omega_of_wavelength(signal_wavelength), omega_of_wavelength(idler_wavelength)
  pump, center = 0.5*(ws+wi), 0.5*(ws-wi)
  if pump_wavelength is not None:
    wp = omega_of_wavelength(pump_wavelength)
    if not signal_wavelength < pump_wavelength < idler_wavelength or abs(wp-pump) > PUMP_TOLERANCE*pump:
      raise PhysicsError(f"pump at {pump_wavelength*1e9:.3f} nm is not the frequency midpoint of signal and idler "
                         f"({2*np.pi*C/pump*1e9:.3f} nm): energy conservation requires ω_p = (ω_s0+ω_i0)/2")
  if shape == "tabulated":
    if table is None: raise PhysicsError("tabulated shape needs a table file")
    return SpectralAmplitude.from_csv(table, pump)
  if shape not in SHAPES: raise PhysicsError(f"unknown shape {shape!r}, expected one of {SHAPES}")
  if not bandwidth > 0: raise PhysicsError(f"bandwidth must be positive, got {bandwidth}")
  if grid_points < 64: raise PhysicsError(f"need at least 64 grid points, got {grid_points}")
  if reference not in ("signal", "idler"): raise PhysicsError(f"reference must be signal or idler, got {reference!r}")

  m = 1 if shape == "gaussian" else int(order)
  assert m >= 1, f"super-Gaussian order must be positive, got {m}"
  width = detuning_span(bandwidth, signal_wavelength if reference == "signal" else idler_wavelength)
  # out to where |f|² has fallen to 1e-7
  half = 0.5*width*(0.5*np.log(1e7))**(1./(2*m))
  omega = center + np.linspace(-half, half, int(grid_points))
  envelope = np.exp(-(2.*(omega-center)/width)**(2*m))
  return SpectralAmplitude(omega, envelope, pump, center, shape)

def sample_detuning(f, rng, size=None):
  """Draw Ω ~ |f(Ω)|² by inverse CDF, uniform within each grid bin."""
  rng = np.random.default_rng(rng)
  with ProfileOp("sample_detuning", [f.omega]):
    edges, cdf = f.cdf_table()
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    frac = (u - cdf[idx-1])/(cdf[idx] - cdf[idx-1])
    return edges[idx-1] + frac*f.spacing

# **** fibers ****

ROLES = ("signal", "idler")

def dispersion_convert(d, wavelength, length):
  """Dispersion parameter d (s/m, whole span) to β₂ (s²/m)."""
  if not wavelength > 0 or not length > 0:
    raise PhysicsError(f"wavelength and length must be positive, got {wavelength} m and {length} m")
  return -d*wavelength**2/(2.*np.pi*C*length)

def dispersion_parameter(beta2, wavelength, length):
  if not wavelength > 0 or not length > 0:
    raise PhysicsError(f"wavelength and length must be positive, got {wavelength} m and {length} m")
  return -(2.*np.pi*C/wavelength**2)*beta2*length

@dataclass(frozen=True)
class FiberChannel:
  length: float                 # m
  beta1: float = 0.             # s/m
  beta2: float = 0.             # s²/m
  wavelength: float = 1550e-9   # carrier of the arm, m
  attenuation: float = 0.       # dB/km
  role: str = "idler"
  beta0: float = 0.             # rad/m, a global phase, unobservable in every intensity

  def __post_init__(self):
    if self.length < 0: raise PhysicsError(f"fiber length must be non-negative, got {self.length}")
    if self.attenuation < 0: raise PhysicsError(f"attenuation must be non-negative, got {self.attenuation}")
    if not self.wavelength > 0: raise PhysicsError(f"carrier wavelength must be positive, got {self.wavelength}")
    if self.role not in ROLES: raise PhysicsError(f"role must be one of {ROLES}, got {self.role!r}")

  @classmethod
  def from_dispersion(cls, d, wavelength, length, **kwargs):
    beta2 = dispersion_convert(d, wavelength, length) if d != 0 else 0.
    return cls(length=length, beta2=beta2, wavelength=wavelength, **kwargs)

  @property
  def gdd(self): return self.beta2*self.length

  @property
  def dispersion(self): return -(2.*np.pi*C/self.wavelength**2)*self.gdd

  @property
  def loss(self): return 10.**(-self.attenuation*self.length/1e3/10.)

  def scaled(self, factor):
    return replace(self, beta2=self.beta2*factor)

  def group_delay(self, omega, omega0):
    # signal rides at ω_p+Ω, idler at ω_p−Ω
    sign = 1. if self.role == "signal" else -1.
    return self.beta1*self.length + self.gdd*sign*(np.asarray(omega)-omega0)

def idler_group_delay(fiber, omega, omega0):
  assert fiber.role == "idler", f"idler_group_delay needs the idler arm, got {fiber.role}"
  return fiber.group_delay(omega, omega0)

# **** G² correlation ****

class G2Profile:
  def __init__(self, tau, values, provenance):
    self.tau, self.values, self.provenance = np.asarray(tau, dtype=np.float64), np.asarray(values, dtype=np.float64), provenance
    assert self.tau.shape == self.values.shape, f"τ grid {self.tau.shape} and values {self.values.shape} differ"
    assert np.all(np.diff(self.tau) > 0), "τ grid must be strictly increasing"
    assert np.all(self.values >= 0), "G² must be non-negative"

  def __repr__(self):
    return f"<G2Profile {self.provenance} with {len(self.tau)} points>"

  def normalized(self):
    peak = self.values.max()
    return self.values/peak if peak > 0 else np.zeros_like(self.values)

  def to_csv(self, fn):
    np.savetxt(fn, np.c_[self.tau*1e12, self.values], delimiter=",", header="tau_ps,value", comments="", fmt="%.17g")

def stationary_phase_ratio(f, gdd):
  # dispersed spread |β₂L|·4σ against transform-limited width 2π/4σ
  w = 4.*f.rms_width
  return abs(gdd)*w*w/(2.*np.pi)

def _line(reflectivity, x):
  return np.ones_like(x) if reflectivity is None else np.asarray(reflectivity(x), dtype=np.float64)

def g2_analytic(f, reflectivity, bench, idler_fiber, tau, strict=True):
  """Stationary-phase G²(τ) = (2π/|β₂L|)·|f(Ω)r(x_Ω)|² at Ω = Ω₀ + τ/(β₂L).

  τ is measured from the delay of the centre detuning Ω₀.
  """
  gdd = idler_fiber.gdd
  if gdd == 0: raise PhysicsError("idler arm has no dispersion, G² is not spread in time")
  ratio = stationary_phase_ratio(f, gdd)
  if strict and ratio < STATIONARY_RATIO:
    raise PhysicsError(f"dispersed spread is only {ratio:.2f}x the transform-limited width, "
                       f"below the stationary-phase regime ({STATIONARY_RATIO:g}x); use g2_bruteforce")
  tau = np.asarray(tau, dtype=np.float64)
  omega = f.center_detuning + tau/gdd
  g = f.envelope_at(omega)*_line(reflectivity, position_of_detuning(bench, omega, f.center_detuning))
  return G2Profile(tau, 2.*np.pi/abs(gdd)*np.abs(g)**2, "analytic")

def required_quadrature_points(f, gdd, tau):
  # phase Ωτ − β₂LΩ²/2 may advance at most π per step
  w = f.omega - f.center_detuning
  rate = max(abs(t - gdd*x) for t in (tau.min(), tau.max()) for x in (w[0], w[-1]))
  return int(np.ceil((w[-1]-w[0])*rate/np.pi)) + 1

def _chirp_chunk(h, w, dw, tau):
  return trapezoid(h[None, :]*np.exp(1j*np.outer(tau, w)), dx=dw, axis=1)

def _chirp_czt(h, w, dw, tau):
  # same trapezoid sum, evaluated on a uniform τ grid with a chirp-z transform
  x = h*dw
  x[0], x[-1] = 0.5*x[0], 0.5*x[-1]
  dt = tau[1]-tau[0] if len(tau) > 1 else 0.
  s = czt(x, m=len(tau), w=np.exp(1j*dt*dw), a=np.exp(-1j*tau[0]*dw))
  return s*np.exp(1j*tau*w[0])

def g2_bruteforce(f, reflectivity, bench, idler_fiber, tau, quadrature_points=None, workers=1):
  """|∫dΩ f(Ω)r(x_Ω)exp(jΩτ − jβ₂LΩ²/2)|² by trapezoid quadrature, no stationary-phase step."""
  tau = np.asarray(tau, dtype=np.float64)
  gdd = idler_fiber.gdd
  need = max(4*len(f.omega), required_quadrature_points(f, gdd, tau))
  if quadrature_points is None: quadrature_points = need
  elif quadrature_points < need:
    raise PhysicsError(f"{quadrature_points} quadrature points undersample the chirp phase, need at least {need}")

  with ProfileOp("g2_bruteforce", [tau, f.omega]):
    w = np.linspace(f.omega[0], f.omega[-1], quadrature_points) - f.center_detuning
    dw = w[1]-w[0]
    omega = w + f.center_detuning
    h = f(omega)*_line(reflectivity, position_of_detuning(bench, omega, f.center_detuning))*np.exp(-0.5j*gdd*w*w)

    steps = np.diff(tau)
    if ops_gpu.GPU and os.getenv("GPU") == "1":
      amp = ops_gpu.chirp_quadrature(h, w, dw, tau)
    elif len(tau) > 1 and np.allclose(steps, steps[0], rtol=1e-9, atol=0):
      amp = _chirp_czt(h, w, dw, tau)
    else:
      rows = max(1, (1 << 22)//len(w))
      parts = Parallel(n_jobs=n_jobs(workers))(delayed(_chirp_chunk)(h, w, dw, tau[i:i+rows]) for i in range(0, len(tau), rows))
      amp = np.concatenate(parts)
  return G2Profile(tau, np.abs(amp)**2, "quadrature")
