import os
import time
from collections import defaultdict
import numpy as np

C = 299792458.0
FWHM_PER_SIGMA = 2.*np.sqrt(2.*np.log(2.))

# **** errors ****

class GhostError(Exception): pass
class ConfigError(GhostError): pass
class PhysicsError(GhostError, ValueError): pass
class SceneError(GhostError, ValueError): pass
class AnalysisError(GhostError, ValueError): pass

# **** profiler ****

DEBUG = os.getenv("DEBUG", None) is not None
debug_counts, debug_times = defaultdict(int), defaultdict(float)
if DEBUG:
  import atexit
  def print_debug_exit():
    for name, _ in sorted(debug_times.items(), key=lambda x: -x[1]):
      print(f"{name:>20} : {debug_counts[name]:>6} {debug_times[name]:>10.2f} ms")
  atexit.register(print_debug_exit)

class ProfileOp:
  def __init__(self, name, x=()):
    self.name, self.x = name, x
  def __enter__(self):
    if DEBUG: self.st = time.time()
    return self
  def __exit__(self, *junk):
    if DEBUG:
      et = (time.time()-self.st)*1000.
      debug_counts[self.name] += 1
      debug_times[self.name] += et
      print(f"{self.name:>20} : {et:>7.2f} ms {[np.shape(y) for y in self.x]}")

# **** workers ****

def n_jobs(workers):
  # joblib convention, 0 means every core
  return -1 if not workers else int(workers)

def progress_disabled(quiet=False):
  return quiet or os.getenv('CI') is not None

def warn(msg):
  print(f"warning, {msg}")

# **** unit conversions shared by every module ****

def omega_of_wavelength(lam):
  return 2.*np.pi*C/np.asarray(lam, dtype=np.float64)

def wavelength_of_omega(omega):
  return 2.*np.pi*C/np.asarray(omega, dtype=np.float64)

def detuning_span(dlam, lam):
  # first order, dω = 2πc·dλ/λ²
  return 2.*np.pi*C*dlam/lam**2
