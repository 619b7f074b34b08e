import os
import functools
import numpy as np

try:
  import reikna.cluda as cluda
  GPU = True
except ImportError:
  # no GPU support
  GPU = False

@functools.lru_cache()
def get_thread():
  api = cluda.cuda_api() if os.environ.get("GPAPI", "opencl") == "cuda" else cluda.ocl_api()
  return api.Thread.create()

@functools.lru_cache()
def clbuild(thr, prg, name):
  return thr.compile(prg).__getattr__(name)

def chirp_quadrature(h, w, dw, tau):
  """Σ_k c_k h_k exp(jτw_k) for every τ, c_k the trapezoid weights. One work item per τ."""
  thr = get_thread()
  x = np.asarray(h, dtype=np.complex128)*dw
  x[0], x[-1] = 0.5*x[0], 0.5*x[-1]
  hr, hi = thr.to_device(np.ascontiguousarray(x.real)), thr.to_device(np.ascontiguousarray(x.imag))
  w_g, tau_g = thr.to_device(np.asarray(w, dtype=np.float64)), thr.to_device(np.asarray(tau, dtype=np.float64))
  re_g, im_g = thr.array(len(tau), dtype=np.float64), thr.array(len(tau), dtype=np.float64)
  chirp = clbuild(thr, """
  KERNEL void chirp(GLOBAL_MEM const double *hr_g, GLOBAL_MEM const double *hi_g, GLOBAL_MEM const double *w_g,
                    GLOBAL_MEM const double *tau_g, GLOBAL_MEM double *re_g, GLOBAL_MEM double *im_g, int n) {
    SIZE_T gid = get_global_id(0);
    double t = tau_g[gid], re = 0., im = 0.;
    for (int k = 0; k < n; k++) {
      double c = cos(t*w_g[k]), s = sin(t*w_g[k]);
      re += hr_g[k]*c - hi_g[k]*s;
      im += hr_g[k]*s + hi_g[k]*c;
    }
    re_g[gid] = re;
    im_g[gid] = im;
  }""", "chirp")
  chirp(hr, hi, w_g, tau_g, re_g, im_g, np.int32(len(w)), global_size=[len(tau)])
  return re_g.get() + 1j*im_g.get()
