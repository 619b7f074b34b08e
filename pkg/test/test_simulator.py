import os
import tempfile
import unittest
import numpy as np
from scipy import stats
from tinyghost.helpers import C, PhysicsError, AnalysisError
from tinyghost.physics import make_spectral_amplitude, FiberChannel
from tinyghost.optics import OpticalBench, position_of_detuning
from tinyghost.scene import LineReflectivity, make_pattern, make_scan_plan
from tinyghost.simulator import DetectorModel, SimConfig, TimestampStream, simulate_row, simulate_scan, SIGNAL, IDLER
from tinyghost.analysis import coincidences

def paper_setup():
  f = make_spectral_amplitude("flat-top", 1530e-9, 1570e-9, 16e-9)
  bench = OpticalBench.from_center_angle(1.67e-6, np.radians(11.9), 1044, 25.4e-3, 1530e-9, 1570e-9, bandwidth=16e-9)
  signal = FiberChannel(2., beta1=1.468/C, role="signal")
  idler = FiberChannel.from_dispersion(0.9, 1570e-9, 50e3, beta1=1.468/C, role="idler")
  return f, bench, signal, idler

def perfect(bin_width=1e-12, **kwargs):
  d = DetectorModel(bin_width=bin_width, **kwargs)
  return d, d

class TestSimulator(unittest.TestCase):
  def test_deterministic(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.05, duration=1e-3, seed=1337, block=1 << 14)
    a = simulate_row(cfg, f, bench, None, perfect(jitter=100e-12))
    b = simulate_row(cfg, f, bench, None, perfect(jitter=100e-12))
    c = simulate_row(cfg, f, bench, None, perfect(jitter=100e-12), workers=2)
    for x in (b, c):
      np.testing.assert_array_equal(a[0].bins, x[0].bins)
      np.testing.assert_array_equal(a[1].bins, x[1].bins)
    d = simulate_row(SimConfig(signal, idler, mu=0.05, duration=1e-3, seed=1338, block=1 << 14), f, bench, None, perfect(jitter=100e-12))
    self.assertFalse(np.array_equal(a[1].bins, d[1].bins))
    self.assertEqual((a[0].channel, a[1].channel), (SIGNAL, IDLER))

  def test_no_pairs(self):
    f, bench, signal, idler = paper_setup()
    s, i, log = simulate_row(SimConfig(signal, idler, mu=0., duration=1e-4), f, bench, None, perfect(), truth=True)
    self.assertEqual((len(s), len(i), len(log)), (0, 0, 0))

  def test_truth_log(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.05, duration=2e-4, seed=1337, block=1 << 12)
    s, i, log = simulate_row(cfg, f, bench, LineReflectivity.constant(np.sqrt(0.5)), perfect(), truth=True)
    self.assertEqual(log.signal.sum(), len(s))
    self.assertEqual(log.idler.sum(), len(i))
    self.assertEqual(len(i), len(log))
    self.assertTrue(np.all(np.diff(log.pulse) >= 0))
    self.assertTrue(np.all(log.pulse < cfg.pulses))

  def test_detection_probability(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.05, duration=1e-2, seed=1337)
    s, i, log = simulate_row(cfg, f, bench, LineReflectivity.constant(0.5), perfect(efficiency=0.8), truth=True)
    n = len(log)
    # |r|²·η = 0.2 for the signal, η = 0.8 for the idler
    for k, p in ((len(s), 0.2), (len(i), 0.8)):
      self.assertLess(abs(k - p*n), 5*np.sqrt(n*p*(1-p)))
    np.testing.assert_allclose(n, cfg.mu*cfg.pulses, rtol=5/np.sqrt(cfg.mu*cfg.pulses))

  def test_fiber_loss(self):
    f, bench, signal, idler = paper_setup()
    lossy = FiberChannel.from_dispersion(0.9, 1570e-9, 50e3, beta1=1.468/C, attenuation=0.2, role="idler")
    cfg = SimConfig(signal, lossy, mu=0.05, duration=1e-2, seed=1337)
    s, i, log = simulate_row(cfg, f, bench, None, perfect(), truth=True)
    self.assertLess(abs(len(i) - 0.1*len(log)), 5*np.sqrt(len(log)*0.09))

  def test_idler_delay_is_unbiased(self):
    # idler arrival within its pump slot, read back through the delay law, follows |f|²
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.05, duration=1e-2, seed=1337)
    _, i, _ = simulate_row(cfg, f, bench, None, perfect())
    t = i.times - idler.beta1*idler.length
    r = t - np.rint(t*cfg.rep_rate)/cfg.rep_rate
    omega = f.center_detuning - r/idler.gdd
    self.assertGreater(len(omega), 15000)
    self.assertGreater(stats.kstest(omega, f.cdf).pvalue, 1e-3)

  def test_heralded_idlers_follow_object(self):
    # idlers sharing a pump slot with a detected signal follow |f·r|², r read at x_Ω
    f, bench, signal, idler = paper_setup()
    line = LineReflectivity(np.linspace(0.2, 1., 50), 5e-6, -125e-6)
    cfg = SimConfig(signal, idler, mu=0.01, duration=5e-2, seed=1337, grating_blur=False)
    s, i, _ = simulate_row(cfg, f, bench, line, perfect())
    ts, ti = s.times - signal.beta1*signal.length, i.times - idler.beta1*idler.length
    slot = np.rint(ti*cfg.rep_rate)
    heralded = np.isin(slot, np.rint(ts*cfg.rep_rate))
    omega = f.center_detuning - (ti - slot/cfg.rep_rate)[heralded]/idler.gdd
    self.assertGreater(len(omega), 5000)

    w = np.linspace(f.omega[0], f.omega[-1], 200001)
    r = line(position_of_detuning(bench, 0.5*(w[1:] + w[:-1]), f.center_detuning))
    cdf = np.concatenate([[0.], np.cumsum(np.diff(f.cdf(w))*r**2)])
    self.assertGreater(stats.kstest(omega, lambda x: np.interp(x, w, cdf/cdf[-1])).pvalue, 1e-3)
    # and they do not follow the bare |f|²
    self.assertLess(stats.kstest(omega, f.cdf).pvalue, 1e-6)

  def test_darks(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0., duration=1e-2, seed=1337)
    s, i, _ = simulate_row(cfg, f, bench, None, perfect(dark_rate=1e5))
    for stream in (s, i):
      self.assertLess(abs(len(stream) - 1000), 5*np.sqrt(1000))
      self.assertLess(stream.bins.max()*stream.bin_width, cfg.duration)
    self.assertGreater(stats.kstest(s.times/cfg.duration, "uniform").pvalue, 1e-3)

  def test_dead_time(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=1., duration=2e-5, seed=1337)
    s, i, _ = simulate_row(cfg, f, bench, None, perfect(bin_width=1e-12, dead_time=100e-9))
    for stream in (s, i):
      self.assertGreaterEqual(np.diff(stream.bins).min(), 100e-9/1e-12 - 1.5)
    s0, _, _ = simulate_row(cfg, f, bench, None, perfect())
    self.assertLess(len(s), len(s0))

  def test_jitter(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.05, duration=1e-2, seed=1337)
    s, _, _ = simulate_row(cfg, f, bench, None, perfect(jitter=200e-12))
    t = s.times - signal.beta1*signal.length
    r = t - np.rint(t*cfg.rep_rate)/cfg.rep_rate
    np.testing.assert_allclose(np.std(r), 200e-12/(2*np.sqrt(2*np.log(2))), rtol=0.05)

  def test_drift(self):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=0.005, duration=1e-2, seed=1337, temperature=((0., 0.), (1e-2, 1.)))
    # 1 °C at the end of the run over 50 km
    self.assertEqual(cfg.drift_at(1e-2), 4e-14*50e3*1.)
    flat = SimConfig(signal, idler, mu=0.005, duration=1e-2, seed=1337)
    # wide enough for the drifted band, too narrow for pairs from neighbouring pulses
    tau0 = signal.beta1*signal.length - idler.beta1*idler.length
    tau_range = (tau0 - 10.5e-9, tau0 + 8.5e-9)
    s, i, log = simulate_row(cfg, f, bench, None, perfect(), truth=True)
    shifted = coincidences(s, i, tau_range=tau_range)
    still = coincidences(*simulate_row(flat, f, bench, None, perfect())[:2], tau_range=tau_range)
    self.assertEqual(shifted.total, still.total)
    expected = np.mean(cfg.drift_at(log.pulse/cfg.rep_rate))
    np.testing.assert_allclose(expected, 0.5*cfg.drift_at(1e-2), rtol=0.05)
    np.testing.assert_allclose(still.centroid() - shifted.centroid(), expected, atol=10e-12)

  def test_scan_rows(self):
    f, bench, signal, idler = paper_setup()
    mask = make_pattern("mirror")
    plan = make_scan_plan(mask, bench, 35e-6)
    cfg = SimConfig(signal, idler, mu=0.05, duration=2e-3, seed=1337)
    rows = simulate_scan(cfg, f, bench, mask, plan, perfect(), quiet=True)
    self.assertEqual(len(rows), plan.rows)
    def phase(stream):
      t = stream.times - idler.beta1*idler.length
      return t - np.rint(t*cfg.rep_rate)/cfg.rep_rate
    # a uniform mask makes every row the same experiment with a different RNG stream
    self.assertGreater(stats.ks_2samp(phase(rows[0][1]), phase(rows[3][1])).pvalue, 1e-3)
    self.assertFalse(np.array_equal(rows[0][1].bins, rows[1][1].bins))
    again = simulate_scan(cfg, f, bench, mask, plan, perfect(), workers=2, quiet=True)
    np.testing.assert_array_equal(again[2][0].bins, rows[2][0].bins)

  def test_bad_config(self):
    f, bench, signal, idler = paper_setup()
    with self.assertRaises(PhysicsError):
      SimConfig(signal, idler, mu=-1.)
    with self.assertRaises(PhysicsError):
      SimConfig(signal, idler, duration=0.)
    with self.assertRaises(PhysicsError):
      DetectorModel(efficiency=1.5)
    with self.assertRaises(PhysicsError):
      simulate_row(SimConfig(signal, idler), f, bench, None, (DetectorModel(), DetectorModel(bin_width=1e-12)))

class TestStreamFiles(unittest.TestCase):
  def test_roundtrip(self):
    st = TimestampStream(IDLER, [0, 3, 3, 10], 164.61e-12, duration=1e-3, seed=1337, config_hash="abc")
    with tempfile.TemporaryDirectory() as d:
      fn = os.path.join(d, "idler.csv")
      st.to_csv(fn)
      with open(fn) as f:
        self.assertEqual(f.readline().strip(), "channel,bin_index")
      back = TimestampStream.from_csv(fn)
      os.remove(os.path.join(d, "idler.meta"))
      with self.assertRaises(AnalysisError):
        TimestampStream.from_csv(fn)
    np.testing.assert_array_equal(back.bins, st.bins)
    self.assertEqual((back.channel, back.bin_width, back.seed, back.config_hash), (IDLER, 164.61e-12, 1337, "abc"))

  def test_unsorted(self):
    with self.assertRaises(AssertionError):
      TimestampStream(SIGNAL, [3, 1], 1e-12)

if __name__ == '__main__':
  unittest.main(verbosity=2)
