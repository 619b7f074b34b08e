import os
import tempfile
import unittest
import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid
from tinyghost.helpers import C, AnalysisError
from tinyghost.physics import make_spectral_amplitude, FiberChannel, G2Profile, g2_analytic
from tinyghost.optics import OpticalBench, delay_of_position
from tinyghost.scene import LineReflectivity, read_pgm, load_mask, make_pattern, make_scan_plan, reflectivity_along_line
from tinyghost.simulator import DetectorModel, SimConfig, TimestampStream, simulate_row, simulate_scan, SIGNAL, IDLER, RECORDER_BIN
from tinyghost.analysis import (CoincidenceHistogram, coincidences, coincidence_to_accidental, subtract_background,
                                calibrate, line_profile, centered_range, assemble_image, write_image, jsd_2d, LineProfile)

def paper_setup():
  f = make_spectral_amplitude("flat-top", 1530e-9, 1570e-9, 16e-9)
  bench = OpticalBench.from_center_angle(1.67e-6, np.radians(11.9), 1044, 25.4e-3, 1530e-9, 1570e-9, bandwidth=16e-9)
  signal = FiberChannel(2., beta1=1.468/C, role="signal")
  idler = FiberChannel.from_dispersion(0.9, 1570e-9, 50e3, beta1=1.468/C, role="idler")
  return f, bench, signal, idler

def paper_detectors(jitter=250e-12):
  d = DetectorModel(jitter=jitter, bin_width=RECORDER_BIN)
  return d, d

def band(signal, idler, half=9e-9):
  tau0 = signal.beta1*signal.length - idler.beta1*idler.length
  return tau0 - half, tau0 + half

def analytic_calibration(f, bench, idler, tau0):
  tau = np.linspace(-12e-9, 12e-9, 2401)
  g = g2_analytic(f, None, bench, idler, tau)
  return calibrate(bench, idler, G2Profile(tau + tau0, g.values, g.provenance))

def brute_histogram(s, i, lo, hi, w):
  d = np.subtract.outer(s, i).ravel()
  d = d[(d >= lo) & (d < hi)]
  return np.bincount((d - lo)//w, minlength=(hi-lo)//w)

class TestCoincidences(unittest.TestCase):
  def test_matches_brute_force(self):
    rng = np.random.default_rng(1337)
    for k in range(200):
      ns, ni = rng.integers(0, 2001, 2)
      s = np.sort(rng.integers(0, 20000, ns))
      i = np.sort(rng.integers(0, 20000, ni))
      w = int(rng.integers(1, 4))
      lo = int(rng.integers(-300, 100))
      nbins = int(rng.integers(1, 200))
      hist = coincidences(TimestampStream(SIGNAL, s, 1e-9), TimestampStream(IDLER, i, 1e-9), window=w*1e-9,
                          tau_range=(lo*1e-9, (lo + nbins*w)*1e-9), workers=3 if k % 50 == 0 else 1)
      np.testing.assert_array_equal(hist.counts, brute_histogram(s, i, lo, lo + nbins*w, w))

  def test_edges_are_centred(self):
    s, i = TimestampStream(SIGNAL, [10], 1e-9), TimestampStream(IDLER, [7], 1e-9)
    hist = coincidences(s, i, tau_range=(-5e-9, 5e-9))
    self.assertEqual(hist.total, 1)
    np.testing.assert_allclose(hist.tau[np.argmax(hist.counts)], 3e-9)
    np.testing.assert_allclose(hist.edges[0], -5.5e-9)

  def test_shifted_stream(self):
    s = np.arange(0, 500000, 1000)
    hist = coincidences(TimestampStream(SIGNAL, s, 1e-12), TimestampStream(IDLER, s + 7, 1e-12), tau_range=(-50e-12, 50e-12))
    self.assertEqual(hist.total, len(s))
    self.assertEqual(np.count_nonzero(hist.counts), 1)
    np.testing.assert_allclose(hist.tau[np.argmax(hist.counts)], -7e-12)

  def test_bin_mismatch(self):
    with self.assertRaises(AnalysisError):
      coincidences(TimestampStream(SIGNAL, [1], 1e-9), TimestampStream(IDLER, [1], 2e-9))
    with self.assertRaises(AnalysisError):
      coincidences(TimestampStream(SIGNAL, [1], 1e-9), TimestampStream(IDLER, [1], 1e-9), window=1.5e-9)

  def test_empty(self):
    hist = coincidences(TimestampStream(SIGNAL, [], 1e-9), TimestampStream(IDLER, [1, 2], 1e-9), tau_range=(0., 1e-8))
    self.assertEqual(hist.total, 0)
    self.assertEqual(hist.singles, (0, 2))

class TestHistogram(unittest.TestCase):
  def test_fwhm(self):
    edges = np.arange(-50, 51)*1e-10
    tau = 0.5*(edges[1:] + edges[:-1])
    hist = CoincidenceHistogram(edges, 1000*np.exp(-0.5*(tau/1e-9)**2))
    np.testing.assert_allclose(hist.fwhm(), 2*np.sqrt(2*np.log(2))*1e-9, rtol=0.01)
    np.testing.assert_allclose(hist.centroid(), 0., atol=1e-15)

  def test_rebin(self):
    hist = CoincidenceHistogram(np.arange(11.), np.arange(10))
    coarse = hist.rebin(3)
    self.assertEqual(list(coarse.counts), [3, 12, 21, 9])
    self.assertEqual(coarse.total, hist.total)

  def test_background(self):
    edges = np.arange(101)*1e-9
    counts = np.full(100, 5)
    counts[40:60] += 100
    hist = subtract_background(CoincidenceHistogram(edges, counts), (40e-9, 60e-9))
    np.testing.assert_allclose(hist.values[:40], 0.)
    np.testing.assert_allclose(hist.values[40:60], 100.)

class TestCAR(unittest.TestCase):
  def test_scales_with_pair_rate(self):
    f, bench, signal, idler = paper_setup()
    car = []
    for mu in (0.002, 0.02):
      cfg = SimConfig(signal, idler, mu=mu, duration=0.175, seed=1337)
      s, i, _ = simulate_row(cfg, f, bench, None, paper_detectors(0.))
      car.append(coincidence_to_accidental(s, i, cfg.rep_rate, band(signal, idler)))
    self.assertGreater(car[0]/car[1], 5.)
    self.assertLess(car[0]/car[1], 20.)

class TestCalibration(unittest.TestCase):
  def test_origin_and_scale(self):
    f, bench, signal, idler = paper_setup()
    tau0 = -1e-6
    cal = analytic_calibration(f, bench, idler, tau0)
    np.testing.assert_allclose(cal.origin, tau0, atol=1e-12)
    np.testing.assert_allclose(cal.scale, abs(delay_of_position(bench, idler, 1.)), rtol=1e-12)
    self.assertEqual(cal.sign, 1.)
    np.testing.assert_allclose(cal.x_of_tau(cal.tau_of_x(50e-6)), 50e-6, rtol=1e-9)

  def test_flipped_dispersion(self):
    f, bench, signal, _ = paper_setup()
    slit = LineReflectivity(np.ones(1), 5e-6, 22.5e-6)
    for d in (0.9, -0.9):
      idler = FiberChannel.from_dispersion(d, 1570e-9, 50e3, beta1=1.468/C, role="idler")
      cal = analytic_calibration(f, bench, idler, 0.)
      self.assertEqual(cal.sign, -np.sign(float(delay_of_position(bench, idler, 1.))))
      g = g2_analytic(f, slit, bench, idler, np.linspace(-12e-9, 12e-9, 2401))
      x = cal.x_of_tau(np.average(g.tau, weights=g.values))
      np.testing.assert_allclose(x, 25e-6, atol=1e-6)

  def test_no_band(self):
    f, bench, signal, idler = paper_setup()
    flat = CoincidenceHistogram(np.arange(101)*1e-9, np.full(100, 7))
    with self.assertRaises(AnalysisError):
      calibrate(bench, idler, flat)

  def test_profile_conserves_counts(self):
    f, bench, signal, idler = paper_setup()
    cal = analytic_calibration(f, bench, idler, 0.)
    rng = np.random.default_rng(1337)
    hist = CoincidenceHistogram((np.arange(61) - 30.5)*RECORDER_BIN, rng.integers(0, 50, 60))
    prof = line_profile(hist, cal, 2e-6, x_range=(-200e-6, 200e-6))
    np.testing.assert_allclose(prof.counts.sum(), hist.total, rtol=1e-12)
    self.assertTrue(np.all(prof.counts >= 0))
    np.testing.assert_allclose(prof.x[[0, -1]], [-199e-6, 199e-6])

  def test_centered_range(self):
    lo, hi = centered_range(248.7e-6, 5e-6)
    np.testing.assert_allclose((lo, hi), (-125e-6, 125e-6))

class TestImaging(unittest.TestCase):
  def run_row(self, mask, mu, duration, jitter=250e-12, seed=1337):
    f, bench, signal, idler = paper_setup()
    cfg = SimConfig(signal, idler, mu=mu, duration=duration, seed=seed)
    line = reflectivity_along_line(mask, mask.origin[1] + 0.5*mask.height)
    s, i, _ = simulate_row(cfg, f, bench, line, paper_detectors(jitter))
    return coincidences(s, i, tau_range=band(signal, idler, 10e-9)), (f, bench, signal, idler)

  def test_narrow_line_width(self):
    # 13 um bar seen through the grating spot and a 389 ps composite jitter
    hist, _ = self.run_row(make_pattern("narrow-line"), 0.05, 0.3)
    self.assertGreater(hist.total, 2e4)
    np.testing.assert_allclose(hist.fwhm(), 1.65e-9, rtol=0.15)

  def test_two_points(self):
    # low pair rate, so accidentals from multi-pair pulses do not drag the centroids apart
    hist, (f, bench, signal, idler) = self.run_row(make_pattern("double-line", line_width=5e-6, separation=50e-6), 0.002, 0.5)
    self.assertGreater(hist.total, 1e3)
    mid = np.average(hist.tau, weights=hist.values)
    left, right = hist.tau < mid, hist.tau >= mid
    sep = np.average(hist.tau[right], weights=hist.values[right]) - np.average(hist.tau[left], weights=hist.values[left])
    self.assertLess(abs(sep - abs(delay_of_position(bench, idler, 50e-6))), RECORDER_BIN)

  def test_double_line_resolved(self):
    hist, (f, bench, signal, idler) = self.run_row(make_pattern("double-line"), 0.05, 0.1)
    lo, hi = band(signal, idler, 10e-9)
    cal = analytic_calibration(f, bench, idler, 0.5*(lo+hi))
    prof = line_profile(hist, cal, 5e-6, centered_range(bench.line_length, 5e-6))
    left, right = prof.counts[prof.x < 0].max(), prof.counts[prof.x > 0].max()
    valley = prof.counts[np.abs(prof.x) < 5e-6].min()
    self.assertLess(valley, 0.5*min(left, right))
    for side in (prof.x < 0, prof.x > 0):
      self.assertLess(abs(abs(np.average(prof.x[side], weights=prof.counts[side])) - 25e-6), 23.75e-6/2)

  def test_bars_image(self):
    f, bench, signal, idler = paper_setup()
    mask = make_pattern("bars")
    plan = make_scan_plan(mask, bench, 10e-6)
    cfg = SimConfig(signal, idler, mu=0.05, duration=4e-3, seed=1337)
    rows = simulate_scan(cfg, f, bench, mask, plan, paper_detectors(), quiet=True)
    lo, hi = band(signal, idler, 10e-9)
    cal = analytic_calibration(f, bench, idler, 0.5*(lo+hi))
    x_range = centered_range(bench.line_length, 5e-6)
    profiles = []
    for s, i, _ in rows:
      hist = coincidences(s, i, tau_range=(lo, hi))
      self.assertGreater(hist.total, 1e3)
      profiles.append(line_profile(hist, cal, 5e-6, x_range))
    img = assemble_image(profiles, plan)
    self.assertEqual(img.counts.shape, (14, 50))

    x, y = np.meshgrid(img.x, plan.offsets)
    in_a = (x >= -75e-6) & (x < -15e-6)
    in_b = (x >= 15e-6) & (x < 75e-6) & (y >= 30e-6) & (y < 110e-6)
    truth = in_a | in_b
    # distance to the nearest vertical edge of either rectangle
    edge = np.min([np.abs(x - e) for e in (-75e-6, -15e-6, 15e-6, 75e-6)], axis=0)
    far = edge > 23.75e-6
    # half of the bright level; the 95th percentile stands in for the maximum, which rides on Poisson noise
    recovered = img.counts > 0.5*np.percentile(img.counts, 95)
    np.testing.assert_array_equal(recovered[far], truth[far])

    for region, cx in ((x < 0, -45e-6), (x > 0, 45e-6)):
      w = np.where(region, img.counts, 0.)
      self.assertLess(abs(np.average(x, weights=w) - cx), 23.75e-6/2)
      self.assertLess(abs(np.average(y, weights=w) - 70e-6), 5e-6)

  def test_image_files(self):
    plan = make_scan_plan(make_pattern("bars"), OpticalBench.from_center_angle(
      1.67e-6, np.radians(11.9), 1044, 25.4e-3, 1530e-9, 1570e-9), 70e-6)
    profiles = [LineProfile(np.arange(5.)*1e-6, [0., 1., 2., 4.]), LineProfile(np.arange(5.)*1e-6, [4., 0., 0., 0.])]
    img = assemble_image(profiles, plan)
    with tempfile.TemporaryDirectory() as d:
      pgm, csv = write_image(img, os.path.join(d, "image.pgm"))
      px, maxval = read_pgm(pgm)
      raw = np.loadtxt(csv, delimiter=",")
      mask = load_mask(pgm)
      dark, _ = write_image(assemble_image([LineProfile(np.arange(5.), np.zeros(4))]*2, plan), os.path.join(d, "dark.pgm"))
      self.assertEqual(read_pgm(dark)[0].max(), 0)
    np.testing.assert_array_equal(px, [[0, 64, 128, 255], [255, 0, 0, 0]])
    np.testing.assert_array_equal(raw, img.counts)
    np.testing.assert_allclose(mask.r*255, px)
    normalized = assemble_image(profiles, plan, normalize=True)
    np.testing.assert_allclose(normalized.counts.max(axis=1), 1.)
    with self.assertRaises(AnalysisError):
      assemble_image(profiles[:1], plan)
    with self.assertRaises(AnalysisError):
      assemble_image([profiles[0], LineProfile(np.arange(4.), [1., 1., 1.])], plan)

class TestMirror(unittest.TestCase):
  def setUp(self):
    self.f, self.bench, self.signal, self.idler = paper_setup()
    self.tau0 = self.signal.beta1*self.signal.length - self.idler.beta1*self.idler.length

  def mirror_run(self, duration, bin_width=RECORDER_BIN):
    cfg = SimConfig(self.signal, self.idler, mu=0.005, duration=duration, seed=1337)
    d = DetectorModel(bin_width=bin_width)
    s, i, _ = simulate_row(cfg, self.f, self.bench, None, (d, d))
    return coincidences(s, i, tau_range=band(self.signal, self.idler))

  def test_matches_analytic(self):
    hist = self.mirror_run(5e-2, bin_width=1e-12)
    self.assertGreater(hist.total, 8e3)
    np.testing.assert_allclose(hist.rebin(200).fwhm(), 14.4e-9, rtol=0.1)
    tau = np.linspace(-9e-9, 9e-9, 18001)
    cdf = cumulative_trapezoid(g2_analytic(self.f, None, self.bench, self.idler, tau).values, tau, initial=0.)
    samples = np.repeat(hist.tau, hist.counts) - self.tau0
    self.assertGreater(stats.kstest(samples, lambda t: np.interp(t, tau, cdf/cdf[-1])).pvalue, 1e-3)

  def profile_distance(self, duration):
    hist = self.mirror_run(duration)
    cal = analytic_calibration(self.f, self.bench, self.idler, self.tau0)
    # analytic G² averaged over each τ bin
    sub = 40
    w = (hist.edges[-1]-hist.edges[0])/(sub*len(hist.counts))
    mid = hist.edges[0] + (np.arange(sub*len(hist.counts)) + 0.5)*w
    mass = g2_analytic(self.f, None, self.bench, self.idler, mid - self.tau0).values.reshape(-1, sub).mean(axis=1)
    x_range = centered_range(self.bench.line_length, 5e-6)
    a = line_profile(hist, cal, 5e-6, x_range).counts
    b = line_profile(CoincidenceHistogram(hist.edges, mass), cal, 5e-6, x_range).counts
    return hist.total, np.abs(a/a.sum() - b/b.sum()).sum()

  def test_profile_converges(self):
    n1, d1 = self.profile_distance(5e-2)
    n2, d2 = self.profile_distance(5e-1)
    self.assertGreater(n1, 8e3)
    self.assertGreater(n2, 8e4)
    self.assertLess(d2, d1)
    self.assertLess(d2, 0.06)

class TestJSD(unittest.TestCase):
  def test_anticorrelated(self):
    f, bench, _, _ = paper_setup()
    signal = FiberChannel.from_dispersion(0.9, 1530e-9, 50e3, beta1=1.468/C, role="signal")
    idler = FiberChannel.from_dispersion(0.9, 1570e-9, 50e3, beta1=1.468/C, role="idler")
    cfg = SimConfig(signal, idler, mu=0.002, duration=0.2, seed=1337)
    d = DetectorModel(efficiency=0.9, jitter=50e-12, dark_rate=100.)
    s, i, _ = simulate_row(cfg, f, bench, None, (d, d))
    js = jsd_2d(s, i, signal, idler, cfg.rep_rate, f.pump_frequency, f.center_detuning)
    self.assertGreater(len(js), 1e4)
    self.assertLess(js.pearson(), -0.9)
    for width in js.widths():
      np.testing.assert_allclose(width, 16e-9, rtol=0.1)
    self.assertEqual(js.counts.sum(), len(js))

  def test_needs_dispersion(self):
    f, bench, signal, idler = paper_setup()
    s = TimestampStream(SIGNAL, [0], 1e-12)
    with self.assertRaises(AnalysisError):
      jsd_2d(s, s, signal, idler, 40e6, f.pump_frequency, f.center_detuning)

if __name__ == '__main__':
  unittest.main(verbosity=2)
