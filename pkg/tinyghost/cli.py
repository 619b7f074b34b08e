import os
import sys
import glob
import argparse
import numpy as np
from tinyghost.helpers import ConfigError, GhostError, AnalysisError, detuning_span
from tinyghost.config import RunConfig, format_quantity
from tinyghost.physics import G2Profile, g2_analytic
from tinyghost.optics import spatial_resolution
from tinyghost.scene import ScanPlan
from tinyghost.simulator import TimestampStream, simulate_row, simulate_scan
from tinyghost.analysis import (coincidences, coincidence_to_accidental, subtract_background, calibrate,
                                line_profile, centered_range, assemble_image, write_image, jsd_2d)
from tinyghost.oracle import stationary_phase_sweep

def load(args):
  cfg = RunConfig.load(args.config)
  if getattr(args, "seed", None) is not None: cfg = cfg.override("run", "seed", args.seed)
  if getattr(args, "workers", None) is not None: cfg = cfg.override("run", "workers", args.workers)
  return cfg

def outdir(args):
  os.makedirs(args.out, exist_ok=True)
  return args.out

def row_name(j): return f"row{j:03d}"

# **** simulate ****

def cmd_simulate(args):
  cfg = load(args)
  f, bench, detectors = cfg.spectral_amplitude(), cfg.bench(), cfg.detectors()
  sim = cfg.sim_config()
  mask = cfg.mask()
  plan = cfg.plan(mask, bench)
  workers, truth = cfg["run"]["workers"], args.truth_log or cfg["run"]["truth_log"]
  out = outdir(args)
  print(f"{plan.rows} rows of {sim.pulses} pulses at mu={sim.mu:g}, step {format_quantity(plan.step, 'um')}, seed {sim.seed}")

  rows = simulate_scan(sim, f, bench, mask, plan, detectors, workers=workers, truth=truth,
                       antialias=cfg["scene"]["antialias"], config_hash=cfg.digest, quiet=args.quiet)
  for j, (signal, idler, log) in enumerate(rows):
    signal.to_csv(os.path.join(out, row_name(j) + "_signal.csv"))
    idler.to_csv(os.path.join(out, row_name(j) + "_idler.csv"))
    if log is not None: log.to_csv(os.path.join(out, row_name(j) + "_truth.csv"))
    print(f"{row_name(j)} : singles {len(signal):>9d} {len(idler):>9d}  pairs generated {sim.mu*sim.pulses:>11.1f}")

  if args.reference:
    # mirror run on its own RNG stream
    signal, idler, _ = simulate_row(sim, f, bench, None, detectors, row=plan.rows, workers=workers, config_hash=cfg.digest)
    signal.to_csv(os.path.join(out, "reference_signal.csv"))
    idler.to_csv(os.path.join(out, "reference_idler.csv"))
    print(f"reference : singles {len(signal):>9d} {len(idler):>9d}")
  return 0

# **** analyze ****

def expected_band(cfg):
  """Coincidence delay of the line centre and the half width of the dispersed band."""
  signal_fiber, idler_fiber = cfg.fibers()
  tau0 = signal_fiber.beta1*signal_fiber.length - idler_fiber.beta1*idler_fiber.length
  s = cfg["source"]
  width = detuning_span(s["bandwidth"], s["signal_wavelength"] if s["bandwidth_reference"] == "signal" else s["idler_wavelength"])
  half = 0.5*abs(idler_fiber.gdd)*width
  drift = cfg["fibers"]["drift"]*idler_fiber.length*cfg["fibers"]["temperature_rise"]
  return tau0 - max(drift, 0.), tau0 - min(drift, 0.), half

def cmd_analyze(args):
  cfg = load(args)
  f, bench = cfg.spectral_amplitude(), cfg.bench()
  _, idler_fiber = cfg.fibers()
  r = cfg["run"]
  out = outdir(args)

  names = sorted(os.path.basename(fn)[:-len("_signal.csv")] for fn in glob.glob(os.path.join(args.streams, "row*_signal.csv")))
  if not names: raise AnalysisError(f"no row streams in {args.streams}")
  if cfg["scene"]["pattern"] is not None:
    plan = cfg.plan(cfg.mask(), bench)
    if plan.rows != len(names): raise AnalysisError(f"found {len(names)} rows, the scan plan has {plan.rows}")
  else:
    step = cfg["scan"]["step"]
    plan = ScanPlan(step, len(names), bench.line_length, cfg["scene"]["pitch"], 0.5*step)

  lo, hi, half = expected_band(cfg)
  margin = max(0.5*half, 2*cfg.timing_resolution() + 8*cfg["detectors"]["bin_width"])
  tau_range, band = (lo-half-margin, hi+half+margin), (lo-half, hi+half)
  window = r["window"]

  ref = os.path.join(args.streams, "reference_signal.csv")
  if os.path.isfile(ref):
    s, i = TimestampStream.from_csv(ref), TimestampStream.from_csv(os.path.join(args.streams, "reference_idler.csv"))
    reference = coincidences(s, i, window, tau_range, r["workers"])
  else:
    tau = np.linspace(-half-margin, half+margin, 1025)
    g2 = g2_analytic(f, None, bench, idler_fiber, tau, strict=False)
    reference = G2Profile(tau + 0.5*(lo+hi), g2.values, g2.provenance)
  cal = calibrate(bench, idler_fiber, reference)
  print(f"calibration : origin {cal.origin*1e9:.4f} ns, scale {cal.scale*1e-6*1e12:.4f} ps/um, sign {cal.sign:+.0f}")

  x_range = centered_range(bench.line_length, r["x_pitch"])
  profiles, summary = [], []
  for j, name in enumerate(names):
    s = TimestampStream.from_csv(os.path.join(args.streams, name + "_signal.csv"))
    i = TimestampStream.from_csv(os.path.join(args.streams, name + "_idler.csv"))
    hist = coincidences(s, i, window, tau_range, r["workers"])
    car = coincidence_to_accidental(s, i, cfg["source"]["rep_rate"], tau_range, window)
    hist.to_csv(os.path.join(out, name + "_hist.csv"))
    if r["background"]: hist = subtract_background(hist, band)
    p = line_profile(hist, cal, r["x_pitch"], x_range)
    p.to_csv(os.path.join(out, name + "_profile.csv"))
    profiles.append(p)
    summary.append((j, len(s), len(i), hist.total, car))
    print(f"{name} : singles {len(s):>9d} {len(i):>9d}  coincidences {hist.total:>9g}  CAR {car:>8.2f}")

  raster = assemble_image(profiles, plan, normalize=r["normalize_rows"])
  pgm, csv = write_image(raster, os.path.join(out, "image.pgm"))
  with open(os.path.join(out, "summary.csv"), "w") as fh:
    fh.write("row,signal_singles,idler_singles,coincidences,car\n")
    for row in summary: fh.write("%d,%d,%d,%.10g,%.6g\n" % row)
  print(f"image {raster.counts.shape[0]}x{raster.counts.shape[1]} written to {pgm} and {csv}")
  return 0

# **** resolution, oracle, jsd ****

def cmd_resolution(args):
  cfg = load(args)
  bench = cfg.bench()
  _, idler_fiber = cfg.fibers()
  budget = spatial_resolution(bench, idler_fiber.dispersion, cfg.timing_resolution())
  for term, value, units in budget.rows(): print(f"{term:>14} : {value:12.4f} {units}")
  print(f"{'idler spread':>14} : {2e9*expected_band(cfg)[2]:12.4f} ns")
  if args.out is not None: budget.to_csv(os.path.join(outdir(args), "resolution.csv"))
  return 0

def cmd_oracle(args):
  cfg = load(args)
  f, bench = cfg.spectral_amplitude(), cfg.bench()
  _, idler_fiber = cfg.fibers()
  report = stationary_phase_sweep(f, bench, idler_fiber, points=cfg["run"]["tau_points"], workers=cfg["run"]["workers"])
  for p, s, d in report.rows: print(f"{p:>12} x{s:<6g} : deviation {d*100:8.3f} %")
  if args.out is not None: report.to_csv(os.path.join(outdir(args), "oracle.csv"))
  ok = report.converges()
  print("deviation falls with dispersion" if ok else "deviation does NOT fall with dispersion")
  return 0 if ok else 1

def cmd_jsd(args):
  cfg = load(args)
  f, bench, detectors = cfg.spectral_amplitude(), cfg.bench(), cfg.detectors()
  sim = cfg.sim_config()
  signal, idler, _ = simulate_row(sim, f, bench, None, detectors, workers=cfg["run"]["workers"], config_hash=cfg.digest)
  js = jsd_2d(signal, idler, sim.signal_fiber, sim.idler_fiber, sim.rep_rate, f.pump_frequency, f.center_detuning)
  ws, wi = js.widths()
  print(f"{len(js)} slot pairs, pearson {js.pearson():.4f}, widths {ws*1e9:.3f} nm {wi*1e9:.3f} nm")
  js.to_csv(os.path.join(outdir(args), "jsd.csv"))
  return 0

# **** entry point ****

def parser():
  fmt = argparse.ArgumentDefaultsHelpFormatter
  p = argparse.ArgumentParser(prog="tinyghost", description="temporal ghost imaging over dispersive fiber", formatter_class=fmt)
  sub = p.add_subparsers(dest="command", required=True)

  def add(name, fn, help, out="out", seed=False):
    s = sub.add_parser(name, help=help, formatter_class=fmt)
    s.add_argument("--config", default="paper", help="config file or preset name")
    s.add_argument("--out", default=out, help="output directory")
    s.add_argument("--workers", type=int, default=None, help="parallel workers, 0 for every core, overrides [run] workers")
    if seed: s.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    s.set_defaults(fn=fn)
    return s

  s = add("simulate", cmd_simulate, "simulate timestamp streams for every scan row", seed=True)
  s.add_argument("--truth-log", action="store_true", help="write the per-pair truth log of every row")
  s.add_argument("--reference", action="store_true", help="add a mirror row used to calibrate the analysis")
  s.add_argument("--quiet", action="store_true", help="no progress bar")
  s = add("analyze", cmd_analyze, "histogram, calibrate and image a directory of streams")
  s.add_argument("streams", help="directory written by simulate")
  add("resolution", cmd_resolution, "print the resolution budget", out=None)
  add("oracle", cmd_oracle, "brute-force against stationary-phase G2", out=None)
  add("jsd", cmd_jsd, "joint spectrum from a run with both arms dispersed", seed=True)
  return p

def main(argv=None):
  args = parser().parse_args(argv)
  try:
    return args.fn(args)
  except ConfigError as e:
    print(f"error: {e}", file=sys.stderr)
    return 2
  except (GhostError, OSError) as e:
    print(f"error: {e}", file=sys.stderr)
    return 3

if __name__ == "__main__":
  sys.exit(main())
