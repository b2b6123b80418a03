"""Command-line interface.

Subcommands: solve, continue, stability, check, bench. Each run writes
the fully resolved config to the output directory; numeric outputs carry
full double precision. Exit codes: 0 success, 1 config error, 2 numerical
failure.
"""

import argparse
import csv
import os
import sys
import time

import numpy as np
import yaml

from . import checks, continuation, oracle, shooting, stability
from .config import RunConfig, ConfigError
from .continuation import ContinuationError, TorusSystem
from .harmonics import SchemeError
from .integrator import IntegrationError, integrate_batch
from .model import ModelError
from .oracle import OracleError
from .shooting import ShootingError
from .stability import StabilityError

_NUMERIC_ERRORS = (ShootingError, IntegrationError, ContinuationError,
                   OracleError, StabilityError)
_CONFIG_ERRORS = (ConfigError, SchemeError, ModelError)


def _outdir(cfg, override):
    path = override or cfg.data["run"]["output_dir"]
    os.makedirs(path, exist_ok=True)
    cfg.dump(os.path.join(path, "resolved_config.yaml"))
    return path


def _seed_coefficients(cfg, scheme, model):
    """Initial coefficients per the config seed source."""
    src = cfg.data["seed"]["source"]
    freq = cfg.frequency_vector()
    nz = 2 * model.n * scheme.u_tilde
    if src == "zero":
        return shooting.TorusCoefficients(np.zeros(nz), freq)
    if src == "linear":
        return oracle.linear_quasiperiodic_response(
            model.mass, model.damping, model.stiffness, model.forcing_terms,
            freq, scheme)
    if src == "snapshot":
        path = cfg.data["seed"]["snapshot"]
        if not path:
            raise ConfigError("snapshot seed needs seed.snapshot path")
        coeffs, snap_scheme, _ = shooting.load_snapshot(path)
        if snap_scheme.to_dict() != scheme.to_dict():
            raise ConfigError("snapshot scheme differs from config scheme")
        return coeffs
    if src == "periodic-lift":
        # converge the periodic problem first, then lift with the
        # monodromy pair; the perturbation scale is config-controlled
        if scheme.d != 2:
            raise ConfigError("periodic-lift seeding targets d = 2")
        from .harmonics import HarmonicScheme
        from .model import FrequencyVector
        sch1 = HarmonicScheme([])
        f1 = FrequencyVector(np.array([freq.omega[0]]), 1)
        guess = shooting.TorusCoefficients(np.zeros(2 * model.n), f1)
        sol1, info = shooting.newton_correct(
            model, guess, sch1, int(cfg.data["torus"]["s1"]),
            epsilon=float(cfg.data["continuation"]["epsilon"]))
        psi = stability.physical_monodromy(
            info["evaluation"].batch.psi[0], f1.omega[0])
        return continuation.seed_torus_from_periodic(
            sol1.Z0, f1.omega[0], psi, scheme, cfg.e,
            perturbation=float(cfg.data["seed"]["perturbation"]))
    raise ConfigError("unknown seed source '%s'" % src)


def _solve_constraints(cfg, scheme, model):
    """Phase rows for the intrinsic frequencies of a fixed-parameter solve."""
    released = list(range(cfg.e + 1, cfg.d + 1))

    def make_pc(i):
        def pc(c, _released):
            row = continuation.phase_condition_rows(c, scheme, model, [i])[0]
            return row, {}, 0.0
        return pc

    return released, [make_pc(i) for i in released]


def cmd_solve(cfg, args):
    scheme = cfg.scheme()
    model = cfg.model()
    out = _outdir(cfg, args.out)
    if args.seed_from:
        coeffs, snap_scheme, _ = shooting.load_snapshot(args.seed_from)
        if snap_scheme.to_dict() != scheme.to_dict():
            raise ConfigError("snapshot scheme differs from config scheme")
    else:
        coeffs = _seed_coefficients(cfg, scheme, model)
    released, constraints = _solve_constraints(cfg, scheme, model)
    S1 = int(cfg.data["torus"]["s1"])
    workers = int(cfg.data["run"]["workers"])
    solved, info = shooting.newton_correct(
        model, coeffs, scheme, S1, constraints=constraints,
        released=released,
        epsilon=float(cfg.data["continuation"]["epsilon"]),
        workers=workers)
    snap = os.path.join(out, "snapshot.json")
    shooting.save_snapshot(snap, solved, scheme,
                           residual_norm=info["residual_norm"])
    with open(os.path.join(out, "convergence.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "residual_norm"])
        for i, r in enumerate(info["history"]):
            wr.writerow([i, repr(float(r))])
    print("converged in %d iterations, |R| = %.3e -> %s"
          % (info["iterations"], info["residual_norm"], snap))
    return 0


def cmd_continue(cfg, args):
    scheme = cfg.scheme()
    model = cfg.model()
    out = _outdir(cfg, args.out)
    ccfg = cfg.continuation_config()
    freq = cfg.frequency_vector()
    rho_targets = [float(r) for r in cfg.data["forcing"]["ratios"]]
    factory = None
    if ccfg.parameter != "omega1":
        factory = cfg.model_factory(ccfg.parameter)
    system = TorusSystem(model, scheme, freq, ccfg,
                         rho_targets=rho_targets or None,
                         model_factory=factory)
    if args.seed_from:
        coeffs, snap_scheme, _ = shooting.load_snapshot(args.seed_from)
        if snap_scheme.to_dict() != scheme.to_dict():
            raise ConfigError("snapshot scheme differs from config scheme")
    else:
        coeffs = _seed_coefficients(cfg, scheme, model)
    if ccfg.parameter == "omega1":
        p0 = coeffs.freq.omega[0]
    else:
        p0 = float(cfg.data["model"]["params"].get(ccfg.parameter))
        if p0 is None:
            raise ConfigError("model parameter '%s' missing from config"
                              % ccfg.parameter)
    x0, p0 = system.pack(coeffs, p0)
    branch = continuation.run_branch(system, x0, p0, ccfg)
    csv_path = os.path.join(out, "branch.csv")
    continuation.write_branch_csv(csv_path, branch, scheme.d)
    continuation.write_branch_sidecar(os.path.join(out, "branch_points.json"),
                                      branch, scheme, cfg.e,
                                      config_dict=cfg.resolved())
    print("branch: %d points, termination: %s -> %s"
          % (len(branch.points), branch.termination, csv_path))
    return 0


def cmd_stability(cfg, args):
    scheme_cfg = cfg.scheme()
    model = cfg.model()
    out = _outdir(cfg, args.out)
    coeffs, scheme, data = shooting.load_snapshot(args.snapshot)
    if scheme.to_dict() != scheme_cfg.to_dict():
        raise ConfigError("snapshot scheme differs from config scheme")
    report = stability.stability_report(
        model, coeffs, scheme, int(cfg.data["torus"]["s1"]),
        n_ly=int(cfg.data["stability"]["n_ly"]),
        workers=int(cfg.data["run"]["workers"]))
    if not np.all(np.isfinite(report.exponents)):
        raise StabilityError("non-finite Lyapunov exponents")
    path = os.path.join(out, "stability.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["order", "exponent"])
        for h, s in enumerate(report.exponents, start=1):
            wr.writerow([h, repr(float(s))])
        wr.writerow(["flag", report.flag])
    if args.history:
        hist_path = os.path.join(out, "stability_history.csv")
        with open(hist_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["period"] + ["sigma_%d" % (h + 1)
                                      for h in range(report.history.shape[1])])
            for i, row in enumerate(report.history, start=1):
                wr.writerow([i] + [repr(float(v)) for v in row])
    print("flag: %s, leading exponents: %s -> %s"
          % (report.flag,
             ", ".join("%.6g" % v for v in report.exponents[:3]), path))
    return 0


def cmd_check(cfg, args):
    failures = checks.run_checks()
    return 2 if failures else 0


def cmd_bench(cfg, args):
    scheme = cfg.scheme()
    model = cfg.model()
    out = _outdir(cfg, args.out)
    freq = cfg.frequency_vector()
    S1 = int(cfg.data["torus"]["s1"])
    rng = np.random.default_rng(int(cfg.data["run"]["seed"]))
    z0 = 0.05 * rng.standard_normal(2 * model.n * scheme.s_tilde)
    workers_list = [int(w) for w in args.workers.split(",")]
    rows = []
    baseline = None
    reference = None
    for w in workers_list:
        integrate_batch(model, z0, freq, scheme, S1, workers=w)  # warm-up
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            res = integrate_batch(model, z0, freq, scheme, S1, workers=w)
            best = min(best, time.perf_counter() - t0)
        if reference is None:
            reference = res
            identical = True
        else:
            identical = (np.array_equal(res.terminal, reference.terminal)
                         and np.array_equal(res.psi, reference.psi))
        if baseline is None:
            baseline = best
        speedup = baseline / best
        rows.append((w, best, speedup, speedup / w, identical))
        print("workers %2d: %8.3f s  speedup %5.2f  efficiency %5.3f  "
              "bit-identical %s" % (w, best, speedup, speedup / w, identical))
    path = os.path.join(out, "bench.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["workers", "seconds", "speedup", "efficiency",
                     "bit_identical"])
        for row in rows:
            wr.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]),
                         row[4]])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qptorus",
        description="Quasi-periodic torus solver: solve, continue and "
                    "classify invariant tori of second-order models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("solve", help="single-point Newton solve")
    add_common(p)
    p.add_argument("--seed-from", default=None, help="snapshot to start from")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("continue", help="trace a solution branch")
    add_common(p)
    p.add_argument("--seed-from", default=None, help="snapshot to start from")
    p.set_defaults(fn=cmd_continue)

    p = sub.add_parser("stability", help="Lyapunov report for a snapshot")
    add_common(p)
    p.add_argument("snapshot", help="solution snapshot (JSON)")
    p.add_argument("--history", action="store_true",
                   help="also dump the running-estimate history")
    p.set_defaults(fn=cmd_stability)

    p = sub.add_parser("check", help="run the invariant suite")
    add_common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="time the trajectory batch per worker count")
    add_common(p)
    p.add_argument("--workers", default="1,2,4",
                   help="comma-separated worker counts")
    p.add_argument("--repeats", type=int, default=3,
                   help="timing repetitions (best-of)")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
    except (OSError, yaml.YAMLError) as err:
        print("config error: %s" % err, file=sys.stderr)
        return 1
    except _CONFIG_ERRORS as err:
        print("config error: %s" % err, file=sys.stderr)
        return 1
    try:
        return args.fn(cfg, args)
    except _CONFIG_ERRORS as err:
        print("config error: %s" % err, file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as err:
        print("numerical failure: %s" % err, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
