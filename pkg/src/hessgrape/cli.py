"""Command-line entry point.

    hessgrape run CONFIG          paired multistart campaign
    hessgrape sweep CONFIG        same, tabulated against duration
    hessgrape check-derivatives CONFIG
    hessgrape demo-two-level

Exit codes: 0 success, 2 configuration error, 3 every run failed (or, for
``check-derivatives``, a derivative check exceeded its tolerance).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .experiment import ConfigError, ExperimentConfig, build_objective, load_config, run_experiment
from .models import two_level_example
from .objective import ControlPulse, GateObjective
from .optimize import BFGS, GRADIENT_DESCENT, NEWTON, OptimizerConfig, SeedSpec, gradient_descent_fixed, minimize

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3

GRAD_TOL, HESS_TOL = 1e-6, 1e-5
DEMO_START = (-0.915, 2.251)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hessgrape", description="Pulse optimization with exact Hessians.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("config", type=Path)
        p.add_argument("--seeds", type=int)
        p.add_argument("--modes", help="comma-separated optimizer modes")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int)
        p.add_argument("--backend", choices=("diagonalization", "taylor"))

    overrides(sub.add_parser("run", help="run a paired multistart campaign"))
    sw = sub.add_parser("sweep", help="campaign over several gate durations")
    overrides(sw)
    sw.add_argument("--durations", help="comma-separated durations overriding the config")
    cd = sub.add_parser("check-derivatives", help="compare derivatives against finite differences")
    overrides(cd)
    cd.add_argument("--samples", type=int, default=3)
    demo = sub.add_parser("demo-two-level", help="two-level trap example from a fixed start")
    demo.add_argument("--out", help="directory for iterate paths")
    demo.add_argument("--fixed-step", type=float, default=0.1)
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.modes:
        changes["modes"] = [m.strip() for m in args.modes.split(",") if m.strip()]
    if args.out:
        changes["output"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.backend:
        changes["backend"] = args.backend
    if getattr(args, "durations", None):
        changes["durations"] = [float(d) for d in args.durations.split(",")]
    return cfg.replace(**changes) if changes else cfg


def _progress(rec):
    status = f"J={rec.J:.3e}" if rec.report is not None else f"failed: {rec.error}"
    print(f"  seed {rec.seed_index:3d} {rec.mode:22s} {status}", file=sys.stderr, flush=True)


def cmd_campaign(cfg: ExperimentConfig, verbose: bool) -> int:
    summary = run_experiment(cfg, progress=_progress if verbose else None)
    print(f"{'duration':>10} {'mode':22s} {'best J':>11} {'mean J':>11} {'mean evals':>10}")
    for s in summary.stats():
        best = "n/a" if s["best_J"] is None else f"{s['best_J']:.3e}"
        mean = "n/a" if s["mean_J"] is None else f"{s['mean_J']:.3e}"
        evals = "n/a" if s["mean_n_fun"] is None else f"{s['mean_n_fun']:.1f}"
        print(f"{s['duration']:10g} {s['mode']:22s} {best:>11} {mean:>11} {evals:>10}")
    print(f"results written to {cfg.output}")
    return EXIT_FAILED if summary.all_failed else EXIT_OK


def fd_errors(obj: GateObjective, x: np.ndarray, h: float = 1e-6) -> tuple[float, float, float]:
    """Max relative errors of gradient and Hessian against central differences,
    and the Hessian asymmetry."""
    _, g, H = obj(x, 2)
    n = x.size
    g_fd = np.empty(n)
    H_fd = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fp, gp, _ = obj(x + e, 1)
        fm, gm, _ = obj(x - e, 1)
        g_fd[i] = (fp - fm) / (2 * h)
        H_fd[:, i] = (gp - gm) / (2 * h)
    gerr = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-300)
    herr = np.linalg.norm(H - H_fd) / max(np.linalg.norm(H_fd), 1e-300)
    return float(gerr), float(herr), float(np.max(np.abs(H - H.T)))


def cmd_check(cfg: ExperimentConfig, samples: int) -> int:
    worst = 0.0
    ok = True
    for duration in cfg.durations:
        obj, template = build_objective(cfg, duration)
        lo, hi = template.flat_bounds()
        lo, hi = np.where(np.isfinite(lo), lo, -1.0), np.where(np.isfinite(hi), hi, 1.0)
        for i in range(samples):
            x = SeedSpec(cfg.base_seed + i).draw(lo, hi)
            gerr, herr, asym = fd_errors(obj, x)
            ok &= gerr <= GRAD_TOL and herr <= HESS_TOL and asym == 0.0
            worst = max(worst, gerr, herr)
            print(f"T={duration:g} sample {i}: grad rel err {gerr:.2e}  hess rel err {herr:.2e}  "
                  f"asymmetry {asym:.1e}")
    print(f"max relative error {worst:.2e} ({'ok' if ok else 'FAILED'})")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_demo(out: str | None, fixed_step: float) -> int:
    system = two_level_example()
    T = 3 * np.pi / 2
    template = ControlPulse(np.zeros((2, 1)), T / 2)
    obj = GateObjective(system, template)
    x0 = np.array(DEMO_START)
    box = (np.full(2, -5.0), np.full(2, 5.0))
    runs = {
        NEWTON: minimize(obj, x0, box, OptimizerConfig(mode=NEWTON)),
        BFGS: minimize(obj, x0, box, OptimizerConfig(mode=BFGS)),
        GRADIENT_DESCENT: gradient_descent_fixed(
            obj, x0, OptimizerConfig(mode=GRADIENT_DESCENT, fixed_step=fixed_step, max_iterations=10000)),
    }
    print(f"H = sigma_x + c(t) sigma_z, target X, T = 3pi/2, N = 2, start {DEMO_START}")
    for mode, rep in runs.items():
        print(f"{mode:22s} c = ({rep.x[0]: .6f}, {rep.x[1]: .6f})  J = {rep.J:.3e}  "
              f"iterations {rep.iterations}  ({rep.reason})")
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        for mode, rep in runs.items():
            path = np.array(rep.path)
            J = np.array(rep.history)
            np.savetxt(d / f"path_{mode}.csv", np.column_stack([np.arange(len(J)), path, J]),
                       delimiter=",", header="iteration,c0,c1,J", comments="")
        print(f"iterate paths written to {d}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "demo-two-level":
        return cmd_demo(args.out, args.fixed_step)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "check-derivatives":
            return cmd_check(cfg, args.samples)
        return cmd_campaign(cfg, args.verbose)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
