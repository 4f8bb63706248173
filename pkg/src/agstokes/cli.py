"""Command line interface: ``agstokes {convergence,moving,demo,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .experiments import (
    ExperimentConfig,
    config_from_mapping,
    fit_slope,
    read_config_file,
    run_convergence,
    run_demo,
    run_moving_domain,
)

log = logging.getLogger("agstokes")

# CLI flag -> config key; None defaults mean "not given" so the config file can supply them
_FLAGS = {
    "dim": ("--dim", int),
    "levels": ("--levels", str),
    "space": ("--space", str),
    "extension": ("--extension", str),
    "stabilization": ("--stabilization", str),
    "tau_nitsche": ("--tau-nitsche", float),
    "tau_j1": ("--tau-j1", float),
    "tau_j2": ("--tau-j2", float),
    "eta0": ("--eta0", float),
    "geometry": ("--geometry", str),
    "out": ("--out", str),
    "seed": ("--seed", int),
    "m": ("--m", int),
    "n_samples": ("--samples", int),
    "problem": ("--problem", str),
    "demo": ("--demo", str),
    "solver": ("--solver", str),
}

_CHOICES = {
    "space": ["aggregated", "standard"],
    "extension": ["standard", "serendipity"],
    "stabilization": ["none", "alg2", "alg3"],
    "dim": [2, 3],
    "problem": ["manufactured", "patch"],
    "demo": ["poiseuille", "zero_inflow", "lid_driven"],
    "solver": ["auto", "superlu", "schur"],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command line flags override it")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (flag, typ) in _FLAGS.items():
        common.add_argument(flag, dest=key, type=typ, default=None, choices=_CHOICES.get(key))
    p = argparse.ArgumentParser(prog="agstokes", description="Aggregated unfitted finite elements for Stokes flow.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("convergence", parents=[common], help="manufactured-solution convergence study (CSV)")
    sub.add_parser("moving", parents=[common], help="condition numbers along a moving obstacle (CSV)")
    sub.add_parser("demo", parents=[common], help="solve a demo problem and export fields (VTK)")
    sub.add_parser("selftest", parents=[common], help="quick end-to-end consistency checks")
    return p


def resolve_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return config_from_mapping(values)


def _selftest(cfg: ExperimentConfig) -> int:
    from .cutcell import total_measures
    from .estimator import AgFEMStokes
    from .geometry import circle_cavity, classify
    from .mesh import unit_box_mesh
    from .problems import patch_solution

    checks = []
    mesh = unit_box_mesh(2, 4)
    vol, area = total_measures(mesh, classify(mesh, circle_cavity()))
    checks.append(("domain area", abs(vol - (1 - 0.09 * np.pi)) < 1e-2))
    checks.append(("boundary length", abs(area - 0.6 * np.pi) < 2e-2))
    prob = patch_solution(2)
    for stab, ext in (("alg2", "standard"), ("alg3", "serendipity")):
        est = AgFEMStokes(stabilization=stab, extension=ext).fit(mesh, circle_cavity(), prob)
        x = est.dofs_.interpolate(prob.u, prob.p)
        checks.append((f"patch test {stab}", float(np.abs(est.solution_ - x).max()) < 1e-8))
    h = np.array([0.5, 0.25, 0.125])
    checks.append(("slope fit", abs(fit_slope(h, 3 * h**2) - 2) < 1e-12))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"agstokes: error: {exc}", file=sys.stderr)
        return 2
    np.random.seed(cfg.seed)
    if args.command == "convergence":
        rows, text = run_convergence(cfg)
        if not cfg.out:
            sys.stdout.write(text)
        h = [r["h"] for r in rows]
        for key in ("errH1_u", "errL2_u", "errL2_p", "kappa1"):
            log.info("slope %s: %.3f", key, fit_slope(h, [r[key] for r in rows]))
        return 0
    if args.command == "moving":
        rows, text = run_moving_domain(cfg)
        if not cfg.out:
            sys.stdout.write(text)
        return 0
    if args.command == "demo":
        _, summary = run_demo(cfg)
        for k, v in summary.items():
            print(f"{k}: {v}")
        return 0
    return _selftest(cfg)


if __name__ == "__main__":
    sys.exit(main())
