"""Command-line entry point: validate | solve | simulate | verify.

Exit codes: 0 success, 1 domain/validation failure, 2 input parse failure,
3 numerical blow-up, 4 verification failure.  All outputs land under the
--out directory; reruns with the same configuration replace them
deterministically.  Numbers are printed with 17 significant digits so CSV
round-trips are bit-faithful.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .closedloop import build_feedback, simulate_equilibrium
from .errors import BlowUpError, SpecFormatError, StackLQError
from .model import load_spec, solver_times, validate_spec
from .montecarlo import estimate_cost
from .riccati import riccati_residuals, solve_game
from .rng import NoisePlan
from .verify import VerifyConfig, run_verification

log = logging.getLogger("stacklq")

FMT = "%.17g"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARSE = 2
EXIT_BLOWUP = 3
EXIT_VERIFY = 4


def _setup_logging():
    level = os.environ.get("STACKLQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")


def _write_trajectory_csv(path: Path, times, values):
    """Columns t,row,col,value; vectors use col=0."""
    vals = np.asarray(values)
    if vals.ndim == 2:
        vals = vals[:, :, None]
    with open(path, "w") as fh:
        fh.write("t,row,col,value\n")
        for k, t in enumerate(times):
            M = vals[k]
            for i in range(M.shape[0]):
                for j in range(M.shape[1]):
                    fh.write(f"{FMT % t},{i},{j},{FMT % M[i, j]}\n")


def _write_gains_csv(path: Path, law):
    names = ("K1", "k1", "K2hat", "K2check", "k2", "K3", "K3hat", "K3check",
             "k3", "Kv2check", "Kv3hat", "Kv3check")
    with open(path, "w") as fh:
        fh.write("t,gain,row,col,value\n")
        for k, t in enumerate(law.times):
            for name in names:
                M = getattr(law, name)[k]
                if M.ndim == 1:
                    M = M[:, None]
                for i in range(M.shape[0]):
                    for j in range(M.shape[1]):
                        fh.write(f"{FMT % t},{name},{i},{j},{FMT % M[i, j]}\n")


def _write_paths_csv(path: Path, bundle, n: int, thin: int = 1):
    blocks = [("x", bundle.X3, 0, n), ("psi2", bundle.X3, n, 2 * n),
              ("Psi3", bundle.X3, 2 * n, 4 * n),
              ("x_hat", bundle.X3hat, 0, n), ("psi2_hat", bundle.X3hat, n, 2 * n),
              ("Psi3_hat", bundle.X3hat, 2 * n, 4 * n),
              ("x_check", bundle.X3check, 0, n),
              ("psi2_check", bundle.X3check, n, 2 * n),
              ("Psi3_check", bundle.X3check, 2 * n, 4 * n),
              ("v1", bundle.v1, 0, n), ("v2", bundle.v2, 0, n),
              ("v3", bundle.v3, 0, n)]
    with open(path, "w") as fh:
        fh.write("path_id,t,block,component,value\n")
        for pid in range(bundle.X3.shape[0]):
            for k in range(0, bundle.times.shape[0], thin):
                t = bundle.times[k]
                for name, arr, a, b in blocks:
                    row = arr[pid, k]
                    for c in range(a, b):
                        fh.write(f"{pid},{FMT % t},{name},{c - a},"
                                 f"{FMT % row[c]}\n")


def _load(args):
    if args.paths < 1:
        raise SpecFormatError("--paths must be at least 1")
    spec = load_spec(args.spec)
    if args.steps is not None:
        spec = dataclasses.replace(
            spec, grid=dataclasses.replace(spec.grid, steps=args.steps))
    if getattr(args, "rho_min", None) is not None:
        spec = dataclasses.replace(spec, rho_min=args.rho_min)
    return spec


def cmd_validate(args) -> int:
    spec = _load(args)
    report = validate_spec(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "validation.txt").write_text(str(report) + "\n")
    print(report)
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_solve(args) -> int:
    spec = _load(args)
    report = validate_spec(spec)
    if not report.valid:
        print(report, file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle, offsets = solve_game(spec)
    law = build_feedback(bundle, offsets, spec)
    for name in ("p", "P1", "P2", "Pf1", "Pf2", "Pf3"):
        traj = getattr(bundle, name)
        _write_trajectory_csv(out / f"{name}.csv", traj.times, traj.values)
    _write_trajectory_csv(out / "Omega.csv", offsets.times, offsets.Omega.values)
    _write_gains_csv(out / "gains.csv", law)
    res = riccati_residuals(spec, bundle, offsets)
    lines = ["terminal conditions set exactly at T"]
    lines += [f"max centered-difference residual {k}: {v:.6e}"
              for k, v in sorted(res.items())]
    (out / "solve_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load(args)
    report = validate_spec(spec)
    if not report.valid:
        print(report, file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle, offsets = solve_game(spec)
    law = build_feedback(bundle, offsets, spec)
    plan = NoisePlan.from_seed(args.seed, np.diff(solver_times(spec)))
    paths = simulate_equilibrium(spec, law, plan, args.paths)
    _write_paths_csv(out / "paths.csv", paths, spec.n, thin=args.thin)
    with open(out / "costs.csv", "w") as fh:
        fh.write("player,mean,stderr,n_paths,seed,grid_steps\n")
        for player in (1, 2, 3):
            est = estimate_cost(spec, player, paths, seed=args.seed)
            fh.write(f"{player},{FMT % est.mean},{FMT % est.stderr},"
                     f"{est.n_paths},{est.seed},{est.grid_steps}\n")
    print(f"simulated {args.paths} paths on {spec.grid.steps} steps "
          f"(seed {args.seed})")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load(args)
    report = validate_spec(spec)
    if not report.valid:
        print(report, file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eps = tuple(float(e) for e in args.epsilons.split(","))
    cfg = VerifyConfig(seed=args.seed, n_paths=args.paths, epsilons=eps,
                       threads=args.threads, gain_scale=args.sabotage_gains)
    checks, artifacts = run_verification(spec, cfg)
    payload = [{"id": cid, "passed": bool(ok), "detail": detail}
               for cid, ok, detail in checks]
    (out / "verify_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    with open(out / "variational.csv", "w") as fh:
        fh.write("player,direction_id,epsilon,mean,stderr,n_paths,seed\n")
        for rep in artifacts["perturbations"]:
            for eps_v, cost in zip(rep.epsilons, rep.costs):
                fh.write(f"{rep.player},{rep.direction_id},{FMT % eps_v},"
                         f"{FMT % cost.mean},{FMT % cost.stderr},"
                         f"{cost.n_paths},{cost.seed}\n")
    with open(out / "oracle.csv", "w") as fh:
        fh.write("time,sigma_field,component,filter_value,oracle_mean,"
                 "oracle_stderr\n")
        for r in artifacts["oracle_rows"]:
            if r.target != "X3hat":
                continue
            fh.write(f"{FMT % r.time},{r.sigma_field},{r.component},"
                     f"{FMT % r.filter_value},{FMT % r.oracle_mean},"
                     f"{FMT % r.oracle_stderr}\n")
    all_ok = True
    for cid, ok, detail in checks:
        all_ok &= ok
        print(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    if not all_ok:
        failing = ",".join(c["id"] for c in payload if not c["passed"])
        print(f"verification failed: {failing}", file=sys.stderr)
    return EXIT_OK if all_ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stacklq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="game spec JSON file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--paths", type=int, default=256)
    common.add_argument("--steps", type=int, default=None,
                        help="override the spec's grid steps")
    common.add_argument("--threads", type=int, default=1,
                        help="worker cap for Monte Carlo internals; results "
                             "are independent of this value")
    common.add_argument("--rho-min", type=float, default=None,
                        help="override the minimum eigenvalue required of "
                             "the control weights R_i")
    sub.add_parser("validate", parents=[common]).set_defaults(fn=cmd_validate)
    sub.add_parser("solve", parents=[common]).set_defaults(fn=cmd_solve)
    sim = sub.add_parser("simulate", parents=[common])
    sim.add_argument("--thin", type=int, default=1,
                     help="write every k-th grid node to paths.csv")
    sim.set_defaults(fn=cmd_simulate)
    ver = sub.add_parser("verify", parents=[common])
    ver.add_argument("--epsilons", default="0.05,0.1,0.2")
    ver.add_argument("--sabotage-gains", type=float, default=1.0,
                     help="test hook: scale the follower gain before the "
                          "variational check (1.0 = off)")
    ver.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SpecFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BlowUpError as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except StackLQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
