"""End-to-end verification checks behind the `verify` CLI command.

Each check returns (check_id, passed, detail).  The scales here are CLI
defaults; the package's acceptance test suite runs the same content at its
pinned scales and tolerances.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .closedloop import ansatz_residual, build_feedback, simulate_equilibrium
from .errors import ReductionError
from .lift import bdiag
from .model import GameSpec, solver_times, validate_spec
from .montecarlo import default_directions, particle_filter, variational_test
from .oracle import crosscheck_p
from .riccati import riccati_residuals, solve_game
from .rng import NoisePlan


@dataclasses.dataclass
class VerifyConfig:
    seed: int = 42
    n_paths: int = 4000
    epsilons: tuple = (0.05, 0.1, 0.2)
    threads: int = 1
    gain_scale: float = 1.0
    tower_outer: int = 8
    tower_inner: int = 300


def _with_steps(spec: GameSpec, steps: int) -> GameSpec:
    return dataclasses.replace(spec, grid=dataclasses.replace(spec.grid, steps=steps))


def _zero_noise(spec: GameSpec) -> GameSpec:
    from .model import Coefficient
    n = spec.n
    zv = Coefficient.constant(np.zeros(n))
    zm = Coefficient.constant(np.zeros((n, n)))
    coeffs = dataclasses.replace(spec.coeffs, sigma=(zv, zv, zv), C=(zm, zm, zm))
    return dataclasses.replace(spec, coeffs=coeffs)


def check_terminals(spec, bundle, offsets):
    n = spec.n
    G1 = spec.costs.players[0].G
    calG2 = bdiag(spec.costs.players[1].G, np.zeros((n, n)))
    frakG3 = bdiag(bdiag(spec.costs.players[2].G, np.zeros((n, n))),
                   np.zeros((2 * n, 2 * n)))
    gaps = {
        "p": np.abs(bundle.p.terminal - G1).max(),
        "P1": np.abs(bundle.P1.terminal - calG2).max(),
        "P2": np.abs(bundle.P2.terminal).max(),
        "Pf1": np.abs(bundle.Pf1.terminal - frakG3).max(),
        "Pf2": np.abs(bundle.Pf2.terminal).max(),
        "Pf3": np.abs(bundle.Pf3.terminal).max(),
        "Omega": np.abs(offsets.Omega.terminal).max(),
    }
    worst = max(gaps.values())
    return ("terminal_conditions", worst == 0.0,
            f"max terminal gap {worst:.3e} (exact required)")


def check_residual_order(spec):
    """Centred-difference residuals must scale like C h^2 with stable C."""
    steps = spec.grid.steps
    rows = {}
    for s in (steps, 2 * steps):
        sp = _with_steps(spec, s)
        b, o = solve_game(sp)
        res = riccati_residuals(sp, b, o)
        h = sp.horizon / s
        rows[s] = {k: v / h**2 for k, v in res.items()}
    ratios = {k: (rows[2 * steps][k] / rows[steps][k]) if rows[steps][k] > 0 else 1.0
              for k in rows[steps]}
    ok = all(0.25 <= r <= 4.0 for r in ratios.values())
    detail = ", ".join(f"{k}:C={rows[steps][k]:.2e},ratio={ratios[k]:.2f}"
                       for k in sorted(ratios))
    return ("residual_order", ok, detail)


def check_p_psd(spec, bundle):
    worst = min(float(np.linalg.eigvalsh(M).min()) for M in bundle.p.values)
    return ("p_psd", worst >= -1e-8, f"min eigenvalue {worst:.3e}")


def check_measurability(spec, law, seed, n_paths=32):
    dts = np.diff(solver_times(spec))
    plan = NoisePlan.from_seed(seed, dts)
    base = simulate_equilibrium(spec, law, plan, n_paths)
    w1 = simulate_equilibrium(spec, law, plan.with_component_seed(0, seed + 99), n_paths)
    w2 = simulate_equilibrium(spec, law, plan.with_component_seed(1, seed + 99), n_paths)
    ok = (np.array_equal(base.X3hat, w1.X3hat)
          and np.array_equal(base.X3check, w1.X3check)
          and np.array_equal(base.X3check, w2.X3check))
    # the reseeded component must actually move the state when it is wired in
    c = spec.coeffs
    if np.abs(c.C[0].values).max() + np.abs(c.sigma[0].values).max() > 0:
        ok = ok and not np.array_equal(base.X3, w1.X3)
    if np.abs(c.C[1].values).max() + np.abs(c.sigma[1].values).max() > 0:
        ok = ok and not np.array_equal(base.X3hat, w2.X3hat)
    return ("filter_measurability", ok,
            "hat/check filters bit-identical under W1- and W2-only reseeding")


def check_zero_noise_nesting(spec, seed, n_paths=4):
    sp = _zero_noise(spec)
    b, o = solve_game(sp)
    law = build_feedback(b, o, sp)
    plan = NoisePlan.from_seed(seed, np.diff(solver_times(sp)))
    paths = simulate_equilibrium(sp, law, plan, n_paths)
    gap = max(np.abs(paths.X3 - paths.X3hat).max(),
              np.abs(paths.X3 - paths.X3check).max())
    return ("zero_noise_nesting", gap <= 1e-12,
            f"max level gap without noise {gap:.3e} (<= 1e-12)")


def check_ansatz_residual(spec, seed, n_paths=100):
    worsts = []
    for s in (spec.grid.steps, 2 * spec.grid.steps):
        sp = _with_steps(spec, s)
        b, o = solve_game(sp)
        law = build_feedback(b, o, sp)
        plan = NoisePlan.from_seed(seed, np.diff(solver_times(sp)))
        dW = plan.increments(np.arange(n_paths))
        paths = simulate_equilibrium(sp, law, dW)
        worsts.append(ansatz_residual(sp, b, o, paths, dW))
    ratio = worsts[1] / worsts[0] if worsts[0] > 0 else 0.5
    ok = 0.25 <= ratio <= 0.75
    return ("ansatz_residual", ok,
            f"mismatch {worsts[0]:.3e} -> {worsts[1]:.3e} on halved step "
            f"(ratio {ratio:.2f}, want 0.5 +/- 50%)")


def check_tower(spec, law, cfg: VerifyConfig):
    T = spec.horizon
    tts = np.linspace(0.2, 0.9, 3) * T
    h = T / spec.grid.steps
    rows = particle_filter(spec, law, tts, "G1", cfg.tower_outer,
                           cfg.tower_inner, cfg.seed + 5)
    worst = 0.0
    ok = True
    for r in rows:
        if r.target != "X3hat":
            continue
        tol = 3.0 * (r.oracle_stderr + 2.0 * h)
        gap = abs(r.oracle_mean - r.filter_value)
        worst = max(worst, gap - tol)
        ok = ok and gap <= tol
    return ("tower_oracle", ok, f"worst (gap - tol) = {worst:.3e}"), rows


def check_variational(spec, law, bundle, cfg: VerifyConfig):
    results = []
    reports = []
    for player in (1, 2, 3):
        dirs = default_directions(spec, include_feedback=(player == 1))[:5]
        fails = []
        for d in dirs:
            rep = variational_test(spec, player, d, cfg.epsilons, cfg.n_paths,
                                   cfg.seed, law, bundle,
                                   gain_scale=cfg.gain_scale if player == 1 else 1.0,
                                   threads=cfg.threads)
            reports.append(rep)
            if abs(rep.slope0) > 2.0 * rep.slope_stderr or not rep.curvature_ok:
                fails.append(f"{d.id}(z={rep.slope0 / rep.slope_stderr:+.1f})")
        results.append((f"variational_p{player}", not fails,
                        "all slopes within 2 stderr" if not fails
                        else "failed: " + ", ".join(fails)))
    return results, reports


def check_dp(spec):
    try:
        reps = [crosscheck_p(spec, steps=s) for s in (250, 500, 1000)]
    except ReductionError:
        return None, []
    rep = reps[-1]
    ok = rep.gap_S0 <= 0.01
    return ("dp_crosscheck", ok,
            f"|S0 - p(0)|/(1+|p0|) = {rep.gap_S0:.3e}, "
            f"value gap {rep.gap_value:.3e}"), reps


def run_verification(spec: GameSpec, cfg: VerifyConfig):
    """All checks; returns (list of (id, ok, detail), artifacts dict)."""
    report = validate_spec(spec)
    if not report.valid:
        raise ValueError(str(report))
    bundle, offsets = solve_game(spec)
    law = build_feedback(bundle, offsets, spec)
    tower_check, oracle_rows = check_tower(spec, law, cfg)
    checks = [
        check_terminals(spec, bundle, offsets),
        check_residual_order(spec),
        check_p_psd(spec, bundle),
        check_measurability(spec, law, cfg.seed),
        check_zero_noise_nesting(spec, cfg.seed),
        check_ansatz_residual(spec, cfg.seed),
        tower_check,
    ]
    var_checks, var_reports = check_variational(spec, law, bundle, cfg)
    checks.extend(var_checks)
    dp = check_dp(spec)
    if dp is not None:
        checks.append(dp)
    return checks, {"bundle": bundle, "offsets": offsets, "law": law,
                    "oracle_rows": oracle_rows, "perturbations": var_reports}
