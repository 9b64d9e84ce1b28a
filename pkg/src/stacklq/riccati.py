"""Backward integration of the solver's matrix ODE ladder.

One classical fourth-order pass integrates, in dependency order, the
follower gain p (n x n), the middle pair P1/P2 (2n x 2n), the top triple
Pf1/Pf2/Pf3 (4n x 4n) and the affine offset Omega (4n).  All equations are
integrated jointly so stage values of lower levels are available exactly
where higher levels need them; the grid is the uniform one refined with
every coefficient breakpoint, so no step straddles a jump.

Offsets: with deterministic coefficients the offset backward SDEs admit
deterministic solutions with zero martingale integrands and with all
conditional-expectation decorations equal to the process itself, so Omega
collapses to a linear backward ODE.  The 2n offset Phi and the n offset
phi_check are the corresponding blocks of Omega under the stacking ansatz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConsistencyError
from .lift import (DERIVED, CoeffValues, Level1Coeffs, Level2Coeffs,
                   Level2ClosedLoop, Level3Coeffs, bdiag, build_level1,
                   build_level2, build_level2_closedloop, build_level3,
                   level1_at, level2_at, level2_closedloop_at, level3_at)
from .model import GameSpec, solver_times

BLOWUP_LIMIT = 1e12
P_ASYM_TOL = 1e-9


@dataclass(frozen=True)
class MatrixTrajectory:
    """A matrix- or vector-valued function sampled on the solver grid."""

    times: np.ndarray
    values: np.ndarray  # (K+1, ...) one value per node

    @property
    def terminal(self):
        return self.values[-1]

    @property
    def initial(self):
        return self.values[0]


@dataclass(frozen=True)
class RiccatiBundle:
    times: np.ndarray
    p: MatrixTrajectory
    P1: MatrixTrajectory
    P2: MatrixTrajectory
    Pf1: MatrixTrajectory
    Pf2: MatrixTrajectory
    Pf3: MatrixTrajectory
    l1: Level1Coeffs
    l2: Level2Coeffs
    l2cl: Level2ClosedLoop
    l3: Level3Coeffs
    convention: str


@dataclass(frozen=True)
class OffsetBundle:
    times: np.ndarray
    Omega: MatrixTrajectory      # 4n
    Phi: MatrixTrajectory        # 2n, lower half of Omega
    phi_check: MatrixTrajectory  # n, lower quarter of Omega


# ---------------------------------------------------------------------------
# right-hand sides (backward equations written as dM/dt = f(t, M, ...))
# ---------------------------------------------------------------------------

def _rhs_p(cv: CoeffValues, p):
    B1 = cv.B[0]
    acc = p @ cv.A + cv.A.T @ p - p @ B1 @ cv.Rinv[0] @ B1.T @ p + cv.Q[0]
    for Ci in cv.C:
        acc = acc + Ci.T @ p @ Ci
    return -acc


def _rhs_P1(cv, l2, P1, convention):
    K = l2["calB2"] @ cv.Rinv[1]
    S = l2["calF1"] - K @ l2["calB2"].T
    acc = P1 @ l2["calA1"] + l2["calA1"].T @ P1 + P1 @ S @ P1 + l2["calQ2"]
    for name in ("calC1", "calC2", "calC3"):
        Ci = l2[name]
        acc = acc + Ci.T @ P1 @ Ci
    if convention != DERIVED:
        acc = acc - l2["calF2"].T @ cv.Rinv[1] @ l2["calB2"].T @ P1
    return -acc


def _rhs_P2(cv, l2, P1, P2, convention):
    Rinv2 = cv.Rinv[1]
    cB2, cF2 = l2["calB2"], l2["calF2"]
    K = cB2 @ Rinv2
    S = l2["calF1"] - K @ cB2.T
    A12 = l2["calA1"] + l2["calA2"]
    P12 = P1 + P2
    FRB = cF2.T @ Rinv2 @ cB2.T
    acc = (P2 @ A12 + A12.T @ P2
           + l2["calA2"].T @ P1 + P1 @ l2["calA2"]
           + P1 @ S @ P2 + P2 @ S @ P1 + P2 @ S @ P2
           + l2["calC3"].T @ P2 @ l2["calC3"]
           - P12 @ K @ cF2 - FRB @ P2 - cF2.T @ Rinv2 @ cF2)
    if convention == DERIVED:
        acc = acc - FRB @ P1
    return -acc


def _rhs_Pf1(cv, l3, Pf1):
    Rinv3 = cv.Rinv[2]
    Ma = l3["frakA1"] - l3["frakB3"] @ Rinv3 @ l3["Fa"]
    Sbar = l3["frakF1bar"] - l3["frakB3"] @ Rinv3 @ l3["frakB3"].T
    acc = (Pf1 @ Ma + Ma.T @ Pf1 + Pf1 @ Sbar @ Pf1 + l3["frakQ3"]
           - l3["Fa"].T @ Rinv3 @ l3["Fa"])
    for name in ("frakC1", "frakC2", "frakC3"):
        Ci = l3[name]
        acc = acc + Ci.T @ Pf1 @ Ci
    return -acc


def _rhs_Pf2(cv, l3, Pf1, Pf2):
    Rinv3 = cv.Rinv[2]
    Mb = l3["frakA1"] + l3["frakA2"] - l3["frakB3"] @ Rinv3 @ l3["Fa"]
    S = l3["frakF1dd"] - l3["frakB3"] @ Rinv3 @ l3["frakB3"].T
    acc = (Pf2 @ Mb + Mb.T @ Pf2
           + Pf1 @ S @ Pf2 + Pf2 @ S @ Pf1 + Pf2 @ S @ Pf2
           + l3["frakQ3dd"] + Pf1 @ l3["frakA2"] + l3["frakA2"].T @ Pf1
           + Pf1 @ (l3["frakF1dd"] - l3["frakF1bar"]) @ Pf1)
    for name in ("frakC2", "frakC3"):
        Ci = l3[name]
        acc = acc + Ci.T @ Pf2 @ Ci
    return -acc


def _rhs_Pf3(cv, l3, Pf1, Pf2, Pf3):
    Rinv3 = cv.Rinv[2]
    Fa, Fb, B3f = l3["Fa"], l3["Fb"], l3["frakB3"]
    S = l3["frakF1dd"] - B3f @ Rinv3 @ B3f.T
    Mc = (l3["frakA1"] + l3["frakA2"] + l3["frakA3"]
          - B3f @ Rinv3 @ (Fa + Fb))
    Md = l3["frakA3"] - B3f @ Rinv3 @ Fb
    P12 = Pf1 + Pf2
    acc = (Pf3 @ Mc + Mc.T @ Pf3
           + P12 @ Md + Md.T @ P12
           + P12 @ S @ Pf3 + Pf3 @ S @ P12 + Pf3 @ S @ Pf3
           + l3["frakC3"].T @ Pf3 @ l3["frakC3"]
           - Fa.T @ Rinv3 @ Fb - Fb.T @ Rinv3 @ Fa - Fb.T @ Rinv3 @ Fb)
    return -acc


def _rhs_Omega(cv, l3, Pf1, Pf2, Pf3, Om):
    Rinv3 = cv.Rinv[2]
    Fa, Fb, B3f = l3["Fa"], l3["Fb"], l3["frakB3"]
    n3 = cv.nl[2]
    S = l3["frakF1dd"] - B3f @ Rinv3 @ B3f.T
    Psum = Pf1 + Pf2 + Pf3
    W = ((l3["frakA1"] + l3["frakA2"] + l3["frakA3"]).T
         - (Fa + Fb).T @ Rinv3 @ B3f.T + Psum @ S)
    src = (l3["frakC1"].T @ (Pf1 @ l3["Sigma1"])
           + l3["frakC2"].T @ ((Pf1 + Pf2) @ l3["Sigma2"])
           + l3["frakC3"].T @ ((Pf1 + Pf2 + Pf3) @ l3["Sigma3"])
           + Psum @ (l3["ddb3"] - B3f @ (Rinv3 @ n3))
           + l3["ddf3"] - (Fa + Fb).T @ (Rinv3 @ n3))
    return -(W @ Om + src)


# ---------------------------------------------------------------------------
# the stacked backward pass
# ---------------------------------------------------------------------------

_LEVEL_OF = {"p": 1, "P1": 2, "P2": 2, "Pf1": 3, "Pf2": 3, "Pf3": 3, "Omega": 4}


def _stack_rhs(spec, cv, state, level, convention):
    p, P1, P2, Pf1, Pf2, Pf3, Om = state
    dp = _rhs_p(cv, p)
    if level == 1:
        return (dp, None, None, None, None, None, None)
    l1 = level1_at(cv, p)
    l2 = level2_at(cv, l1)
    dP1 = _rhs_P1(cv, l2, P1, convention)
    dP2 = _rhs_P2(cv, l2, P1, P2, convention)
    if level == 2:
        return (dp, dP1, dP2, None, None, None, None)
    cl = level2_closedloop_at(cv, l2, P1, P2, convention)
    l3 = level3_at(cv, l2, cl, convention)
    dPf1 = _rhs_Pf1(cv, l3, Pf1)
    dPf2 = _rhs_Pf2(cv, l3, Pf1, Pf2)
    dPf3 = _rhs_Pf3(cv, l3, Pf1, Pf2, Pf3)
    if level == 3:
        return (dp, dP1, dP2, dPf1, dPf2, dPf3, None)
    dOm = _rhs_Omega(cv, l3, Pf1, Pf2, Pf3, Om)
    return (dp, dP1, dP2, dPf1, dPf2, dPf3, dOm)


def _axpy(state, ders, a):
    return tuple(s if d is None else s + a * d for s, d in zip(state, ders))


def terminal_state(spec: GameSpec):
    n = spec.n
    G1 = spec.costs.players[0].G
    calG2 = bdiag(spec.costs.players[1].G, np.zeros((n, n)))
    calG3 = bdiag(spec.costs.players[2].G, np.zeros((n, n)))
    frakG3 = bdiag(calG3, np.zeros((2 * n, 2 * n)))
    return (G1.copy(), calG2, np.zeros((2 * n, 2 * n)), frakG3,
            np.zeros((4 * n, 4 * n)), np.zeros((4 * n, 4 * n)),
            np.zeros(4 * n))


def _check_finite(state, t, what="riccati system"):
    for s in state:
        if s is None:
            continue
        if not np.all(np.isfinite(s)) or np.abs(s).max(initial=0.0) > BLOWUP_LIMIT:
            raise BlowUpError(what, t)


def _solve_stack(spec: GameSpec, level: int, convention: str):
    """Backward RK4 over the refined grid; returns per-node value arrays."""
    times = solver_times(spec)
    K = times.shape[0] - 1
    state = terminal_state(spec)
    hist = [[None] * (K + 1) for _ in range(7)]
    for i, s in enumerate(state):
        hist[i][K] = s
    max_asym = 0.0
    for k in range(K, 0, -1):
        h = times[k] - times[k - 1]
        cv = CoeffValues(spec, 0.5 * (times[k] + times[k - 1]))
        k1 = _stack_rhs(spec, cv, state, level, convention)
        k2 = _stack_rhs(spec, cv, _axpy(state, k1, -0.5 * h), level, convention)
        k3 = _stack_rhs(spec, cv, _axpy(state, k2, -0.5 * h), level, convention)
        k4 = _stack_rhs(spec, cv, _axpy(state, k3, -h), level, convention)
        new = []
        for s, d1, d2, d3, d4 in zip(state, k1, k2, k3, k4):
            if d1 is None:
                new.append(s)
            else:
                new.append(s - (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4))
        # keep the follower gain exactly symmetric; track the drift it had
        pnew = new[0]
        asym = np.abs(pnew - pnew.T).max(initial=0.0)
        max_asym = max(max_asym, asym)
        new[0] = 0.5 * (pnew + pnew.T)
        state = tuple(new)
        _check_finite(state, times[k - 1])
        for i, s in enumerate(state):
            hist[i][k - 1] = s
    if max_asym > P_ASYM_TOL:
        raise ConsistencyError(f"follower gain asymmetry {max_asym:.3e} exceeds "
                               f"{P_ASYM_TOL:g}")
    arrays = [np.array(h) if h[0] is not None else None for h in hist]
    return times, arrays


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def integrate_backward(rhs, terminal, times) -> MatrixTrajectory:
    """Classical RK4 run backward from times[-1]; terminal is stored exactly."""
    times = np.asarray(times, dtype=float)
    M = np.asarray(terminal, dtype=float).copy()
    K = times.shape[0] - 1
    values = np.empty((K + 1,) + M.shape)
    values[K] = M
    for k in range(K, 0, -1):
        t, h = times[k], times[k] - times[k - 1]
        k1 = rhs(t, M)
        k2 = rhs(t - 0.5 * h, M - 0.5 * h * k1)
        k3 = rhs(t - 0.5 * h, M - 0.5 * h * k2)
        k4 = rhs(t - h, M - h * k3)
        M = M - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(M)) or np.abs(M).max(initial=0.0) > BLOWUP_LIMIT:
            raise BlowUpError("backward integration", times[k - 1])
        values[k - 1] = M
    return MatrixTrajectory(times, values)


def solve_p(spec: GameSpec, convention: str = DERIVED) -> MatrixTrajectory:
    """Follower Riccati gain; terminal value is the follower's terminal weight."""
    times, arrays = _solve_stack(spec, 1, convention)
    return MatrixTrajectory(times, arrays[0])


def solve_P12(spec: GameSpec, l1, l2, p, convention: str = DERIVED):
    """Middle-level Riccati pair (P1 self-contained, then P2 given P1)."""
    times, arrays = _solve_stack(spec, 2, convention)
    pv = getattr(p, "values", p)
    if np.abs(arrays[0] - pv).max() > 1e-8 * (1.0 + np.abs(pv).max()):
        raise ConsistencyError("supplied p trajectory disagrees with the joint solve")
    return (MatrixTrajectory(times, arrays[1]), MatrixTrajectory(times, arrays[2]))


def solve_P123(spec: GameSpec, l3, P1, P2, convention: str = DERIVED):
    """Top-level Riccati triple, solved sequentially inside one joint pass."""
    times, arrays = _solve_stack(spec, 3, convention)
    P1v = getattr(P1, "values", P1)
    if np.abs(arrays[1] - P1v).max() > 1e-8 * (1.0 + np.abs(P1v).max()):
        raise ConsistencyError("supplied P1 trajectory disagrees with the joint solve")
    return tuple(MatrixTrajectory(times, arrays[i]) for i in (3, 4, 5))


def _offsets_from_omega(times, om_values, n) -> OffsetBundle:
    Om = MatrixTrajectory(times, om_values)
    Phi = MatrixTrajectory(times, om_values[:, 2 * n:])
    phic = MatrixTrajectory(times, om_values[:, 3 * n:])
    return OffsetBundle(times, Om, Phi, phic)


def solve_offsets(spec: GameSpec, bundle: RiccatiBundle) -> OffsetBundle:
    """Collapsed deterministic offset ODE; blocks give the 2n and n offsets."""
    times, arrays = _solve_stack(spec, 4, bundle.convention)
    return _offsets_from_omega(times, arrays[6], spec.n)


def solve_game(spec: GameSpec, convention: str = DERIVED):
    """Full ladder in one pass: RiccatiBundle plus OffsetBundle."""
    times, arrays = _solve_stack(spec, 4, convention)
    p = MatrixTrajectory(times, arrays[0])
    P1 = MatrixTrajectory(times, arrays[1])
    P2 = MatrixTrajectory(times, arrays[2])
    l1 = build_level1(spec, p)
    l2 = build_level2(spec, l1)
    l2cl = build_level2_closedloop(l2, P1, P2, spec, convention)
    l3 = build_level3(l2cl, l2, spec, convention)
    bundle = RiccatiBundle(times=times, p=p, P1=P1, P2=P2,
                           Pf1=MatrixTrajectory(times, arrays[3]),
                           Pf2=MatrixTrajectory(times, arrays[4]),
                           Pf3=MatrixTrajectory(times, arrays[5]),
                           l1=l1, l2=l2, l2cl=l2cl, l3=l3,
                           convention=convention)
    offsets = _offsets_from_omega(times, arrays[6], spec.n)
    return bundle, offsets


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------

def riccati_residuals(spec: GameSpec, bundle: RiccatiBundle,
                      offsets: OffsetBundle | None = None) -> dict:
    """Max centered-difference residual of every solved backward equation.

    For order-4 trajectories the centered difference carries an O(h^2)
    truncation error, so residuals should scale like C h^2 on constant
    coefficients.
    """
    times = bundle.times
    conv = bundle.convention
    vals = {"p": bundle.p.values, "P1": bundle.P1.values, "P2": bundle.P2.values,
            "Pf1": bundle.Pf1.values, "Pf2": bundle.Pf2.values,
            "Pf3": bundle.Pf3.values}
    if offsets is not None:
        vals["Omega"] = offsets.Omega.values
    out = {name: 0.0 for name in vals}
    K = times.shape[0] - 1
    for k in range(1, K):
        cv = CoeffValues(spec, times[k])
        state = (vals["p"][k], vals["P1"][k], vals["P2"][k], vals["Pf1"][k],
                 vals["Pf2"][k], vals["Pf3"][k],
                 vals["Omega"][k] if "Omega" in vals else np.zeros(4 * spec.n))
        level = 4 if "Omega" in vals else 3
        ders = _stack_rhs(spec, cv, state, level, conv)
        dt = times[k + 1] - times[k - 1]
        for i, name in enumerate(("p", "P1", "P2", "Pf1", "Pf2", "Pf3", "Omega")):
            if name not in vals or ders[i] is None:
                continue
            num = (vals[name][k + 1] - vals[name][k - 1]) / dt
            res = np.abs(num - ders[i]).max()
            out[name] = max(out[name], float(res))
    return out
