"""Discrete-time dynamic-programming ground truth.

For specs in which only the third noise component is active and only the
follower controls the state, filtering is trivial (the state is adapted to
the follower's observations) and the problem reduces to a single-controller
LQG.  The exact backward recursion for the Euler-discretized problem then
cross-checks the continuous follower Riccati gain and the optimal value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ReductionError, StackLQError
from .lift import CoeffValues
from .model import GameSpec


@dataclass(frozen=True)
class DiscreteLQ:
    """x' = A x + B v + c + (Cn x + sn) xi with xi ~ N(0, var) per step.

    Stage cost 0.5 xQx + 0.5 vRv + q.x + r.v; terminal 0.5 xGx + g.x.
    """

    A: np.ndarray       # (K, n, n)
    B: np.ndarray
    c: np.ndarray       # (K, n)
    Cn: np.ndarray
    sn: np.ndarray
    var: np.ndarray     # (K,)
    Q: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray
    G: np.ndarray       # (n, n)
    g: np.ndarray       # (n,)

    @property
    def steps(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DPSolution:
    S: np.ndarray        # (K+1, n, n) value Hessians
    s: np.ndarray        # (K+1, n)   value gradients at 0
    const: np.ndarray    # (K+1,)     value constants
    gains: np.ndarray    # (K, n, n)  v = gains x + offs
    offs: np.ndarray     # (K, n)

    def value(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return float(0.5 * x0 @ self.S[0] @ x0 + self.s[0] @ x0 + self.const[0])


def _coeff_is_zero(coeff) -> bool:
    return np.abs(coeff.values).max(initial=0.0) == 0.0


def reduce_to_single_player(spec: GameSpec, steps: int | None = None) -> DiscreteLQ:
    """Euler discretization of the follower-only, third-noise-only spec."""
    c = spec.coeffs
    offending = [name for name, coeff in
                 (("B2", c.B[1]), ("B3", c.B[2]), ("C1", c.C[0]), ("C2", c.C[1]),
                  ("sigma1", c.sigma[0]), ("sigma2", c.sigma[1]))
                 if not _coeff_is_zero(coeff)]
    if offending:
        raise ReductionError("spec is not reducible to a single controller; "
                             f"nonzero: {', '.join(offending)}")
    K = spec.grid.steps if steps is None else int(steps)
    T = spec.horizon
    h = T / K
    n = spec.n
    eye = np.eye(n)
    out = {name: np.empty((K, n, n)) for name in ("A", "B", "Cn", "Q", "R")}
    vec = {name: np.empty((K, n)) for name in ("c", "sn", "q", "r")}
    for k in range(K):
        cv = CoeffValues(spec, k * h)
        out["A"][k] = eye + h * cv.A
        out["B"][k] = h * cv.B[0]
        out["Cn"][k] = cv.C[2]
        out["Q"][k] = h * cv.Q[0]
        out["R"][k] = h * cv.R[0]
        vec["c"][k] = h * cv.b
        vec["sn"][k] = cv.sigma[2]
        vec["q"][k] = h * cv.m[0]
        vec["r"][k] = h * cv.nl[0]
    return DiscreteLQ(A=out["A"], B=out["B"], c=vec["c"], Cn=out["Cn"],
                      sn=vec["sn"], var=np.full(K, h), Q=out["Q"], R=out["R"],
                      q=vec["q"], r=vec["r"], G=spec.costs.players[0].G.copy(),
                      g=np.zeros(n))


def solve_dp(d: DiscreteLQ) -> DPSolution:
    """Exact backward recursion for the affine-quadratic value function."""
    K = d.steps
    n = d.G.shape[0]
    S = np.empty((K + 1, n, n))
    s = np.empty((K + 1, n))
    const = np.empty(K + 1)
    gains = np.empty((K, n, n))
    offs = np.empty((K, n))
    S[K], s[K], const[K] = d.G, d.g, 0.0
    for k in range(K - 1, -1, -1):
        A, B, c, Cn, sn, var = d.A[k], d.B[k], d.c[k], d.Cn[k], d.sn[k], d.var[k]
        Sp, sp, cp = S[k + 1], s[k + 1], const[k + 1]
        M = d.R[k] + B.T @ Sp @ B
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        if ev.min() <= 0:
            raise StackLQError(f"DP stage {k}: R + B'SB not positive definite")
        rhs_x = B.T @ Sp @ A
        rhs_0 = B.T @ (Sp @ c) + B.T @ sp + d.r[k]
        Kk = -np.linalg.solve(M, rhs_x)
        kk = -np.linalg.solve(M, rhs_0)
        Acl = A + B @ Kk
        S[k] = (d.Q[k] + Kk.T @ d.R[k] @ Kk + Acl.T @ Sp @ Acl
                + var * Cn.T @ Sp @ Cn)
        S[k] = 0.5 * (S[k] + S[k].T)
        u = c + B @ kk
        s[k] = (d.q[k] + Kk.T @ (d.r[k] + d.R[k] @ kk) + Acl.T @ (Sp @ u + sp)
                + var * Cn.T @ (Sp @ sn))
        const[k] = (cp + 0.5 * u @ Sp @ u + sp @ u + 0.5 * var * sn @ Sp @ sn
                    + 0.5 * kk @ d.R[k] @ kk + d.r[k] @ kk)
        gains[k], offs[k] = Kk, kk
    return DPSolution(S=S, s=s, const=const, gains=gains, offs=offs)


@dataclass(frozen=True)
class CrosscheckReport:
    steps: int
    gap_S0: float          # |S0 - p(0)| (max norm, relative to 1+|p(0)|)
    gap_value: float       # |DP value - continuous value| at x0
    dp_value: float
    continuous_value: float


def _continuous_value(spec: GameSpec, steps: int):
    """Value of the reduced continuous problem via its Riccati + offset ODEs."""
    from .riccati import integrate_backward
    import numpy as np
    T = spec.horizon
    times = np.linspace(0.0, T, steps + 1)
    n = spec.n

    def rhs_p(t, p):
        cv = CoeffValues(spec, min(max(t, 0.0), T))
        B1 = cv.B[0]
        acc = p @ cv.A + cv.A.T @ p - p @ B1 @ cv.Rinv[0] @ B1.T @ p + cv.Q[0]
        for Ci in cv.C:
            acc = acc + Ci.T @ p @ Ci
        return -acc

    ptraj = integrate_backward(rhs_p, spec.costs.players[0].G, times)

    def p_at(t):
        k = int(round(t / T * steps))
        return ptraj.values[min(max(k, 0), steps)]

    def rhs_phi(t, phi):
        cv = CoeffValues(spec, min(max(t, 0.0), T))
        p = p_at(t)
        B1 = cv.B[0]
        Abar = cv.A - B1 @ cv.Rinv[0] @ B1.T @ p
        f1 = p @ cv.b + cv.m[0] - p @ B1 @ cv.Rinv[0] @ cv.nl[0]
        for Ci, si in zip(cv.C, cv.sigma):
            f1 = f1 + Ci.T @ (p @ si)
        return -(Abar.T @ phi + f1)

    phitraj = integrate_backward(rhs_phi, np.zeros(n), times)

    def phi_at(t):
        k = int(round(t / T * steps))
        return phitraj.values[min(max(k, 0), steps)]

    def rhs_chi(t, chi):
        cv = CoeffValues(spec, min(max(t, 0.0), T))
        p, phi = p_at(t), phi_at(t)
        B1 = cv.B[0]
        w = B1.T @ phi + cv.nl[0]
        s3 = cv.sigma[2]
        return -(phi @ cv.b + 0.5 * s3 @ (p @ s3)
                 - 0.5 * w @ (cv.Rinv[0] @ w))

    chitraj = integrate_backward(rhs_chi, np.zeros(()), times)
    x0 = spec.x0
    return (float(0.5 * x0 @ ptraj.values[0] @ x0 + phitraj.values[0] @ x0
                  + chitraj.values[0]), ptraj.values[0])


def crosscheck_p(spec: GameSpec, steps: int | None = None) -> CrosscheckReport:
    """Compare the DP recursion against the continuous follower solution."""
    d = reduce_to_single_player(spec, steps)
    sol = solve_dp(d)
    cont_val, p0 = _continuous_value(spec, d.steps)
    gap_S0 = float(np.abs(sol.S[0] - p0).max() / (1.0 + np.abs(p0).max()))
    dp_val = sol.value(spec.x0)
    return CrosscheckReport(steps=d.steps, gap_S0=gap_S0,
                            gap_value=abs(dp_val - cont_val),
                            dp_value=dp_val, continuous_value=cont_val)
