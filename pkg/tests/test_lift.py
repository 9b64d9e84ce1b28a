import numpy as np

import stacklq as sq
from stacklq.lift import (CoeffValues, bdiag, level1_at, level2_at,
                          level2_closedloop_at, selectors)
from stacklq.riccati import solve_game


def naive_matmul(A, B):
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            for k in range(A.shape[1]):
                out[i, j] += A[i, k] * B[k, j]
    return out


def blocks_2x2(n, M11, M12, M21, M22):
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n], out[:n, n:] = M11, M12
    out[n:, :n], out[n:, n:] = M21, M22
    return out


def test_zero_spec_all_levels_zero(zero_spec):
    bundle, offsets = solve_game(zero_spec)
    for name in ("Abar", "F1bar", "F2bar", "F3bar", "bbar", "f1bar"):
        assert np.all(getattr(bundle.l1, name) == 0.0)
    for name in ("calA1", "calA2", "calF1", "calQ2", "calF2", "calF3",
                 "barb2", "f2bar"):
        assert np.all(getattr(bundle.l2, name) == 0.0)
    for name in ("frakA1", "frakA2", "frakA3", "frakQ3", "frakQ3dd",
                 "Fa", "Fb", "ddb3", "ddf3"):
        assert np.all(getattr(bundle.l3, name) == 0.0)


def test_level1_direct_substitution():
    # B1 = I, R1 = I, p = I, A = 0 (scalar): Abar = -1, F1bar = -1
    spec = sq.make_spec(n=1, B1=1.0, R1=1.0)
    cv = CoeffValues(spec, 0.0)
    l1 = level1_at(cv, np.eye(1))
    assert l1["Abar"][0, 0] == -1.0
    assert l1["F1bar"][0, 0] == -1.0


def test_level1_f2bar_matches_naive_product(n2_spec):
    bundle, _ = solve_game(n2_spec)
    k = 7
    t = bundle.times[k]
    B2 = sq.eval_coeff(n2_spec, "B2", t)
    expected = naive_matmul(B2.T, bundle.p.values[k])
    assert np.allclose(bundle.l1.F2bar[k], expected, atol=1e-14)


def test_level2_block_placement():
    spec = sq.make_spec(n=1, A=2.0)
    cv = CoeffValues(spec, 0.0)
    l1 = {"Abar": np.array([[3.0]]), "F1bar": np.zeros((1, 1)),
          "F2bar": np.zeros((1, 1)), "F3bar": np.zeros((1, 1)),
          "bbar": np.zeros(1), "f1bar": np.zeros(1)}
    l2 = level2_at(cv, l1)
    assert np.array_equal(l2["calA1"], np.diag([2.0, 3.0]))


def test_level2_calC3_independent_assembly(n2_spec):
    bundle, _ = solve_game(n2_spec)
    k = 11
    C3 = sq.eval_coeff(n2_spec, "C3", bundle.times[k])
    n = n2_spec.n
    expected = blocks_2x2(n, C3, np.zeros((n, n)), np.zeros((n, n)), C3)
    assert np.array_equal(bundle.l2.calC3[k], expected)


def test_closedloop_zero_riccati(scalar_generic):
    cv = CoeffValues(scalar_generic, 0.0)
    l1 = level1_at(cv, np.zeros((1, 1)))
    l2 = level2_at(cv, l1)
    z = np.zeros((2, 2))
    cl = level2_closedloop_at(cv, l2, z, z)
    assert np.array_equal(cl["ddA1"], l2["calA1"])
    assert np.all(cl["ddA2"] == 0.0)
    assert np.all(cl["H"] == 0.0)


def test_closedloop_ddF1_scalar_arithmetic():
    spec = sq.make_spec(n=1, B1=0.7, R1=2.0, B2=0.5, R2=4.0)
    cv = CoeffValues(spec, 0.0)
    p = np.array([[1.3]])
    l1 = level1_at(cv, p)
    l2 = level2_at(cv, l1)
    P1 = np.array([[0.2, 0.1], [0.1, 0.4]])
    cl = level2_closedloop_at(cv, l2, P1, np.zeros((2, 2)))
    f1 = -0.7 * 0.7 / 2.0
    expected = np.array([[0.0 - 0.5 * 0.5 / 4.0, f1], [f1, 0.0]])
    assert np.allclose(cl["ddF1"], expected, atol=1e-15)


def test_H_recomputable_identity(generic_solution, scalar_generic):
    bundle, _, _ = generic_solution
    for k in (0, 50, 199):
        cv = CoeffValues(scalar_generic, bundle.times[k])
        cB2 = bundle.l2.calB2[k]
        P1 = bundle.P1.values[k]
        H = P1 @ cB2 @ cv.Rinv[1] @ cB2.T @ P1
        assert np.allclose(bundle.l2cl.H[k], H, atol=1e-13)


def test_level3_frakQ3_independent_assembly(n2_spec):
    bundle, _ = solve_game(n2_spec)
    n = n2_spec.n
    k = 23
    Q3 = sq.eval_coeff(n2_spec, "Q3", bundle.times[k])
    calQ3 = bdiag(Q3, np.zeros((n, n)))
    H = bundle.l2cl.H[k]
    expected = blocks_2x2(2 * n, calQ3, H, H, np.zeros((2 * n, 2 * n)))
    assert np.array_equal(bundle.l3.frakQ3[k], expected)
    expected_dd = blocks_2x2(2 * n, np.zeros((2 * n, 2 * n)), -H, -H,
                             np.zeros((2 * n, 2 * n)))
    assert np.array_equal(bundle.l3.frakQ3dd[k], expected_dd)


def test_level3_frakG3_upper_left(n2_spec):
    bundle, _ = solve_game(n2_spec)
    n = n2_spec.n
    G3 = n2_spec.costs.players[2].G
    assert np.array_equal(bundle.l3.frakG3[:2 * n, :2 * n],
                          bdiag(G3, np.zeros((n, n))))
    assert np.all(bundle.l3.frakG3[2 * n:, :] == 0.0)


def test_zero_blocks_exact(n2_spec):
    bundle, _ = solve_game(n2_spec)
    n = n2_spec.n
    l2, l3 = bundle.l2, bundle.l3
    assert np.all(l2.calA1[:, :n, n:] == 0.0)
    assert np.all(l2.calA1[:, n:, :n] == 0.0)
    assert np.all(l2.calB2[:, n:, :] == 0.0)
    assert np.all(l2.calQ2[:, n:, :] == 0.0)
    assert np.all(l2.calF2[:, :, :n] == 0.0)
    assert np.all(l3.frakA1[:, :2 * n, 2 * n:] == 0.0)
    assert np.all(l3.frakB3[:, 2 * n:, :] == 0.0)
    assert np.all(l3.Fa[:, :, :2 * n] == 0.0)
    assert np.all(l3.Sigma1[:, 2 * n:] == 0.0)


def test_dimensional_ladder_slicing(n2_spec):
    bundle, _ = solve_game(n2_spec)
    n = n2_spec.n
    k = 31
    # level-3 upper-left block of frakA1 is the level-2 closed-loop ddA1
    assert np.array_equal(bundle.l3.frakA1[k, :2 * n, :2 * n],
                          bundle.l2cl.ddA1[k])
    assert np.array_equal(bundle.l3.frakA1[k, 2 * n:, 2 * n:],
                          bundle.l2cl.ddA1[k])
    # level-2 upper-left of calA1 is the raw A
    A = sq.eval_coeff(n2_spec, "A", bundle.times[k])
    assert np.array_equal(bundle.l2.calA1[k, :n, :n], A)


def test_builders_are_pure(scalar_generic):
    bundle, _ = solve_game(scalar_generic)
    l1a = sq.build_level1(scalar_generic, bundle.p)
    l1b = sq.build_level1(scalar_generic, bundle.p)
    assert np.array_equal(l1a.Abar, l1b.Abar)
    l2a = sq.build_level2(scalar_generic, l1a)
    cla = sq.build_level2_closedloop(l2a, bundle.P1, bundle.P2, scalar_generic)
    l3a = sq.build_level3(cla, l2a, scalar_generic)
    assert np.array_equal(l3a.frakQ3, bundle.l3.frakQ3)


def test_selectors_shapes():
    e1, U, L, s2 = selectors(3)
    assert e1.shape == (3, 12) and U.shape == (6, 12)
    v = np.arange(12.0)
    assert np.array_equal(e1 @ v, v[:3])
    assert np.array_equal(L @ v, v[6:])
    assert np.array_equal(s2 @ (U @ v), v[3:6])
