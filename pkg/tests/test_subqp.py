import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_objective

from spectralbundle import (
    InvalidInput,
    SdpProblem,
    SubQp,
    apply_A,
    build_sbmd_subqp,
    build_sbmp_subqp,
    init_model,
    recover_primal_candidate,
    recover_y,
    solve_r1,
    solve_subqp,
)
from spectralbundle.bundle_model import BundleModel
from spectralbundle.subqp import assemble_W, fw_gap, kkt_residual


def _hand_problem():
    # n=2, m=1, A_1 = I, b = 1
    return SdpProblem(np.diag([1.0, 2.0]), np.eye(2)[None], [1.0])


def _hand_model(rho=4.0):
    return BundleModel(np.eye(2) / 2, np.array([[1.0], [0.0]]), 0, 1, rho)


def test_sbmp_blocks_hand_case():
    # before eliminating y: Q11 = 1/2, Q12 = 1/2, Q22 = 1, Q13 = 1, Q23 = 1, Q33 = 2
    p, model = _hand_problem(), _hand_model()
    q, _ = build_sbmp_subqp(p, model, np.eye(2), 1.0)
    M = q.M
    assert M[0, 0] == pytest.approx(0.5 - 1 * 1 / 2)
    assert M[0, 1] == pytest.approx(0.5 - 1 * 1 / 2)
    assert M[1, 1] == pytest.approx(1 - 1 * 1 / 2)
    # q3 = -(2 alpha (b - A(Omega)) + 2 A(C)) = -(2 (1 - 2) + 6) = -4, z3 = -2
    # m = q_{1,2} - Q_{13,23} z3 with q1 = -2<W,C> + 2<W,Omega> = -1, q2 = -2 + 2 = 0
    np.testing.assert_allclose(q.m, [-1 + 2, 0 + 2], atol=1e-12)


def test_sbmp_quadratic_block_is_identity_before_elimination():
    rng = np.random.default_rng(0)
    n, m = 5, 2
    A = rng.standard_normal((m, n, n))
    p = SdpProblem(np.eye(n), A + A.transpose(0, 2, 1), rng.standard_normal(m))
    model = init_model(np.diag(np.arange(n, dtype=float)), 1, 2, 3.0)
    q, _ = build_sbmp_subqp(p, model, np.eye(n), 0.7)
    F = q.m22_factors.reshape(m, -1)
    # M22 = I - Q23 Q33^{-1} Q23^T, so M22 + Q23 Q33^{-1} Q23^T = I
    np.testing.assert_allclose(q.M22 + F.T @ np.linalg.solve(p.gram, F), np.eye(9), atol=1e-12)
    assert np.max(np.abs(q.M - q.M.T)) <= 1e-12


def test_sbmd_blocks_hand_case():
    p, model = _hand_problem(), _hand_model()
    q = build_sbmd_subqp(p, model, np.zeros(1), 1.0)
    assert q.M11 == pytest.approx(1.0)


def test_sbmd_zero_linear_terms():
    p = SdpProblem(np.eye(2), np.eye(2)[None], [0.0])
    q = build_sbmd_subqp(p, _hand_model(), np.array([1.0]), 2.0)
    np.testing.assert_allclose(q.m, 0.0, atol=1e-15)
    assert np.linalg.eigvalsh(q.M22)[0] >= -1e-12


def test_solve_r1_examples():
    g, s, f = solve_r1(np.eye(2), np.array([-2.0, -2.0]), 10.0)
    assert (g, s) == pytest.approx((1.0, 1.0))
    g, s, f = solve_r1(np.eye(2), np.array([2.0, 2.0]), 1.0)
    assert (g, s, f) == (0.0, 0.0, 0.0)
    g, s, f = solve_r1(np.eye(2), np.array([-4.0, -4.0]), 2.0)
    assert (g, s, f) == pytest.approx((1.0, 1.0, -6.0))


def test_solve_r1_rejects_indefinite():
    with pytest.raises(InvalidInput):
        solve_r1(np.diag([1.0, -1.0]), np.zeros(2), 1.0)


def test_solve_subqp_r1_dispatch_is_bitwise():
    rng = np.random.default_rng(1)
    for _ in range(20):
        B = rng.standard_normal((2, 2))
        M, m, rho = B.T @ B, rng.standard_normal(2), rng.uniform(0.1, 3)
        g, s, f = solve_r1(M, m, rho)
        sol = solve_subqp(SubQp.from_dense(M, m, rho, 1))
        assert sol.gamma == g and sol.S[0, 0] == s and sol.objective == f


def test_solve_subqp_origin_optimal():
    sol = solve_subqp(SubQp.from_dense(np.eye(5), np.zeros(5), 1.0, 2))
    assert sol.gamma == 0.0 and not np.any(sol.S)


def _random_instance(rng, r):
    d = 1 + r * r
    B = rng.standard_normal((int(rng.integers(1, d + 1)), d))
    return B.T @ B / d, rng.standard_normal(d) * rng.uniform(0.1, 3), float(rng.uniform(0.1, 3))


@pytest.mark.parametrize("r", [2, 3, 4])
def test_solve_subqp_contract(r):
    rng = np.random.default_rng(10 + r)
    for _ in range(20):
        M, m, rho = _random_instance(rng, r)
        q = SubQp.from_dense(M, m, rho, r)
        sol = solve_subqp(q)
        assert sol.gamma >= -1e-12
        assert np.linalg.eigvalsh(sol.S)[0] >= -1e-10
        assert sol.gamma + np.trace(sol.S) <= rho + 1e-10
        assert sol.objective <= 0.0
        assert sol.objective == pytest.approx(dense_objective(M, m, sol.gamma, sol.S), abs=1e-12)
        assert min(fw_gap(q, sol.gamma, sol.S), kkt_residual(q, sol.gamma, sol.S)) <= 1e-10 * (1 + np.linalg.norm(m))


def test_solve_subqp_deterministic():
    M, m, rho = _random_instance(np.random.default_rng(3), 3)
    q = SubQp.from_dense(M, m, rho, 3)
    a, b = solve_subqp(q), solve_subqp(q)
    assert a.gamma == b.gamma and np.array_equal(a.S, b.S)


def test_recover_y_zero():
    p = SdpProblem(np.eye(2), np.eye(2)[None], [0.0])
    _, rec = build_sbmp_subqp(p, _hand_model(), np.zeros((2, 2)), 1.0)
    # C = I so q3 = -2 A(C) = -4; use C = 0 for the zero case instead
    p0 = SdpProblem(np.zeros((2, 2)), np.eye(2)[None], [0.0])
    _, rec0 = build_sbmp_subqp(p0, _hand_model(), np.zeros((2, 2)), 1.0)
    np.testing.assert_array_equal(recover_y(rec0, 0.0, np.zeros((1, 1))), [0.0])
    assert rec.q3[0] == pytest.approx(-4.0)


def test_recover_y_and_candidate_hand_case():
    p, model = _hand_problem(), _hand_model()
    q, rec = build_sbmp_subqp(p, model, np.eye(2), 1.0)
    S = np.array([[0.5]])
    W = assemble_W(model, 0.0, S)
    y = recover_y(rec, 0.0, S, model=model)
    # y = (-q3/2 - A(W)) / Q33 = (2 - 0.5) / 2
    np.testing.assert_allclose(y, [0.75], atol=1e-14)
    assert abs(p.gram[0, 0] * y[0] - (-0.5 * rec.q3[0] - apply_A(p, W)[0])) <= 1e-10
    X = recover_primal_candidate(np.eye(2), 1.0, W, y, p)
    np.testing.assert_allclose(X, np.diag([1.25, -0.25]), atol=1e-14)
    assert abs(apply_A(p, X)[0] - 1.0) <= 1e-8


def test_candidate_fixed_point():
    p = _hand_problem()
    y = np.array([0.5])
    W = p.C - 0.5 * np.eye(2)
    Omega = np.diag([0.3, 0.7])
    np.testing.assert_allclose(recover_primal_candidate(Omega, 2.0, W, y, p), Omega)


def test_candidate_stays_affine_feasible():
    rng = np.random.default_rng(8)
    n, m = 5, 3
    A = rng.standard_normal((m, n, n))
    A = A + A.transpose(0, 2, 1)
    C = rng.standard_normal((n, n))
    p = SdpProblem(C + C.T, A, rng.standard_normal(m))
    Omega = p.least_norm_point()
    model = init_model(-Omega, 1, 2, 4.0)
    q, rec = build_sbmp_subqp(p, model, Omega, 1.3)
    sol = solve_subqp(q)
    W = assemble_W(model, sol.gamma, sol.S)
    X = recover_primal_candidate(Omega, 1.3, W, recover_y(rec, sol.gamma, sol.S, W_star=W), p)
    assert np.linalg.norm(apply_A(p, X) - p.b) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_r1_beats_vertices(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((2, 2))
    M, m, rho = B.T @ B, rng.standard_normal(2) * 3, float(rng.uniform(0.1, 3))
    g, s, f = solve_r1(M, m, rho)
    assert g >= 0 and s >= 0 and g + s <= rho + 1e-12
    for v in ([0, 0], [rho, 0], [0, rho], [rho / 2, rho / 2]):
        v = np.array(v)
        assert f <= v @ M @ v + m @ v + 1e-12
