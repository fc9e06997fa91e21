import numpy as np
import pytest

from pdmmkf import (StateSpaceModel, build_P_statespace, build_tree_optimal, kalman_filter,
                    kalman_init, kalman_step, ml_chain_problem, oracle_solve, orient_to_root,
                    pdmm_filter, pdmm_smoother, simulate_trajectory)
from pdmmkf.errors import DimensionError, ValidationError
from pdmmkf.generators import random_model, random_spd
from pdmmkf.kalman import message_recursion_matrices


@pytest.fixture
def scalar():
    return StateSpaceModel.time_invariant(1, 1, 1, 1, 1, 1, horizon=5)


def _oracle_uz(m, ys):
    chain = ml_chain_problem(m, ys)
    return chain.split_uz(oracle_solve(chain.problem)[0])


# ---------------------------------------------------------------- model

def test_time_invariant_broadcast(scalar):
    assert scalar.F.shape == (5, 1, 1) and scalar.G.shape == (5, 1, 1)
    assert (scalar.n, scalar.r, scalar.q, scalar.horizon) == (1, 1, 1, 5)


@pytest.mark.parametrize("field", ["Q", "R", "Pi0"])
def test_model_rejects_non_pd(field):
    kw = dict(F=1, G=1, H=1, Q=1, R=1, Pi0=1)
    kw[field] = 0
    with pytest.raises(ValidationError, match=field):
        StateSpaceModel.time_invariant(horizon=2, **kw)


def test_model_rejects_rank_deficient():
    with pytest.raises(ValidationError, match="full row rank"):
        StateSpaceModel.time_invariant(np.diag([1.0, 0.0]), [[1.0], [0.0]], [[1.0, 0.0]], 1, 1,
                                       np.eye(2), horizon=3)


def test_model_rejects_shapes():
    with pytest.raises(DimensionError):
        StateSpaceModel.time_invariant(np.eye(2), np.ones((3, 1)), [[1.0, 0.0]], 1, 1, np.eye(2), horizon=2)
    with pytest.raises(DimensionError):
        StateSpaceModel(np.ones((3, 1, 1)), np.ones((2, 1, 1)), 1, 1, 1, 1)


# ---------------------------------------------------------------- filter

def test_kalman_init():
    s = kalman_init(StateSpaceModel.time_invariant(np.eye(2), np.eye(2), np.eye(2), np.eye(2),
                                                   np.eye(2), np.eye(2), horizon=1))
    np.testing.assert_array_equal(s.D, np.eye(2))
    np.testing.assert_array_equal(s.z_pred, np.zeros(2))
    assert s.step == 0


def test_kalman_scalar_steps(scalar):
    s1, s2 = kalman_filter(scalar, [2.0, 0.0])
    assert s1.K[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert s1.z_pred[0] == pytest.approx(1.0, abs=1e-15)
    assert s1.D[0, 0] == pytest.approx(1.5, abs=1e-15)
    assert s2.K[0, 0] == pytest.approx(0.6, abs=1e-15)
    assert s2.z_pred[0] == pytest.approx(0.4, abs=1e-15)
    assert s2.D[0, 0] == pytest.approx(1.6, abs=1e-15)


def test_kalman_zero_gain():
    F, G = np.array([[1.0, 0.5], [0.0, 0.9]]), np.array([[0.0], [1.0]])
    m = StateSpaceModel.time_invariant(F, G, np.zeros((1, 2)), 1, 1, np.eye(2), horizon=1)
    s0 = kalman_init(m)
    s0 = type(s0)(np.array([1.0, -1.0]), s0.D, s0.K, 0)
    s1 = kalman_step(m, s0, [3.0])
    np.testing.assert_array_equal(s1.K, np.zeros((2, 1)))
    np.testing.assert_allclose(s1.z_pred, F @ s0.z_pred)
    np.testing.assert_allclose(s1.D, F @ F.T + G @ G.T)


def test_kalman_zero_innovation(rng):
    m = random_model(rng, max_horizon=3)
    s = kalman_init(m)
    s = type(s)(rng.standard_normal(m.n), s.D, s.K, 0)
    s1 = kalman_step(m, s, m.H[0] @ s.z_pred)
    np.testing.assert_allclose(s1.z_pred, m.F[0] @ s.z_pred, atol=1e-12)


def test_kalman_step_guards(scalar):
    with pytest.raises(DimensionError):
        kalman_step(scalar, kalman_init(scalar), [1.0, 2.0])
    s = kalman_init(scalar)
    for _ in range(5):
        s = kalman_step(scalar, s, [0.0])
    with pytest.raises(DimensionError):
        kalman_step(scalar, s, [0.0])


def test_covariance_stays_psd():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        m = random_model(rng)
        for s in kalman_filter(m, simulate_trajectory(m, seed).y):
            np.testing.assert_array_equal(s.D, s.D.T)
            assert np.linalg.eigvalsh(s.D)[0] >= -1e-12 * np.linalg.norm(s.D, 2)


# -------------------------------------------------------------- ML chain

def test_ml_chain_scalar_structure(scalar):
    chain = ml_chain_problem(scalar, [2.0])
    p = chain.problem
    assert p.graph.node_count == 2 and chain.root == 1
    np.testing.assert_array_equal(p.objectives[0].Sigma, np.diag([1.0, 2.0]))
    np.testing.assert_array_equal(p.objectives[0].a, [0.0, 2.0])
    np.testing.assert_array_equal(p.objectives[1].Sigma, np.zeros((2, 2)))
    np.testing.assert_array_equal(p.A(1, 0), [[0.0, 1.0]])
    np.testing.assert_array_equal(p.A(0, 1), [[-1.0, -1.0]])


def test_ml_chain_oracle_matches_prediction(scalar):
    _, z = _oracle_uz(scalar, [2.0])
    assert z[1, 0] == pytest.approx(1.0, abs=1e-12)


def test_ml_chain_zero_measurements(rng):
    m = random_model(rng)
    chain = ml_chain_problem(m, np.zeros((m.horizon, m.q)))
    assert all(not o.a.any() for o in chain.problem.objectives)
    np.testing.assert_allclose(oracle_solve(chain.problem)[0], 0.0, atol=1e-12)


def test_ml_chain_measurement_count(scalar):
    with pytest.raises(DimensionError):
        ml_chain_problem(scalar, np.zeros(6))
    with pytest.raises(DimensionError):
        ml_chain_problem(scalar, np.zeros((2, 2)))


# ------------------------------------------------------------ P recursion

def test_P_statespace_scalar(scalar):
    P = build_P_statespace(scalar, 1)
    assert P[(0, 1)][0, 0] == pytest.approx(1.5, abs=1e-15)
    assert P[(1, 2)][0, 0] == pytest.approx(1.6, abs=1e-15)
    assert P.root == 2


def test_P_statespace_equals_tree_optimal():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = random_model(rng)
        l = m.horizon - 1
        chain = ml_chain_problem(m, simulate_trajectory(m, seed).y)
        generic = build_tree_optimal(chain.problem, orient_to_root(chain.problem.graph, chain.root))
        special = build_P_statespace(m, l)
        for i in range(l + 1):
            A, B = generic[(i, i + 1)], special[(i, i + 1)]
            assert np.linalg.norm(A - B) <= 1e-10 * np.linalg.norm(B)


def test_P_statespace_range(scalar):
    with pytest.raises(DimensionError):
        build_P_statespace(scalar, 5)


def test_message_recursion_scalar(scalar):
    A, B = message_recursion_matrices(1.0, scalar.F[0], scalar.H[0], scalar.R[0])
    assert A[0, 0] == pytest.approx(0.5, abs=1e-15) and B[0, 0] == pytest.approx(0.5, abs=1e-15)


# ----------------------------------------------------------- PDMM filter

def test_pdmm_filter_scalar(scalar):
    (m0, P0), (m1, P1) = pdmm_filter(scalar, [2.0, 0.0])
    assert m0[0] == pytest.approx(1.0, abs=1e-15)
    assert m1[0] == pytest.approx(0.4, abs=1e-15)
    assert P0[0, 0] == pytest.approx(1.5, abs=1e-15)


def test_pdmm_filter_zero_measurements(rng):
    m = random_model(rng)
    for msg, _ in pdmm_filter(m, np.zeros((m.horizon, m.q))):
        assert not msg.any()


def test_pdmm_filter_append_only():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = random_model(rng, max_horizon=8)
        ys = simulate_trajectory(m, seed).y
        prev = None
        for l in range(1, m.horizon + 1):
            cur = pdmm_filter(m, ys[:l])
            if prev is not None:
                for (a, Pa), (b, Pb) in zip(prev, cur):
                    assert np.array_equal(a, b) and np.array_equal(Pa, Pb)
            prev = cur


# --------------------------------------------------------------- smoother

def test_smoother_single_step(scalar):
    res = pdmm_smoother(scalar, [2.0])
    u, z = _oracle_uz(scalar, [2.0])
    np.testing.assert_allclose(res.z, z, atol=1e-12)
    np.testing.assert_allclose(res.u, u, atol=1e-12)


def test_smoother_zero_measurements(rng):
    m = random_model(rng)
    res = pdmm_smoother(m, np.zeros((m.horizon, m.q)))
    assert not res.z.any() and not res.u.any()


def test_smoother_random_scalar_five_steps():
    rng = np.random.default_rng(77)
    m = StateSpaceModel(rng.uniform(0.5, 1.2, (5, 1, 1)), rng.uniform(0.5, 2, (5, 1, 1)),
                        rng.uniform(0.5, 2, (5, 1, 1)), rng.uniform(0.5, 2, (5, 1, 1)),
                        rng.uniform(0.5, 2, (5, 1, 1)), 1.3)
    ys = simulate_trajectory(m, 5).y
    res = pdmm_smoother(m, ys)
    u, z = _oracle_uz(m, ys)
    assert np.linalg.norm(res.z - z) <= 1e-8 * (1 + np.linalg.norm(z))
    assert np.linalg.norm(res.u - u) <= 1e-8 * (1 + np.linalg.norm(u))


def test_smoother_matches_oracle_random_models():
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        m = random_model(rng)
        ys = simulate_trajectory(m, seed).y
        res = pdmm_smoother(m, ys)
        u, z = _oracle_uz(m, ys)
        assert np.linalg.norm(res.z - z) <= 1e-8 * (1 + np.linalg.norm(z))
        assert np.linalg.norm(res.u - u) <= 1e-8 * (1 + np.linalg.norm(u))


@pytest.mark.parametrize("lag", [0, 1, 2, 4])
def test_fixed_lag_matches_truncated_oracle(lag):
    for seed in range(8):
        rng = np.random.default_rng(600 + seed)
        m = random_model(rng, max_horizon=8)
        ys = simulate_trajectory(m, seed).y
        L = len(ys) - 1
        res = pdmm_smoother(m, ys, lag=lag)
        assert res.lag == lag
        for i in range(L + 2):
            last = min(i + lag, L) if i <= L else L
            _, z = _oracle_uz(m, ys[:last + 1])
            assert np.linalg.norm(res.z[i] - z[i]) <= 1e-8 * (1 + np.linalg.norm(z[i]))


def test_lag_beyond_horizon_is_full_pass():
    rng = np.random.default_rng(8)
    m = random_model(rng, max_horizon=6)
    ys = simulate_trajectory(m, 1).y
    full = pdmm_smoother(m, ys)
    clamped = pdmm_smoother(m, ys, lag=100)
    np.testing.assert_array_equal(full.z, clamped.z)


def test_lag_validation(scalar):
    with pytest.raises(ValidationError):
        pdmm_smoother(scalar, [1.0], lag=-1)


# -------------------------------------------------------------- simulation

def test_simulation_covariance():
    rng = np.random.default_rng(1)
    C = random_spd(2, rng)
    m = StateSpaceModel.time_invariant(0.5 * np.eye(2), np.eye(2), np.eye(2), C, C, C, horizon=100_000)
    traj = simulate_trajectory(m, 42)
    emp = np.cov(traj.u.T, bias=True)
    assert np.linalg.norm(emp - C) <= 0.03 * np.linalg.norm(C)
    assert traj.z.shape == (100_001, 2) and traj.y.shape == (100_000, 2)


def test_simulation_deterministic(rng):
    m = random_model(rng)
    a, b = simulate_trajectory(m, 9), simulate_trajectory(m, 9)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, simulate_trajectory(m, 10).y)


def test_simulation_follows_state_equation(rng):
    m = random_model(rng)
    t = simulate_trajectory(m, 3)
    for l in range(m.horizon):
        np.testing.assert_allclose(t.z[l + 1], m.F[l] @ t.z[l] + m.G[l] @ t.u[l], atol=1e-12)
