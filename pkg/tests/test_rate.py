import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdplab import processes as P
from mdplab import rate as R
from mdplab.hilbert import HVec, PathCH, TraceClassOperator


def random_psd(rng, m, rank=None):
    rank = m if rank is None else rank
    a = rng.normal(size=(m, rank))
    return a @ a.T


def test_estimate_q_iid_rademacher(rademacher):
    est = R.estimate_Q(rademacher, reps=32, path_len=4096, seed=1)
    assert est.lag_cutoff == 0
    assert est.matrix[0, 0] == pytest.approx(1.0, rel=0.02)


def test_estimate_q_vector_iid():
    m = P.IIDBounded(P.BoxInnovation("uniform", -1.0, 1.0, 3))
    est = R.estimate_Q(m, reps=16, path_len=4096, seed=2)
    assert np.allclose(est.matrix, np.eye(3) / 3, atol=0.02)
    assert est.se.shape == (3, 3)


def test_estimate_q_chain(chain):
    est = R.estimate_Q(chain, reps=64, path_len=8192, seed=3)
    assert est.matrix[0, 0] == pytest.approx(chain.exact_Q()[0, 0], rel=0.05)


def test_estimate_q_precision_cap(chain):
    with pytest.raises(R.InsufficientSamplesError):
        R.estimate_Q(chain, reps=2, path_len=64, seed=0, max_rel_se=1e-4)
    with pytest.raises(ValueError):
        R.estimate_Q(chain, lag_cutoff=100, path_len=50)


def test_estimate_q_is_seed_deterministic(chain):
    a = R.estimate_Q(chain, reps=8, path_len=1024, seed=5, max_rel_se=1.0)
    b = R.estimate_Q(chain, reps=8, path_len=1024, seed=5, max_rel_se=1.0)
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_spectral_examples():
    s = R.spectral(np.eye(3))
    assert np.allclose(s.eigenvalues, 1.0)
    s = R.spectral(np.diag([1.0, 2.0]))
    assert np.allclose(s.eigenvalues, [2.0, 1.0])
    assert np.allclose(np.abs(s.eigenvectors), [[0.0, 1.0], [1.0, 0.0]])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_spectral_2x2_quadratic_formula(seed):
    q = random_psd(np.random.default_rng(seed), 2)
    tr, det = np.trace(q), np.linalg.det(q)
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    want = [tr / 2 + disc, tr / 2 - disc]
    assert np.allclose(R.spectral(q).eigenvalues, want, rtol=1e-9, atol=1e-12 * tr)


def test_lambda_star_examples():
    s = R.spectral(np.diag([2.0, 1.0]))
    assert R.lambda_star(s, HVec([0.0, 0.0])) == 0.0
    assert R.lambda_star(s, HVec([2.0, 1.0])) == pytest.approx(1.5)
    assert R.lambda_star(R.spectral(np.diag([1.0, 0.0])), [0.0, 1.0]) == math.inf
    with pytest.raises(ValueError):
        R.lambda_star(s, [1.0])


def test_lambda_star_many_matches_scalar():
    rng = np.random.default_rng(0)
    s = R.spectral(random_psd(rng, 4, 3))
    xs = rng.normal(size=(20, 4))
    xs[:10] = xs[:10] @ np.diag(s.eigenvalues) @ s.eigenvectors.T  # in range
    got = R.lambda_star_many(s, xs)
    want = [R.lambda_star(s, x) for x in xs]
    assert np.allclose(got[:10], want[:10])
    assert np.all(np.isinf(got[10:])) and np.all(np.isinf(want[10:]))


def test_legendre_identity_and_fenchel(rng):
    for _ in range(20):
        m = int(rng.integers(1, 6))
        q = random_psd(rng, m, int(rng.integers(1, m + 1)))
        s = R.spectral(q)
        z = rng.normal(size=m)
        x = q @ z
        assert R.lambda_star(s, x) == pytest.approx(0.5 * z @ q @ z, rel=1e-8)
        ys = rng.normal(size=(500, m)) * 3
        assert np.all(R.fenchel_gap(s, q, x, ys) >= -1e-9 * (1 + abs(z @ q @ z)))


def test_functional_rate_examples():
    s = R.spectral(np.eye(2))
    zero = PathCH([0.0, 1.0], np.zeros((2, 2)))
    assert R.functional_rate(s, zero) == 0.0
    v = np.array([1.0, 2.0])
    line = PathCH([0.0, 1.0], [np.zeros(2), v])
    assert R.functional_rate(s, line) == pytest.approx(2.5)
    off = PathCH([0.0, 1.0], [np.ones(2), v])
    assert R.functional_rate(s, off) == math.inf


def test_functional_rate_two_segments_riemann():
    q = np.diag([2.0, 1.0])
    s = R.spectral(q)
    v1, v2 = np.array([1.0, -1.0]), np.array([0.5, 2.0])
    p = PathCH([0.0, 0.5, 1.0], [np.zeros(2), 0.5 * v1, 0.5 * v1 + 0.5 * v2])
    want = 0.5 * (R.lambda_star(s, v1) + R.lambda_star(s, v2))
    assert R.functional_rate(s, p) == pytest.approx(want)
    t = np.linspace(0, 1, 100001)
    mid = 0.5 * (t[1:] + t[:-1])
    dens = np.where(mid[:, None] < 0.5, v1, v2)
    riemann = float(np.sum(np.diff(t) * R.lambda_star_many(s, dens)))
    assert R.functional_rate(s, p) == pytest.approx(riemann, rel=1e-4)


def test_cluster_set_membership():
    q = np.diag([3.0, 1.0])
    s = R.spectral(q)
    assert R.cluster_set_contains(s, PathCH([0.0, 1.0], np.zeros((2, 2))))
    v = math.sqrt(3.0) * np.array([1.0, 0.0])
    assert R.cluster_set_contains(s, PathCH([0.0, 1.0], [np.zeros(2), v]))
    w = np.array([0.0, math.sqrt(1.2)])  # lambda_star = 0.6
    assert not R.cluster_set_contains(s, PathCH([0.0, 1.0], [np.zeros(2), w]))


def test_region_infima():
    q = np.diag([4.0, 1.0])
    s = R.spectral(q)
    assert R.halfspace_inf(s, q, [1.0, 0.0], 2.0) == pytest.approx(0.5)
    assert R.halfspace_inf(s, q, [0.0, 1.0], 2.0) == pytest.approx(2.0)
    assert R.halfspace_inf(s, q, [1.0, 0.0], -1.0) == 0.0
    assert R.ball_complement_inf(s, 2.0) == pytest.approx(0.5)
    sing = np.diag([1.0, 0.0])
    assert R.halfspace_inf(R.spectral(sing), sing, [0.0, 1.0], 1.0) == math.inf


def test_halfspace_inf_matches_direct_minimization(rng):
    from scipy.optimize import minimize

    q = random_psd(rng, 3)
    s = R.spectral(q)
    u = rng.normal(size=3)
    r = 1.3
    # minimize lambda_star(x) = x^T Q^{-1} x / 2 subject to <u, x> = r
    qi = np.linalg.inv(q)
    cons = {"type": "eq", "fun": lambda x: u @ x - r}
    res = minimize(lambda x: 0.5 * x @ qi @ x, np.ones(3), constraints=[cons], tol=1e-12)
    assert R.halfspace_inf(s, q, u, r) == pytest.approx(res.fun, rel=1e-5)


def test_cvm_iid_kernel_is_bridge():
    grid, w = P.uniform_grid(50)
    k = R.cvm_kernel(P.IIDBounded(P.BoxInnovation("uniform", 0.0, 1.0)), grid, w)
    want = np.minimum.outer(grid, grid) - np.outer(grid, grid)
    assert np.allclose(k.C, want)
    assert k.tail_bound == 0.0


def test_cvm_chain_kernel_matches_enumeration(chain):
    grid = np.array([-1.5, -0.5, 0.5, 1.5])
    w = np.full(4, 0.25)
    k = R.cvm_kernel(chain, grid, w, lag_cutoff=60)
    y = chain.values[:, 0]
    F = np.array([chain.pi @ (y <= t) for t in grid])
    want = np.minimum.outer(F, F) - np.outer(F, F)
    for lag in range(1, 61):
        pk = np.linalg.matrix_power(chain.P, lag)
        for a, s in enumerate(grid):
            for b, t in enumerate(grid):
                joint = sum(chain.pi[i] * pk[i, j] for i in range(2) for j in range(2) if y[i] <= t and y[j] <= s)
                want[a, b] += 2 * (joint - F[a] * F[b])
    want = 0.5 * (want + want.T)
    assert np.allclose(k.C, want, atol=1e-12)
    closed = R.cvm_kernel(chain, grid, w)
    assert np.allclose(closed.C, k.C, atol=1e-10)


def test_cvm_mc_mode_close_to_exact(chain):
    grid, w = np.array([-0.5, 0.5]), np.array([0.5, 0.5])
    ex = R.cvm_kernel(chain, grid, w)
    mcm = R.cvm_kernel(chain, grid, w, mode="mc", seed=1, reps=32, path_len=8192)
    assert np.allclose(mcm.C, ex.C, rtol=0.1, atol=0.02)


def test_cvm_rate():
    grid, w = P.uniform_grid(200)
    k = R.cvm_kernel(P.IIDBounded(P.BoxInnovation("uniform", 0.0, 1.0)), grid, w)
    assert R.cvm_rate(k, 0.0) == 0.0
    assert R.cvm_rate(k, 1.0) == pytest.approx(math.pi**2 / 2, rel=1e-3)
    assert R.cvm_rate(k, 2.0) == pytest.approx(4 * R.cvm_rate(k, 1.0))


def test_brute_force_sign_max_small():
    a = np.array([[2.0, -1.0], [-1.0, 2.0]])
    v, g = R.brute_force_sign_max(a)
    assert v == pytest.approx(6.0)
    assert g[0] == 1.0 and g[1] == -1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_heuristic_never_exceeds_brute_force(seed):
    a = random_psd(np.random.default_rng(seed), 10)
    bv, _ = R.brute_force_sign_max(a)
    hv, g = R.heuristic_sign_max(a, starts=4, seed=seed)
    assert hv <= bv * (1 + 1e-12)
    assert g @ a @ g == pytest.approx(hv)


def test_kantorovich_requires_lebesgue(chain):
    grid = np.array([-0.5, 0.5])
    k = R.cvm_kernel(chain, grid, np.array([0.5, 0.5]))
    with pytest.raises(ValueError, match="Lebesgue"):
        R.kantorovich_maximizer(k)


def test_kantorovich_rate_formula():
    assert R.kantorovich_rate(1 / 12, 1.0) == pytest.approx(6.0)
    assert R.kantorovich_rate(0.0, 0.0) == 0.0
    assert R.kantorovich_rate(0.0, 1.0) == math.inf


def test_operator_record_roundtrip():
    q = TraceClassOperator(np.array([[2.0, 0.5], [0.5, 1.0]]))
    rec = R.operator_record(q, R.spectral(q), {"seed": 3})
    back = R.operator_from_record(rec)
    assert np.array_equal(back.matrix, q.matrix)
    rec["dim"] = 3
    with pytest.raises(ValueError):
        R.operator_from_record(rec)


@settings(max_examples=50)
@given(arrays(float, 3, elements=st.floats(-5, 5)))
def test_lambda_star_nonnegative_and_even(x):
    s = R.spectral(np.diag([2.0, 1.0, 0.5]))
    v = R.lambda_star(s, x)
    assert v >= 0.0
    assert R.lambda_star(s, -x) == pytest.approx(v)
