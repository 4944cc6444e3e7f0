import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import zeta

from mdplab import dependence as dep
from mdplab import processes as P

CHAIN3 = P.FiniteStateChain([[0.5, 0.3, 0.2], [0.1, 0.7, 0.2], [0.4, 0.1, 0.5]], [0.0, 1.0, 2.5])


def brute_phi1(chain, n):
    """sup over events in sigma(X_n) and initial states, by enumerating value subsets."""
    vals = [tuple(v) for v in np.round(chain.centered, 12)]
    distinct = sorted(set(vals))
    pn = np.linalg.matrix_power(chain.P, n)
    best = 0.0
    for r in range(len(distinct) + 1):
        for A in itertools.combinations(distinct, r):
            mask = np.array([v in A for v in vals], dtype=float)
            marg = float(chain.pi @ mask)
            for s in range(chain.n_states):
                if chain.pi[s] > 0:
                    best = max(best, abs(float(pn[s] @ mask) - marg))
    return best


def brute_phi_tilde2(chain, n, horizon):
    """Threshold coefficient over a dense threshold grid, singles and pairs of dates."""
    y = chain.values[:, 0]
    ts = np.linspace(y.min() - 1, y.max() + 1, 37)
    ts = np.union1d(ts, y)
    best = 0.0
    for i in range(n, horizon + 1):
        pi_ = np.linalg.matrix_power(chain.P, i)
        for t in ts:
            ind = (y <= t).astype(float)
            d = np.abs(pi_ @ ind - chain.pi @ ind)
            best = max(best, d.max())
    for i in range(n + 1, horizon + 1):
        for j in range(n, i):
            pj = np.linalg.matrix_power(chain.P, j)
            step = np.linalg.matrix_power(chain.P, i - j)
            for t in ts:
                for u in ts:
                    a = (y <= t).astype(float)
                    b = (y <= u).astype(float)
                    h = a * (step @ b)  # P(Y_j <= t, Y_i <= u | Y_j = state)
                    d = np.abs(pj @ h - chain.pi @ h)
                    best = max(best, d.max())
    return best


def test_iid_fwd_estimate_is_small(uniform_iid):
    est = dep.estimate_fwd_norm(uniform_iid, 3, outer_M=8, inner_N=4096, seed=1)
    assert est.mode == dep.MC
    # the norm of a noisy mean sits near zero within a few standard errors
    assert est.value <= 4 * est.se


def test_chain_fwd_exact_matches_enumeration(chain):
    for j in (1, 2, 5):
        want = 0.0
        for s in range(2):
            e = sum(np.linalg.matrix_power(chain.P, k)[s] @ chain.centered[:, 0] for k in range(1, j + 1))
            want = max(want, abs(e))
        assert dep.chain_fwd_exact(chain, j) == pytest.approx(want, rel=1e-12)


def test_chain_mc_fwd_agrees_with_exact(chain):
    est = dep.estimate_fwd_norm(chain, 2, outer_M=32, inner_N=20000, seed=2)
    assert est.value == pytest.approx(dep.chain_fwd_exact(chain, 2), abs=5 * est.se + 1e-3)


def test_ar1_fwd_analytic_dominates_mc():
    m = P.ar1(0.5)
    for j in (1, 3, 6):
        bound = dep.markov_fwd_sum_bound(m, j)
        assert bound == pytest.approx(m.state_bound * 0.5 * (1 - 0.5**j) / 0.5)
        est = dep.estimate_fwd_norm(m, j, outer_M=32, inner_N=2048, seed=3)
        assert est.value <= bound + 3 * est.se


def test_markov_fwd_bound_values():
    p = dep.MarkovBoundParams(state_bound=1.0, contraction_rho=0.5, lip_f=1.0)
    assert dep.markov_fwd_bound(p, 3) == pytest.approx(0.25)
    q = dep.MarkovBoundParams(state_bound=2.0, contraction_rho=0.7, lip_f=3.0, C=1.5)
    assert dep.markov_fwd_bound(q, 0) == pytest.approx(2 * 2.0 * 1.5 * 3.0)
    k = np.arange(1, 2000)
    s = sum(dep.markov_fwd_bound(q, int(i)) / math.sqrt(i) for i in k)
    assert math.isfinite(s)
    with pytest.raises(ValueError):
        dep.markov_fwd_bound(dep.MarkovBoundParams(1.0, 1.0, 1.0), 1)


def test_bwd_zero_for_adapted(chain):
    assert dep.estimate_bwd_norm(chain, 4).value == 0.0
    m = P.geometric_linear_process(0.5, 8)
    assert dep.estimate_bwd_norm(m, 4).value == 0.0
    assert all(dep.linear_process_bwd_bound(m, n) == 0.0 for n in range(5))


def test_single_future_coefficient_bwd():
    # X_k = c eps_{k+1}: S_j - E(S_j | F_j) = c (eps_{j+1} - E eps)
    c = 0.7
    m = P.FnOfLinearProcess([c, 0.0], P.BoxInnovation("uniform", -1.0, 1.0), i_min=-1)
    for j in (1, 3):
        assert dep.linear_bwd_exact(m, j) == pytest.approx(c * 1.0)
        est = dep.estimate_bwd_norm(m, j, outer_M=64, inner_N=512, seed=1)
        assert est.value <= c + 3 * est.se
        assert est.value > 0.5 * c


def test_two_sided_bwd_mc_below_analytic():
    m = P.geometric_linear_process(0.5, 10, True, f="tanh")
    bound = dep.linear_bwd_sum_bound(m, 3)
    est = dep.estimate_bwd_norm(m, 3, outer_M=16, inner_N=512, seed=4)
    assert est.value <= bound + 3 * est.se


def test_linear_fwd_bound_geometric():
    rho = 0.5
    m = P.geometric_linear_process(rho, 40)
    delta = m.innovation.diameter
    for n in (1, 2, 5):
        want = delta * (rho**n - rho**41) / (1 - rho)
        assert dep.linear_process_fwd_bound(m, n) == pytest.approx(want)
        full = dep.linear_process_fwd_bound(m, n, include_tail=True)
        assert full == pytest.approx(delta * rho**n / (1 - rho))
    single = P.FnOfLinearProcess([1.0], P.BoxInnovation())
    assert dep.linear_process_fwd_bound(single, 1) == 0.0


def test_linear_exact_below_analytic():
    m = P.geometric_linear_process(0.6, 12, True)
    for j in (1, 4, 9):
        assert dep.linear_fwd_exact(m, j) <= dep.linear_fwd_sum_bound(m, j) + 1e-12
        assert dep.linear_bwd_exact(m, j) <= dep.linear_bwd_sum_bound(m, j) + 1e-12


def test_delta_sum_examples(chain):
    prof = dep.build_profile(P.IIDBounded(P.BoxInnovation()), 50)
    assert dep.delta_sum(prof, 50) == 0.0
    J = 20000
    const = dep.DependenceProfile(np.full(J, 2.0), [dep.EXACT] * J, np.zeros(J), np.zeros(J), [dep.EXACT] * J, np.zeros(J), 1.0)
    # partial sum of zeta(3/2) with an integral tail estimate
    assert dep.delta_sum(const, J) == pytest.approx(2.0 * (zeta(1.5) - 2 / math.sqrt(J)), rel=1e-4)
    one = dep.DependenceProfile(np.array([0.3]), [dep.EXACT], np.zeros(1), np.array([0.2]), [dep.EXACT], np.zeros(1), 1.0)
    assert dep.delta_sum(one, 1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        dep.delta_sum(one, 2)


def test_profile_modes_and_invariants(chain):
    prof = dep.build_profile(chain, 12)
    assert set(prof.fwd_mode) == {dep.EXACT}
    prof.check_invariants()
    mk = dep.build_profile(P.ar1(0.5), 6)
    assert set(mk.fwd_mode) == {dep.ANALYTIC}
    mk.check_invariants()
    lin = dep.build_profile(P.geometric_linear_process(0.5, 8, True, f="tanh"), 5)
    assert set(lin.bwd_mode) == {dep.ANALYTIC}
    lin.check_invariants()


def test_profile_invariant_catches_violation():
    bad = dep.DependenceProfile(np.array([0.1, 0.1, 5.0]), [dep.EXACT] * 3, np.zeros(3), np.zeros(3), [dep.EXACT] * 3,
                                np.zeros(3), 1.0)
    with pytest.raises(AssertionError):
        bad.check_invariants()


def test_profile_csv(tmp_path, chain):
    prof = dep.build_profile(chain, 3)
    prof.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("j,fwd")
    assert len(lines) == 4


def test_dyadic_sums(chain):
    prof = dep.build_profile(chain, 8)
    d, dp = dep.dyadic_sums(prof, 4)
    want = sum(prof.fwd[2**j - 1] * 2 ** (-j / 2) for j in range(4))
    assert d == pytest.approx(want)
    assert dp == 0.0
    with pytest.raises(ValueError):
        dep.dyadic_sums(prof, 5)


def test_phi1_matches_brute_force(chain):
    for n in range(0, 6):
        assert dep.phi1_exact(chain, n) == pytest.approx(brute_phi1(chain, n), abs=1e-14)
    for n in range(0, 4):
        assert dep.phi1_exact(CHAIN3, n) == pytest.approx(brute_phi1(CHAIN3, n), abs=1e-14)


def test_phi1_two_state_closed_form(chain):
    # TV of a 2-state chain contracts by |1 - a - b| per step
    lam = abs(1 - 0.3 - 0.4)
    for n in (1, 2, 5):
        assert dep.phi1_exact(chain, n) == pytest.approx(max(4 / 7, 3 / 7) * lam**n)


def test_phi_zero_for_iid_chain():
    c = P.FiniteStateChain([[0.2, 0.5, 0.3]] * 3, [1.0, 2.0, 3.0])
    for n in (1, 3):
        assert dep.phi1_exact(c, n) < 1e-15
        assert dep.phi_tilde2(c, n, n + 3).value < 1e-15
        assert dep.phi2_exact(c, n, n + 3).value < 1e-15


def test_phi_zero_beyond_dependence_range():
    # observing a rotation chain through a constant shift of states becomes independent after one step
    c = P.FiniteStateChain([[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5], [0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]],
                           [0.0, 1.0, 0.0, 1.0])
    assert dep.phi1_exact(c, 2) < 1e-15


def test_phi_tilde_matches_brute_force():
    for n in (1, 2):
        got = dep.phi_tilde2(CHAIN3, n, n + 3)
        assert got.value == pytest.approx(brute_phi_tilde2(CHAIN3, n, n + 3), abs=1e-14)


def test_phi_tilde_monotone_in_k(chain):
    for c in (chain, CHAIN3):
        for n in (1, 2, 4):
            assert dep.phi_tilde(c, n, 1).value <= dep.phi_tilde(c, n, 2).value + 1e-15


def test_phi2_dominates_phi1(chain):
    for n in (1, 2, 3):
        assert dep.phi2_exact(CHAIN3, n).value >= dep.phi1_exact(CHAIN3, n + 1) - 1e-15


def test_phi2_not_truncated_for_markov(chain):
    v = dep.phi2_exact(chain, 2)
    assert not v.truncated


def test_enumeration_limit():
    k = dep.MAX_ENUM_STATES + 1
    c = P.FiniteStateChain(np.full((k, k), 1.0 / k), np.arange(k, dtype=float))
    assert dep.phi1_exact(c, 1) < 1e-14
    with pytest.raises(ValueError, match="enumeration limit"):
        dep.phi2_exact(c, 1)


def test_phi1_series(chain):
    s, tail = dep.phi1_series(chain)
    lam = 0.3
    want = sum(4 / 7 * lam**j / math.sqrt(j) for j in range(1, 200))
    assert s + tail == pytest.approx(want, rel=1e-10)


def test_mixing_table(chain):
    rows = dep.mixing_table(chain, [1, 2])
    assert [r["n"] for r in rows] == [1, 2]
    assert {"phi1", "phi2", "phi_tilde2"} <= set(rows[0])


def test_mdp_conditions_iid(uniform_iid):
    rep = dep.check_mdp_conditions(uniform_iid, np.array([[1 / 3]]), [4, 8], seed=1, outer_M=4, inner_N=4096)
    assert all(v < 0.05 for v in rep.quantities["cond_trace"])
    assert rep.modes["cond_cov"] == dep.MC


def test_mdp_conditions_chain_exact(chain):
    q = chain.exact_Q()
    rep = dep.check_mdp_conditions(chain, q, [4, 16, 64])
    assert rep.modes["cond_cov"] == dep.EXACT
    for k in ("cond_cov", "cond_trace", "shift_cov", "shift_ip"):
        assert rep.vanishing[k]
    # exact conditional second moments against path enumeration at n = 4
    mom = dep._chain_second_moments(chain, 4)
    for s in range(2):
        tot = 0.0
        for path in itertools.product(range(2), repeat=4):
            pr, prev = 1.0, s
            for y in path:
                pr *= chain.P[prev, y]
                prev = y
            tot += pr * sum(chain.centered[y, 0] for y in path) ** 2
        assert mom[4, s, 0, 0] == pytest.approx(tot)


def test_mdp_conditions_linear_series_converge():
    m = P.geometric_linear_process(0.5, 20)
    # fwd_norm[j] levels off, so the partial sums settle at rate n^{-1/2}
    rep = dep.check_mdp_conditions(m, m.exact_Q(), [512, 2048], {"cauchy": 0.05}, seed=2, outer_M=2, inner_N=64)
    assert rep.series_converging["fwd"]
    s = rep.series["fwd"]
    assert s[1] - s[0] < s[0]


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(1, 6))
def test_phi1_bounds_conditional_mean(a, b, n):
    c = P.two_state_chain(a, b)
    # ||E(X_n | Y_0)|| <= 2 phi_1(n) ||X||_inf
    lhs = np.abs(c.cond_mean(n)).max()
    assert lhs <= 2 * dep.phi1_exact(c, n) * c.bound_B + 1e-12
