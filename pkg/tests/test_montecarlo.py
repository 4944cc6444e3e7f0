import itertools
import math

import numpy as np
import pytest
from scipy import stats

from mdplab import montecarlo as mc
from mdplab import processes as P
from mdplab.inequalities import hoeffding_tail_bound


def brute_max_counts(n, xs):
    mx = [max(abs(v) for v in np.cumsum(s)) for s in itertools.product((-1, 1), repeat=n)]
    return np.array([sum(m >= x for m in mx) for x in xs])


def test_binomial_ci_normal_and_clip():
    lo, hi = mc.binomial_ci([50], 100, "normal", z=2.0)
    assert lo[0] == pytest.approx(0.4) and hi[0] == pytest.approx(0.6)
    lo, hi = mc.binomial_ci([0, 100], 100, "normal")
    assert lo.tolist() == [0.0, 1.0] and hi.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        mc.binomial_ci([1], 10, "wilson")


def test_binomial_ci_clopper_pearson():
    lo, hi = mc.binomial_ci([0], 100, "clopper-pearson", z=1.959963984540054)
    assert lo[0] == 0.0
    assert hi[0] == pytest.approx(1 - 0.025 ** (1 / 100))
    lo, hi = mc.binomial_ci([7], 20, "clopper-pearson", z=1.959963984540054)
    assert lo[0] == pytest.approx(stats.beta.ppf(0.025, 7, 14))
    assert hi[0] == pytest.approx(stats.beta.ppf(0.975, 8, 13))


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_rademacher_max_counts_brute_force(n):
    xs = [0.5, 1, 1.5, 2, 3, n, n + 0.5]
    assert np.array_equal(mc.rademacher_max_counts(n, xs), brute_max_counts(n, xs))


def test_rademacher_max_counts_limit():
    with pytest.raises(ValueError):
        mc.rademacher_max_counts(25, [1.0])


def test_verify_hoeffding_exact_rows(rademacher):
    xs = np.arange(1, 11, dtype=float)
    est = mc.verify_hoeffding(rademacher, 10, xs)
    assert est.exact and est.reps == 1024
    assert np.array_equal(est.counts, brute_max_counts(10, xs))
    assert np.allclose(est.bound, hoeffding_tail_bound(10, xs, 1.0, 0.0))
    assert not est.any_violation
    assert len(list(est.rows())) == 10


def test_verify_hoeffding_mc_and_validation(chain):
    est = mc.verify_hoeffding(chain, 32, [2.0, 8.0, 20.0], reps=4000, seed=1)
    assert not est.exact
    assert np.all(est.ci_low <= est.p_hat) and np.all(est.p_hat <= est.ci_high)
    assert np.all(np.diff(est.p_hat) <= 0)
    assert not est.any_violation
    with pytest.raises(ValueError):
        mc.verify_hoeffding(chain, 32, [2.0, 1.0])


def test_ci_coverage_calibration(rademacher):
    # 95% intervals built from MC replicates cover the enumerated probability
    n, x = 10, 4.0
    exact = brute_max_counts(n, [x])[0] / 2**n
    z = stats.norm.ppf(0.975)
    hits = 0
    for t in range(1000):
        est = mc.verify_hoeffding(rademacher, n, [x], reps=400, seed=t, ci="clopper-pearson", z=z, exact_max_n=0)
        hits += est.ci_low[0] <= exact <= est.ci_high[0]
    assert hits >= 930


def test_arule():
    assert mc.ARule()(100) == pytest.approx(0.1)
    assert mc.ARule("inverse-log")(math.e**2) == pytest.approx(0.5)
    assert mc.ARule("power", 0.1).max_block_exponent() == pytest.approx(0.45)
    with pytest.raises(mc.PreconditionError, match="constant"):
        mc.ARule("constant", c=0.5).validate()
    for beta in (0.0, 1.0):
        with pytest.raises(mc.PreconditionError):
            mc.ARule("power", beta).validate()


def test_region_contains_and_inf():
    y = np.array([[2.0, 0.0], [0.5, 0.5], [0.0, -3.0]])
    assert mc.Region("halfspace", 1.0, (1.0, 0.0)).contains(y).tolist() == [True, False, False]
    assert mc.Region("ball-complement", 1.0).contains(y).tolist() == [True, False, True]
    assert mc.Region("halfspace", 1.0, (1.0,)).rate_inf(np.eye(1)) == pytest.approx(0.5)


def test_mdp_log_tail_rademacher_exact_column(rademacher):
    rows = mc.mdp_log_tail(rademacher, [100], mc.ARule(), mc.Region("halfspace", 1.0, (1.0,)), np.eye(1), reps=20000)
    r = rows[0]
    assert r.row_kind == "point"
    assert r.ci_low <= r.exact_p <= r.ci_high
    assert r.theory == pytest.approx(-0.5)
    assert r.log_tail_low <= r.log_tail <= r.log_tail_high


def test_mdp_log_tail_one_sided_row(rademacher):
    rows = mc.mdp_log_tail(rademacher, [100], mc.ARule(), mc.Region("halfspace", 5.0, (1.0,)), np.eye(1), reps=100)
    r = rows[0]
    assert r.count == 0 and r.row_kind == "one-sided"
    assert r.log_tail == pytest.approx(0.1 * math.log(3 / 100))
    with pytest.raises(mc.PreconditionError):
        mc.mdp_log_tail(rademacher, [100], mc.ARule("constant"), mc.Region("ball-complement", 1.0), np.eye(1))


def test_sup_residual_breakpoints():
    S = np.array([0.0, 1.0, 3.0, 2.0, 2.0])[None, :, None]
    M = np.array([0.0, 3.0, 2.0])[None, :, None]
    # dense evaluation of sup_t |S_[4t] - M_[2t]|
    t = np.linspace(0, 1, 100001)
    dense = np.max(np.abs(S[0, np.floor(4 * t + 1e-12).astype(int), 0] - M[0, np.floor(2 * t + 1e-12).astype(int), 0]))
    assert mc.sup_residual(S, M)[0] == pytest.approx(dense)


def test_block_residual_m1_is_zero_for_martingale_differences():
    m = P.FnOfLinearProcess([1.0], P.BoxInnovation("uniform", -1.0, 1.0), 0)
    rep = mc.block_martingale_residual(m, 256, alpha=0.0, reps=20, seed=1)
    assert rep.m == 1 and rep.k == 256
    assert np.max(rep.residual) < 1e-12
    assert rep.bracket[0] == pytest.approx(1 / 3)


def test_block_residual_precondition(chain):
    with pytest.raises(mc.PreconditionError, match="alpha"):
        mc.block_martingale_residual(chain, 256, alpha=0.3)
    with pytest.raises(mc.PreconditionError, match="trace_Q"):
        mc.block_martingale_residual(P.ar1(0.5), 64, alpha=0.1)


def test_chain_bracket_matches_enumeration(chain):
    m = 3
    got = mc.chain_bracket(chain, m)
    y = chain.centered[:, 0]
    want = []
    for s in range(2):
        vals, probs = [], []
        for path in itertools.product(range(2), repeat=m):
            p, prev = 1.0, s
            for j in path:
                p *= chain.P[prev, j]
                prev = j
            vals.append(sum(y[j] for j in path))
            probs.append(p)
        vals, probs = np.array(vals), np.array(probs)
        mean = probs @ vals
        want.append((probs @ vals**2 - mean**2) / m)
    assert np.allclose(got, want)


def test_chain_bracket_approaches_trace_q(chain):
    errs = [abs(mc.chain_bracket(chain, m) - chain.exact_Q()[0, 0]).max() for m in (2, 8, 32)]
    assert errs[0] > errs[1] > errs[2]


def test_nested_budget_error():
    with pytest.raises(mc.BudgetExceededError) as ei:
        mc.block_martingale_residual(P.ar1(0.5), 64, alpha=0.2, reps=5, trace_Q=1.0, inner_N=64, budget=1000)
    assert ei.value.partial.size == 0


def test_beta_n():
    assert mc.beta_n(3) == pytest.approx(math.sqrt(6 * math.log(math.log(3))))
    with pytest.raises(ValueError):
        mc.beta_n(2)


def test_lil_iid_envelope(uniform_iid):
    # |S_n| / beta(n) concentrates below sqrt(Q) (1 + eps); the 90% quantile is checked
    ns = [1000, 10000, 50000]
    tab = mc.lil_statistic(uniform_iid, ns, reps=1000, seed=2)
    q = math.sqrt(1 / 3)
    rows = list(tab.rows())
    assert all(r["sup_q90"] <= q * 1.5 for r in rows)
    assert tab.sup_stat.shape == (1000, 3)
    assert np.all(tab.running_max() >= tab.sup_stat)


def test_lil_cvm_l1_below_sigma():
    grid, w = P.uniform_grid(64)
    ind = P.EmpiricalIndicator(P.IIDBounded(P.BoxInnovation("uniform", 0.0, 1.0)), grid, w)
    sigma = math.sqrt(1 / 12)
    tab = mc.lil_statistic(ind, [1000, 4000], reps=500, seed=3, reference=sigma)
    assert tab.l1_stat.shape == (500, 2)
    assert np.quantile(tab.l1_stat, 0.9, axis=0).max() <= sigma * 1.5
    assert next(tab.rows())["reference"] == sigma
