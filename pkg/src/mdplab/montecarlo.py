"""Empirical and exhaustive checks of the tail bounds and limit theorems.

Replicates are processed in chunks whose sizes depend only on the problem
shape, each chunk seeded from ``(seed, stream, n, chunk index)``, so tables
are identical for every thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from mdplab._parallel import chunk_sizes, derived_rng, parallel_map
from mdplab.dependence import MC, _chain_second_moments, build_profile, delta_sum
from mdplab.inequalities import hoeffding_tail_bound
from mdplab.processes import (
    EmpiricalIndicator,
    FiniteStateChain,
    FnOfLinearProcess,
    IIDBounded,
    ProcessModel,
)
from mdplab.rate import ball_complement_inf, halfspace_inf, spectral

_CHUNK_FLOATS = 1 << 21


class PreconditionError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _chunk(n: int, dim: int) -> int:
    return max(1, _CHUNK_FLOATS // max(1, n * dim))


# ---------------------------------------------------------------------------
# binomial confidence intervals


def binomial_ci(counts, reps: int, method: str = "normal", z: float = 3.0):
    """Two-sided interval for a binomial proportion, clipped to [0, 1].

    ``normal`` is p +- z sqrt(p(1-p)/reps); ``clopper-pearson`` uses the
    beta quantiles at the matching two-sided level 2 (1 - Phi(z)).
    """
    k = np.asarray(counts, dtype=float)
    p = k / reps
    if method == "normal":
        half = z * np.sqrt(p * (1 - p) / reps)
        lo, hi = p - half, p + half
    elif method == "clopper-pearson":
        alpha = 2.0 * stats.norm.sf(z)
        lo = np.where(k > 0, stats.beta.ppf(alpha / 2, k, reps - k + 1), 0.0)
        hi = np.where(k < reps, stats.beta.ppf(1 - alpha / 2, k + 1, reps - k), 1.0)
    else:
        raise ValueError(f"unknown CI method {method!r}")
    lo = np.clip(np.minimum(lo, p), 0.0, 1.0)
    hi = np.clip(np.maximum(hi, p), 0.0, 1.0)
    return lo, hi


# ---------------------------------------------------------------------------
# tail verification


@dataclass
class TailEstimate:
    x: np.ndarray
    counts: np.ndarray
    reps: int
    p_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    bound: np.ndarray
    n: int
    B: float
    delta: float
    ci_method: str
    exact: bool = False

    @property
    def violated(self) -> np.ndarray:
        return self.ci_low > self.bound

    @property
    def any_violation(self) -> bool:
        return bool(np.any(self.violated))

    def rows(self):
        for i in range(self.x.size):
            yield (
                self.x[i], self.bound[i], self.p_hat[i], self.ci_low[i], self.ci_high[i], bool(self.violated[i]),
            )


def rademacher_max_counts(n: int, x_grid) -> np.ndarray:
    """Exact number of the 2^n sign paths with max_{i<=n} |S_i| >= x."""
    if n > 24:
        raise ValueError("exhaustive enumeration is limited to n <= 24")
    codes = np.arange(1 << n, dtype=np.int64)
    s = np.zeros(codes.size, dtype=np.int64)
    mx = np.zeros(codes.size, dtype=np.int64)
    for i in range(n):
        s += 2 * ((codes >> i) & 1) - 1
        np.maximum(mx, np.abs(s), out=mx)
    x = np.asarray(x_grid, dtype=float)
    hist = np.bincount(mx, minlength=n + 1)
    tail = np.cumsum(hist[::-1])[::-1]  # tail[k] = #{mx >= k}
    idx = np.ceil(x).astype(np.int64)
    out = np.zeros(x.size, dtype=np.int64)
    ok = idx <= n
    out[ok] = tail[np.maximum(idx[ok], 0)]
    return out


def rademacher_max_sq_moment(n: int) -> float:
    """Exact E max_{i<=n} S_i^2 over all 2^n sign paths."""
    codes = np.arange(1 << n, dtype=np.int64)
    s = np.zeros(codes.size, dtype=np.int64)
    mx = np.zeros(codes.size, dtype=np.int64)
    for i in range(n):
        s += 2 * ((codes >> i) & 1) - 1
        np.maximum(mx, s * s, out=mx)
    return float(mx.mean())


def max_partial_sum_norms(model: ProcessModel, n: int, reps: int, seed: int, stream: str) -> np.ndarray:
    """max_{i<=n} ||S_i|| for ``reps`` independent stationary paths."""
    per = _chunk(n, model.dim)

    def run(job):
        idx, size = job
        rng = derived_rng(seed, stream, n, idx)
        x, _ = model.advance(model.stationary_state(rng, size), n, rng)
        s = np.cumsum(x, axis=1)
        return np.sqrt(np.max(np.sum(s * s, axis=2), axis=1))

    return np.concatenate(parallel_map(run, list(enumerate(chunk_sizes(reps, per)))))


def certified_delta(model: ProcessModel, n: int) -> float:
    prof = build_profile(model, n)
    if MC in prof.fwd_mode or MC in prof.bwd_mode:
        raise PreconditionError("model has no exact or analytic dependence ingredients for the bound")
    return delta_sum(prof, n)


def verify_hoeffding(
    model: ProcessModel,
    n: int,
    x_grid,
    reps: int = 100000,
    seed: int = 0,
    delta: float | None = None,
    ci: str = "normal",
    z: float = 3.0,
    exact_max_n: int = 20,
) -> TailEstimate:
    """Compare P(max_{i<=n} ||S_i|| >= x) with the Hoeffding-type bound.

    Scalar Rademacher models with n <= ``exact_max_n`` are enumerated
    exhaustively, giving exact probabilities.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or np.any(np.diff(x) <= 0) or np.any(x <= 0):
        raise ValueError("x grid must be positive and strictly increasing")
    if delta is None:
        delta = certified_delta(model, n)
    B = float(model.bound_B)
    bound = np.atleast_1d(hoeffding_tail_bound(n, x, B, delta))
    if isinstance(model, IIDBounded) and model.is_rademacher and n <= exact_max_n:
        ratio = model.innovation.half_width
        counts = rademacher_max_counts(n, x / ratio)
        total = 1 << n
        p = counts / total
        return TailEstimate(x, counts, total, p, p.copy(), p.copy(), bound, n, B, delta, "exact", True)
    mx = max_partial_sum_norms(model, n, reps, seed, "hoeffding")
    counts = np.array([int(np.count_nonzero(mx >= xi)) for xi in x])
    lo, hi = binomial_ci(counts, reps, ci, z)
    return TailEstimate(x, counts, reps, counts / reps, lo, hi, bound, n, B, delta, ci)


# ---------------------------------------------------------------------------
# moderate-deviation log tails


@dataclass(frozen=True)
class ARule:
    """Speed a_n. ``power``: n^-beta; ``inverse-log``: 1/log n; ``constant``: c."""

    kind: str = "power"
    beta: float = 0.5
    c: float = 1.0

    def __call__(self, n: int) -> float:
        if self.kind == "power":
            return float(n) ** (-self.beta)
        if self.kind == "inverse-log":
            return 1.0 / math.log(n)
        if self.kind == "constant":
            return self.c
        raise ValueError(f"unknown a_n rule {self.kind!r}")

    def validate(self) -> None:
        """Require a_n -> 0 and n a_n -> infinity."""
        if self.kind == "power":
            if not 0.0 < self.beta < 1.0:
                raise PreconditionError(
                    f"a_n = n^-{self.beta} violates the hypothesis a_n -> 0 and n a_n -> infinity (need 0 < beta < 1)"
                )
        elif self.kind == "inverse-log":
            return
        elif self.kind == "constant":
            raise PreconditionError("a constant a_n violates the hypothesis a_n -> 0 and n a_n -> infinity")
        else:
            raise PreconditionError(f"unknown a_n rule {self.kind!r}")

    def max_block_exponent(self) -> float:
        """Largest alpha with n^alpha = o(sqrt(n a_n))."""
        if self.kind == "power":
            return 0.5 * (1.0 - self.beta)
        if self.kind == "inverse-log":
            return 0.5
        raise PreconditionError("block exponent is undefined for this a_n rule")


@dataclass(frozen=True)
class Region:
    """``halfspace``: {<u, x> >= r}; ``ball-complement``: {||x|| >= r}."""

    kind: str
    r: float
    u: tuple = ()

    def contains(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "halfspace":
            return y @ np.asarray(self.u, dtype=float) >= self.r
        if self.kind == "ball-complement":
            return np.sqrt(np.sum(y * y, axis=-1)) >= self.r
        raise ValueError(f"unknown region {self.kind!r}")

    def rate_inf(self, Q: np.ndarray) -> float:
        sr = spectral(Q)
        if self.kind == "halfspace":
            return halfspace_inf(sr, Q, np.asarray(self.u, dtype=float), self.r)
        return ball_complement_inf(sr, self.r)


@dataclass
class LogTailRow:
    n: int
    a_n: float
    reps: int
    count: int
    p_hat: float
    ci_low: float
    ci_high: float
    log_tail: float
    log_tail_low: float
    log_tail_high: float
    row_kind: str
    exact_p: float
    exact_log_tail: float
    theory: float


def _endpoint_sums(model, n, reps, seed):
    """S_n for ``reps`` paths; Rademacher uses the exact binomial law."""
    if isinstance(model, IIDBounded) and model.is_rademacher:
        rng = derived_rng(seed, "mdp-binomial", n)
        k = rng.binomial(n, 0.5, size=reps)
        return ((2 * k - n) * model.innovation.half_width).astype(float)[:, None]
    per = _chunk(n, model.dim)

    def run(job):
        idx, size = job
        rng = derived_rng(seed, "mdp", n, idx)
        x, _ = model.advance(model.stationary_state(rng, size), n, rng)
        return x.sum(axis=1)

    return np.concatenate(parallel_map(run, list(enumerate(chunk_sizes(reps, per)))))


def mdp_log_tail(
    model: ProcessModel,
    n_grid,
    a_rule: ARule,
    region: Region,
    Q,
    reps: int = 100000,
    seed: int = 0,
    ci: str = "clopper-pearson",
    z: float = 1.959963984540054,
) -> list[LogTailRow]:
    """a_n log P(sqrt(a_n / n) S_n in region) with CIs, next to -inf over the region of the rate.

    This is a diagnostic. The limit is asymptotic and finite-n agreement is
    not asserted.
    """
    a_rule.validate()
    Qm = np.asarray(getattr(Q, "matrix", Q), dtype=float)
    theory = -region.rate_inf(Qm)
    rows = []
    for n in n_grid:
        n = int(n)
        a = a_rule(n)
        y = math.sqrt(a / n) * _endpoint_sums(model, n, reps, seed)
        k = int(np.count_nonzero(region.contains(y)))
        lo, hi = binomial_ci([k], reps, ci, z)
        lo, hi = float(lo[0]), float(hi[0])
        exact_p = math.nan
        if isinstance(model, IIDBounded) and model.is_rademacher and region.kind == "halfspace":
            # S_n = h (2K - n): count K with sqrt(a/n) h (2K - n) u >= r
            h, u = model.innovation.half_width, float(region.u[0])
            kk = np.arange(n + 1)
            hit = math.sqrt(a / n) * h * (2 * kk - n) * u >= region.r
            exact_p = float(stats.binom.pmf(kk[hit], n, 0.5).sum())
        if k == 0:
            row = LogTailRow(n, a, reps, 0, 0.0, lo, hi, a * math.log(3.0 / reps), -math.inf,
                             a * math.log(3.0 / reps), "one-sided", exact_p, _alog(a, exact_p), theory)
        else:
            p = k / reps
            row = LogTailRow(n, a, reps, k, p, lo, hi, a * math.log(p), _alog(a, lo), _alog(a, hi),
                             "point", exact_p, _alog(a, exact_p), theory)
        rows.append(row)
    return rows


def _alog(a, p):
    if not p > 0:
        return -math.inf if p == 0 else math.nan
    return a * math.log(p)


# ---------------------------------------------------------------------------
# block martingale approximation


@dataclass
class BlockReport:
    n: int
    m: int
    k: int
    alpha: float
    a_n: float
    mode: str
    residual: np.ndarray  # raw sup_t ||S_[nt] - M_[k t]|| per replicate
    trace_Q: float
    bracket: np.ndarray  # (1/m) E(||D_1||^2 | F_0) at each conditioning atom or sampled past
    cost_inner_steps: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def scaled(self) -> np.ndarray:
        """residual / sqrt(n a_n)."""
        return self.residual / math.sqrt(self.n * self.a_n)

    @property
    def scaled_mdp(self) -> np.ndarray:
        """residual * sqrt(a_n / n), the scale on which sqrt(a_n) Z_n lives."""
        return self.residual * math.sqrt(self.a_n / self.n)

    @property
    def median(self) -> float:
        return float(np.median(self.scaled))

    @property
    def bracket_rel_error(self) -> float:
        return float(np.max(np.abs(self.bracket - self.trace_Q)) / self.trace_Q)


def block_size(n: int, alpha: float) -> int:
    return max(1, int(math.floor(n**alpha + 1e-12)))


def sup_residual(S: np.ndarray, M: np.ndarray) -> np.ndarray:
    """sup_t ||S_[nt] - M_[kt]|| from partial sums S (b, n+1, m) and M (b, k+1, m).

    Both step functions jump only at t = l/n or t = i/k, so the sup is a max
    over those breakpoints, located with integer arithmetic.
    """
    n = S.shape[1] - 1
    k = M.shape[1] - 1
    l = np.arange(n + 1)
    i = np.arange(k + 1)
    ns = np.concatenate([l, (i * n) // k])
    ks = np.concatenate([(l * k) // n, i])
    d = S[:, ns] - M[:, ks]
    return np.sqrt(np.max(np.sum(d * d, axis=2), axis=1))


def _chain_blocks(chain: FiniteStateChain, n, m, k, reps, seed):
    gm = chain.cond_partial_sum_mean(m)  # E(X_{1,m} | Y_0 = s)
    per = _chunk(n, chain.dim)

    def run(job):
        idx, size = job
        rng = derived_rng(seed, "blocks", n, idx)
        st = chain.stationary_state(rng, size)
        y0 = st.data["y"]
        ys, _ = chain._path(st, n, rng)
        x = chain.centered[ys]
        S = np.concatenate([np.zeros((size, 1, chain.dim)), np.cumsum(x, axis=1)], axis=1)
        blocks = x[:, : k * m].reshape(size, k, m, chain.dim).sum(axis=2)
        starts = np.concatenate([y0[:, None], ys[:, m - 1 : k * m - 1 : m]], axis=1)[:, :k]
        D = blocks - gm[starts]
        M = np.concatenate([np.zeros((size, 1, chain.dim)), np.cumsum(D, axis=1)], axis=1)
        return sup_residual(S, M)

    return np.concatenate(parallel_map(run, list(enumerate(chunk_sizes(reps, per)))))


def chain_bracket(chain: FiniteStateChain, m: int) -> np.ndarray:
    """(1/m) E(||D_{1,m}||^2 | Y_0 = s) for every reachable s, exactly."""
    mom = _chain_second_moments(chain, m)[m]
    g = chain.cond_partial_sum_mean(m)
    val = np.trace(mom, axis1=1, axis2=2) - np.sum(g * g, axis=1)
    return val[chain.pi > 0] / m


def _linear_blocks(model: FnOfLinearProcess, n, m, k, reps, seed):
    # D_i = sum_{r=1..m} b_r (eps_{(i-1)m+r} - mu), b_r = sum_{j=1..m} c_{j-r}
    b = np.zeros((m, model.dim, model.dim))
    for r in range(1, m + 1):
        for j in range(1, m + 1):
            b[r - 1] += model.c(j - r)
    per = _chunk(n + model.n_past + model.n_ahead, model.dim)
    mu = model.innovation.mean

    def run(job):
        idx, size = job
        rng = derived_rng(seed, "blocks", n, idx)
        eps, _ = model.advance_innovations(model.stationary_state(rng, size), n, rng)
        x = model.filter(eps, n)
        S = np.concatenate([np.zeros((size, 1, model.dim)), np.cumsum(x, axis=1)], axis=1)
        eta = (eps[:, model.n_past : model.n_past + k * m] - mu).reshape(size, k, m, model.dim)
        D = np.einsum("bkri,rji->bkj", eta, b)
        M = np.concatenate([np.zeros((size, 1, model.dim)), np.cumsum(D, axis=1)], axis=1)
        return sup_residual(S, M)

    return np.concatenate(parallel_map(run, list(enumerate(chunk_sizes(reps, per)))))


def _nested_blocks(model, n, m, k, reps, seed, inner_N, budget):
    if not model.adapted:
        raise PreconditionError("nested block estimates are implemented for adapted models")
    done = []
    cost = 0
    per_rep = k * inner_N * m
    for r in range(reps):
        if cost + per_rep > budget:
            raise BudgetExceededError(
                f"nested MC budget of {budget} inner steps exhausted after {r} replicates "
                f"(each needs {per_rep})",
                np.asarray(done),
            )
        rng = derived_rng(seed, "blocks-nested", n, r)
        st = model.stationary_state(rng, 1)
        xs, Ds = [], []
        for i in range(k):
            snap = model.snapshot(st)
            inner_rng = derived_rng(seed, "blocks-inner", n, r, i)
            fut, _ = model.advance(snap.repeat(inner_N), m, inner_rng)
            cond = fut.sum(axis=1).mean(axis=0)
            x, st = model.advance(st, m, rng)
            xs.append(x[0])
            Ds.append(x[0].sum(axis=0) - cond)
        if n > k * m:
            x, st = model.advance(st, n - k * m, rng)
            xs.append(x[0])
        x = np.concatenate(xs, axis=0)[None]
        S = np.concatenate([np.zeros((1, 1, model.dim)), np.cumsum(x, axis=1)], axis=1)
        M = np.concatenate([np.zeros((1, 1, model.dim)), np.cumsum(np.asarray(Ds)[None], axis=1)], axis=1)
        done.append(float(sup_residual(S, M)[0]))
        cost += per_rep
    return np.asarray(done), cost


def block_martingale_residual(
    model: ProcessModel,
    n: int,
    alpha: float = 0.2,
    reps: int = 200,
    seed: int = 0,
    a_rule: ARule | None = None,
    trace_Q: float | None = None,
    inner_N: int = 2048,
    budget: int = 2_000_000_000,
) -> BlockReport:
    """Distance between partial sums and the block martingale M^{(m_n)}, m_n = floor(n^alpha)."""
    a_rule = a_rule or ARule()
    a_rule.validate()
    if not 0.0 <= alpha < a_rule.max_block_exponent():
        raise PreconditionError(
            f"alpha={alpha} does not give m_n = o(sqrt(n a_n)); need alpha < {a_rule.max_block_exponent():g}"
        )
    m = block_size(n, alpha)
    k = n // m
    cost = 0
    if isinstance(model, FiniteStateChain):
        res = _chain_blocks(model, n, m, k, reps, seed)
        mode = "exact"
        tq = float(np.trace(model.exact_Q())) if trace_Q is None else trace_Q
        bracket = chain_bracket(model, m)
    elif isinstance(model, EmpiricalIndicator) and isinstance(model.base, FiniteStateChain):
        return block_martingale_residual(model.as_finite_chain(), n, alpha, reps, seed, a_rule, trace_Q)
    elif isinstance(model, FnOfLinearProcess) and model.is_linear:
        res = _linear_blocks(model, n, m, k, reps, seed)
        mode = "linear-exact"
        tq = float(np.trace(model.exact_Q())) if trace_Q is None else trace_Q
        bracket = np.array([_linear_bracket(model, m)])
    else:
        if trace_Q is None:
            raise PreconditionError("nested mode needs trace_Q for the bracket diagnostic")
        res, cost = _nested_blocks(model, n, m, k, reps, seed, inner_N, budget)
        mode = "nested-mc"
        tq = trace_Q
        bracket = _mc_bracket(model, m, seed, inner_N)
    return BlockReport(n, m, k, alpha, a_rule(n), mode, res, tq, bracket, cost)


def _linear_bracket(model: FnOfLinearProcess, m: int) -> float:
    # D_1 = sum_r b_r eta_r with independent eta, so E||D_1||^2 = var * sum ||b_r||_F^2
    tot = 0.0
    for r in range(1, m + 1):
        b = sum(model.c(j - r) for j in range(1, m + 1))
        tot += float(np.sum(b * b))
    return model.innovation.variance * tot / m


def _mc_bracket(model, m, seed, inner_N, outer=16):
    vals = []
    for w in range(outer):
        rng = derived_rng(seed, "bracket", m, w)
        snap = model.snapshot(model.stationary_state(rng, 1))
        fut, _ = model.advance(snap.repeat(inner_N), m, rng)
        s = fut.sum(axis=1)
        d = s - s.mean(axis=0)
        vals.append(float(np.mean(np.sum(d * d, axis=1))) / m)
    return np.asarray(vals)


# ---------------------------------------------------------------------------
# law of the iterated logarithm


def beta_n(n: int) -> float:
    """sqrt(2 n log log n), defined for n >= 3."""
    if n < 3:
        raise ValueError("beta(n) needs n >= 3")
    return math.sqrt(2.0 * n * math.log(math.log(n)))


@dataclass
class LILTable:
    n: list[int]
    sup_stat: np.ndarray  # (reps, len(n)) of max_{k<=n} ||S_k|| / beta(n)
    l1_stat: np.ndarray | None  # (reps, len(n)) of ||S_n||_{L^1} / beta(n)
    reference: float | None = None

    def running_max(self, which: str = "sup") -> np.ndarray:
        a = self.sup_stat if which == "sup" else self.l1_stat
        return np.maximum.accumulate(a, axis=1)

    def rows(self):
        for c, n in enumerate(self.n):
            s = self.sup_stat[:, c]
            row = {
                "n": n,
                "beta": beta_n(n),
                "sup_median": float(np.median(s)),
                "sup_q90": float(np.quantile(s, 0.9)),
                "sup_max": float(s.max()),
            }
            if self.l1_stat is not None:
                l1 = self.l1_stat[:, c]
                row.update(l1_median=float(np.median(l1)), l1_max=float(l1.max()),
                           l1_running_max=float(self.running_max("l1")[:, c].max()))
            row["reference"] = self.reference if self.reference is not None else math.nan
            yield row


def lil_statistic(model: ProcessModel, n_list, reps: int = 1000, seed: int = 0, reference: float | None = None) -> LILTable:
    """Normalized partial-sum sups along one path per replicate, read off at each n in ``n_list``."""
    ns = sorted(int(n) for n in n_list)
    if ns[0] < 3:
        raise ValueError("beta(n) needs n >= 3")
    nmax = ns[-1]
    idx = np.asarray(ns) - 1
    betas = np.array([beta_n(n) for n in ns])
    cvm = isinstance(model, EmpiricalIndicator)
    per = _chunk(nmax, model.dim)

    def run(job):
        j, size = job
        rng = derived_rng(seed, "lil", nmax, j)
        x, _ = model.advance(model.stationary_state(rng, size), nmax, rng)
        s = np.cumsum(x, axis=1)
        norms = np.sqrt(np.sum(s * s, axis=2))
        sup = np.maximum.accumulate(norms, axis=1)[:, idx] / betas
        l1 = model.l1_norm(s[:, idx]) / betas if cvm else None
        return sup, l1

    parts = parallel_map(run, list(enumerate(chunk_sizes(reps, per))))
    sup = np.concatenate([p[0] for p in parts])
    l1 = np.concatenate([p[1] for p in parts]) if cvm else None
    return LILTable(ns, sup, l1, reference)
