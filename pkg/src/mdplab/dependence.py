"""Dependence coefficients consumed by the tail bounds and the MDP.

The essential sup in ``|| ||E(S_j | F_0)|| ||_inf`` is computed exactly where
the conditioning sigma-field has finitely many atoms, bounded analytically
where a closed form exists, and otherwise approximated by a max over sampled
pasts. The last kind is a lower estimate and is tagged as such.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from mdplab._parallel import chunk_sizes, derived_rng, parallel_map
from mdplab.processes import (
    EmpiricalIndicator,
    FiniteStateChain,
    FnOfLinearProcess,
    IIDBounded,
    ProcessModel,
    StableMarkov,
)

EXACT = "exact"
ANALYTIC = "analytic-bound"
MC = "mc-lower-estimate"

MAX_ENUM_STATES = 12
_INNER_BUDGET = 1 << 22  # floats per inner chunk


# ---------------------------------------------------------------------------
# Monte-Carlo estimates


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    mode: str
    argmax: int = -1


def _inner_mean(model, state, n, inner_N, rng, reduce):
    """Mean and per-coordinate variance of reduce(X_{1..n}) over resampled futures."""
    per = max(1, _INNER_BUDGET // max(1, n * model.dim))
    total = None
    total_sq = None
    for size in chunk_sizes(inner_N, per):
        x, _ = model.advance(state.repeat(size), n, rng)
        s = reduce(x)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError("non-finite values in conditional-expectation accumulation")
        total = s.sum(axis=0) if total is None else total + s.sum(axis=0)
        total_sq = (s * s).sum(axis=0) if total_sq is None else total_sq + (s * s).sum(axis=0)
    mean = total / inner_N
    var = np.maximum(total_sq / inner_N - mean * mean, 0.0) * inner_N / max(inner_N - 1, 1)
    return mean, var


def estimate_fwd_norm(
    model: ProcessModel,
    j: int,
    outer_M: int = 256,
    inner_N: int = 4096,
    seed: int = 0,
    single: bool = False,
) -> MCEstimate:
    """Max over sampled pasts of ||E(S_j | F_0)|| (``single``: ||E(X_j | F_0)||).

    ``se`` is the inner standard error sqrt(tr Cov / inner_N) at the maximizing
    past. The result is a lower estimate of the essential sup, up to the
    upward bias of a norm of a noisy mean.
    """
    if outer_M < 1 or inner_N < 1 or j < 1:
        raise ValueError("need j, outer_M, inner_N >= 1")
    reduce = (lambda x: x[:, -1]) if single else (lambda x: x.sum(axis=1))
    stream = "fwd-single" if single else "fwd"

    def one(w):
        past_rng = derived_rng(seed, stream, j, w, 0)
        fut_rng = derived_rng(seed, stream, j, w, 1)
        snap = model.snapshot(model.stationary_state(past_rng, 1))
        mean, var = _inner_mean(model, snap, j, inner_N, fut_rng, reduce)
        return float(np.linalg.norm(mean)), float(math.sqrt(var.sum() / inner_N))

    res = parallel_map(one, range(outer_M))
    k = int(np.argmax([r[0] for r in res]))
    return MCEstimate(res[k][0], res[k][1], MC, k)


def estimate_bwd_norm(
    model: ProcessModel,
    j: int,
    outer_M: int = 256,
    inner_N: int = 4096,
    seed: int = 0,
) -> MCEstimate:
    """Max over sampled worlds of ||S_j - E(S_j | F_j)||.

    Adapted models return an exact 0 without sampling. For two-sided linear
    processes everything up to time j is frozen and only the innovations
    eps_{j+1}, ... that enter X_1..X_j are resampled.
    """
    if outer_M < 1 or inner_N < 1 or j < 1:
        raise ValueError("need j, outer_M, inner_N >= 1")
    if model.adapted:
        return MCEstimate(0.0, 0.0, EXACT)
    if not isinstance(model, FnOfLinearProcess):
        raise ValueError("backward estimates are implemented for linear-process models only")
    lo = model.n_past + j
    per = max(1, _INNER_BUDGET // max(1, (lo + model.n_ahead) * model.dim))

    def one(w):
        rng = derived_rng(seed, "bwd", j, w, 0)
        fut_rng = derived_rng(seed, "bwd", j, w, 1)
        eps, _ = model.advance_innovations(model.stationary_state(rng, 1), j, rng)
        s = model.filter(eps, j).sum(axis=1)[0]
        total = np.zeros(model.dim)
        total_sq = np.zeros(model.dim)
        for size in chunk_sizes(inner_N, per):
            rep = np.repeat(eps, size, axis=0)
            rep[:, lo:] = model.innovation.sample(fut_rng, (size, model.n_ahead))
            sj = model.filter(rep, j).sum(axis=1)
            if not np.all(np.isfinite(sj)):
                raise FloatingPointError("non-finite values in conditional-expectation accumulation")
            total += sj.sum(axis=0)
            total_sq += (sj * sj).sum(axis=0)
        mean = total / inner_N
        var = np.maximum(total_sq / inner_N - mean * mean, 0.0) * inner_N / max(inner_N - 1, 1)
        return float(np.linalg.norm(s - mean)), float(math.sqrt(var.sum() / inner_N))

    res = parallel_map(one, range(outer_M))
    k = int(np.argmax([r[0] for r in res]))
    return MCEstimate(res[k][0], res[k][1], MC, k)


# ---------------------------------------------------------------------------
# exact values


def chain_fwd_exact(chain: FiniteStateChain, j: int, single: bool = False) -> float:
    """max over reachable Y_0 of ||E(S_j | Y_0)|| (Markov: Y_0 generates the atoms)."""
    g = chain.cond_mean(j) if single else chain.cond_partial_sum_mean(j)
    norms = np.sqrt(np.sum(g * g, axis=1))
    return float(norms[chain.pi > 0].max())


def _scalar_linear(model) -> bool:
    return isinstance(model, FnOfLinearProcess) and model.is_linear and model.dim == 1


def linear_fwd_exact(model: FnOfLinearProcess, j: int) -> float:
    """Scalar identity-f case: ess sup |E(S_j | F_0)| over the innovation box."""
    if not _scalar_linear(model):
        raise ValueError("exact linear values need a scalar identity-f process")
    c = model.coeffs[:, 0, 0]
    # E(S_j | F_0) = sum_{t <= 0} a_t (eps_t - mu), a_t = sum_{k=1..j} c_{k-t}
    total = 0.0
    for t in range(-model.i_max, 1):
        total += abs(_coef_sum(c, model.i_min, np.arange(1, j + 1) - t))
    return float(model.innovation.half_width * total)


def linear_bwd_exact(model: FnOfLinearProcess, j: int) -> float:
    """Scalar identity-f case: ess sup |S_j - E(S_j | F_j)|."""
    if not _scalar_linear(model):
        raise ValueError("exact linear values need a scalar identity-f process")
    c = model.coeffs[:, 0, 0]
    total = 0.0
    # future innovations eps_t, t > j, enter through offsets i = k - t < 0
    for t in range(j + 1, j + model.n_ahead + 1):
        total += abs(_coef_sum(c, model.i_min, np.arange(1, j + 1) - t))
    return float(model.innovation.half_width * total)


def _coef_sum(c, i_min, offsets):
    r = offsets - i_min
    r = r[(r >= 0) & (r < c.size)]
    return float(c[r].sum())


# ---------------------------------------------------------------------------
# analytic bounds


@dataclass(frozen=True)
class MarkovBoundParams:
    state_bound: float
    contraction_rho: float
    lip_f: float
    C: float = 1.0


def markov_fwd_bound(params, k: int) -> float:
    """2 ||Y_0||_inf C rho^k Lip(f), a bound on ||E(X_k | F_0)||_inf."""
    rho = params.contraction_rho
    if not 0.0 <= rho < 1.0:
        raise ValueError("contraction rate must lie in [0, 1)")
    if k < 0:
        raise ValueError("k must be nonnegative")
    return 2.0 * params.state_bound * params.C * rho**k * params.lip_f


def markov_fwd_sum_bound(model: StableMarkov, j: int) -> float:
    """Bound on ||E(S_j | F_0)||_inf for a contracting Markov model."""
    rho = model.contraction_rho
    geo = rho * (1.0 - rho**j) / (1.0 - rho) if rho > 0 else 0.0
    if model.family == "affine" and model.observable_name == "identity" and model.centering == "analytic":
        # E(Y_k | F_0) = A^k Y_0, so sum_k ||A||^k ||Y_0|| suffices
        return float(model.state_bound * geo)
    return 2.0 * model.state_bound * model.C * model.lip_f * geo


def _check_modulus(model):
    from mdplab.processes import Lipschitz, LogModulus

    if not isinstance(model.modulus, (Lipschitz, LogModulus)):
        raise ValueError("unknown modulus family")


def linear_process_fwd_bound(model: FnOfLinearProcess, n: int, include_tail: bool = False) -> float:
    """w_f(delta(eps_0) * sum_{k >= n} ||c_k||), a bound on ||E(X_n | F_0)||_inf.

    ``include_tail`` adds the norm mass dropped by truncation, giving the
    bound for the untruncated family.
    """
    _check_modulus(model)
    offs = model.offsets()
    mass = float(model.op_norms[offs >= n].sum())
    if include_tail:
        mass += model.tail_norm_sum
    return float(model.modulus(model.innovation.diameter * mass))


def linear_process_bwd_bound(model: FnOfLinearProcess, n: int, include_tail: bool = False) -> float:
    """Bound on ||X_{-n} - E(X_{-n} | F_0)||_inf.

    X_{-n} depends on innovations after time 0 only through offsets i < -n,
    so the norm mass is taken over those.
    """
    _check_modulus(model)
    offs = model.offsets()
    mass = float(model.op_norms[offs < -n].sum())
    if include_tail and model.i_min < 0:
        mass += 0.5 * model.tail_norm_sum
    return float(model.modulus(model.innovation.diameter * mass))


def linear_fwd_sum_bound(model: FnOfLinearProcess, j: int) -> float:
    return float(sum(linear_process_fwd_bound(model, k) for k in range(1, j + 1)))


def linear_bwd_sum_bound(model: FnOfLinearProcess, j: int) -> float:
    # X_k - E(X_k | F_j) has the law of X_{k-j} - E(X_{k-j} | F_0)
    return float(sum(linear_process_bwd_bound(model, n) for n in range(0, j)))


# ---------------------------------------------------------------------------
# profiles


@dataclass
class DependenceProfile:
    """fwd[j-1] bounds or estimates ||E(S_j|F_0)||_inf; bwd[j-1] likewise for
    ||S_j - E(S_j|F_j)||_inf, for j = 1..J."""

    fwd: np.ndarray
    fwd_mode: list[str]
    fwd_se: np.ndarray
    bwd: np.ndarray
    bwd_mode: list[str]
    bwd_se: np.ndarray
    bound_B: float
    mc_fwd: np.ndarray | None = None
    phi: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return int(self.fwd.size)

    def rows(self):
        for j in range(self.J):
            yield (j + 1, self.fwd[j], self.fwd_mode[j], self.fwd_se[j], self.bwd[j], self.bwd_mode[j], self.bwd_se[j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "fwd", "fwd_mode", "fwd_se", "bwd", "bwd_mode", "bwd_se"])
            for r in self.rows():
                w.writerow([r[0], f"{r[1]:.17g}", r[2], f"{r[3]:.17g}", f"{r[4]:.17g}", r[5], f"{r[6]:.17g}"])

    def check_invariants(self, tol: float = 1e-12) -> None:
        """Nonnegativity, coarse caps, and subadditivity of certified entries."""
        j = np.arange(1, self.J + 1)
        if np.any(self.fwd < 0) or np.any(self.bwd < 0):
            raise AssertionError("negative dependence coefficient")
        cap = 2.0 * j * self.bound_B * (1 + tol) + tol
        if np.any(self.fwd > cap) or np.any(self.bwd > cap):
            raise AssertionError("dependence coefficient above the 2 j B cap")
        cert_f = [m != MC for m in self.fwd_mode]
        cert_b = [m != MC for m in self.bwd_mode]
        for a in range(1, self.J + 1):
            for b in range(1, self.J + 1 - a):
                s = a + b
                if cert_f[a - 1] and cert_f[b - 1] and cert_f[s - 1]:
                    if self.fwd[s - 1] > self.fwd[a - 1] + self.fwd[b - 1] + tol * (1 + self.fwd[s - 1]):
                        raise AssertionError(f"fwd subadditivity fails at {a}+{b}")
                if cert_b[a - 1] and cert_b[b - 1] and cert_b[s - 1]:
                    if self.bwd[s - 1] > 2 * self.bwd[a - 1] + self.bwd[b - 1] + tol * (1 + self.bwd[s - 1]):
                        raise AssertionError(f"bwd subadditivity fails at {a}+{b}")


def _fwd_certified(model, j):
    """Exact value or analytic bound for ||E(S_j|F_0)||_inf, or None."""
    if isinstance(model, IIDBounded):
        return 0.0, EXACT
    if isinstance(model, FiniteStateChain):
        return chain_fwd_exact(model, j), EXACT
    if isinstance(model, EmpiricalIndicator):
        if isinstance(model.base, FiniteStateChain):
            return chain_fwd_exact(model.as_finite_chain(), j), EXACT
        if isinstance(model.base, IIDBounded):
            return 0.0, EXACT
        return None
    if isinstance(model, StableMarkov):
        return markov_fwd_sum_bound(model, j), ANALYTIC
    if isinstance(model, FnOfLinearProcess):
        if _scalar_linear(model):
            return linear_fwd_exact(model, j), EXACT
        return linear_fwd_sum_bound(model, j), ANALYTIC
    return None


def _bwd_certified(model, j):
    if model.adapted:
        return 0.0, EXACT
    if isinstance(model, FnOfLinearProcess):
        if _scalar_linear(model):
            return linear_bwd_exact(model, j), EXACT
        return linear_bwd_sum_bound(model, j), ANALYTIC
    return None


def build_profile(
    model: ProcessModel,
    J: int,
    outer_M: int = 256,
    inner_N: int = 4096,
    seed: int = 0,
    with_mc: bool = False,
) -> DependenceProfile:
    """Dependence profile for j = 1..J.

    Certified entries (exact or analytic) are preferred. MC entries are used
    only where nothing certified exists; ``with_mc`` additionally records MC
    forward estimates alongside certified ones.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    fwd, fm, fse, bwd, bm, bse = [], [], [], [], [], []
    mc = np.full(J, np.nan) if with_mc else None
    for j in range(1, J + 1):
        cf = _fwd_certified(model, j)
        if cf is None or (with_mc and cf[1] != EXACT):
            est = estimate_fwd_norm(model, j, outer_M, inner_N, seed)
            if mc is not None:
                mc[j - 1] = est.value
        if cf is None:
            fwd.append(est.value), fm.append(MC), fse.append(est.se)
        else:
            fwd.append(cf[0]), fm.append(cf[1]), fse.append(0.0)
            if mc is not None and cf[1] == EXACT:
                mc[j - 1] = cf[0]
        cb = _bwd_certified(model, j)
        if cb is None:
            est = estimate_bwd_norm(model, j, outer_M, inner_N, seed)
            bwd.append(est.value), bm.append(MC), bse.append(est.se)
        else:
            bwd.append(cb[0]), bm.append(cb[1]), bse.append(0.0)
    return DependenceProfile(
        np.array(fwd), fm, np.array(fse), np.array(bwd), bm, np.array(bse), float(model.bound_B), mc
    )


def delta_sum(profile: DependenceProfile, n: int) -> float:
    """sum_{j=1..n} j^{-3/2} (fwd[j] + bwd[j])."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > profile.J:
        raise ValueError(f"profile covers j <= {profile.J}, need {n}")
    j = np.arange(1, n + 1, dtype=float)
    v = profile.fwd[:n] + profile.bwd[:n]
    if not np.all(np.isfinite(v)):
        raise ValueError("profile has missing entries")
    return float(np.sum(v * j**-1.5))


def dyadic_sums(profile: DependenceProfile, q: int) -> tuple[float, float]:
    """(Delta_q, Delta'_q) = sum_{j<q} 2^{-j/2} V_{2^j} for fwd and bwd."""
    need = 1 << (q - 1) if q >= 1 else 0
    if need > profile.J:
        raise ValueError(f"profile covers j <= {profile.J}, need {need}")
    d = sum(profile.fwd[(1 << j) - 1] * 2.0 ** (-j / 2) for j in range(q))
    dp = sum(profile.bwd[(1 << j) - 1] * 2.0 ** (-j / 2) for j in range(q))
    return float(d), float(dp)


# ---------------------------------------------------------------------------
# mixing coefficients of finite chains


@dataclass(frozen=True)
class MixingValue:
    value: float
    horizon: int
    truncated: bool


def _value_classes(chain: FiniteStateChain) -> np.ndarray:
    """Matrix (S, V) mapping states onto distinct values of X = f(Y)."""
    vals = np.round(chain.centered, 12)
    _, inv = np.unique(vals, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    m = np.zeros((chain.n_states, inv.max() + 1))
    m[np.arange(chain.n_states), inv] = 1.0
    return m


def _atoms(chain):
    return np.flatnonzero(chain.pi > 0)


def phi1_exact(chain: FiniteStateChain, n: int) -> float:
    """phi(F_0, sigma(X_n)) as the max over atoms of a total-variation distance."""
    if n < 0:
        raise ValueError("n must be >= 0")
    cls = _value_classes(chain)
    cond = chain.power(n) @ cls
    marg = chain.pi @ cls
    tv = 0.5 * np.abs(cond - marg).sum(axis=1)
    return float(tv[_atoms(chain)].max())


def _check_enumerable(chain):
    if chain.n_states > MAX_ENUM_STATES:
        raise ValueError(
            f"{chain.n_states} states exceed the exact-enumeration limit of {MAX_ENUM_STATES}; "
            "use Monte-Carlo estimates instead"
        )


def _state_tv(chain, n):
    """max over atoms of TV(P^n(s, .), pi); dominates every pair coefficient at dates >= n."""
    d = 0.5 * np.abs(chain.power(n) - chain.pi[None, :]).sum(axis=1)
    return float(d[_atoms(chain)].max())


def _truncated(chain, n, best):
    # the sup over i > j >= n is attained once it reaches the state-level bound
    return bool(best < _state_tv(chain, n) - 1e-12)


def _pair_tv(chain, cls, i, j):
    """max over atoms of TV between law(X_j, X_i | Y_0) and law(X_j, X_i), i > j."""
    pj = chain.power(j)
    step = chain.power(i - j) @ cls  # (S, V): P(X_i = v | Y_j = a)
    joint_cond = np.einsum("sa,au,av->suv", pj, cls, step)
    joint = np.einsum("a,au,av->uv", chain.pi, cls, step)
    tv = 0.5 * np.abs(joint_cond - joint).sum(axis=(1, 2))
    return float(tv[_atoms(chain)].max())


def phi2_exact(chain: FiniteStateChain, n: int, horizon: int | None = None) -> MixingValue:
    """sup_{i > j >= n} phi(F_0, sigma(X_i, X_j)) with i <= horizon."""
    _check_enumerable(chain)
    horizon = n + 16 if horizon is None else int(horizon)
    if horizon <= n:
        raise ValueError("horizon must exceed n")
    cls = _value_classes(chain)
    best = 0.0
    for i in range(n + 1, horizon + 1):
        for j in range(n, i):
            best = max(best, _pair_tv(chain, cls, i, j))
    return MixingValue(best, horizon, _truncated(chain, n, best))


def _threshold_probs(chain, thresholds):
    """Indicator matrix (S, T) of Y <= t for each threshold t."""
    y = chain.values[:, 0]
    return (y[:, None] <= np.asarray(thresholds)[None, :]).astype(float)


def phi_tilde(chain: FiniteStateChain, n: int, k: int = 2, horizon: int | None = None) -> MixingValue:
    """max over l <= k of sup over threshold vectors and dates of the b-coefficient."""
    if not chain.real_valued:
        raise ValueError("threshold coefficients need a real-valued chain")
    if k not in (1, 2):
        raise ValueError("only k = 1, 2 are implemented")
    _check_enumerable(chain)
    horizon = n + 16 if horizon is None else int(horizon)
    if horizon < n:
        raise ValueError("horizon must be >= n")
    ts = np.unique(chain.values[:, 0])
    ind = _threshold_probs(chain, ts)  # thresholds at the distinct values suffice
    atoms = _atoms(chain)
    best = 0.0
    for i in range(n, horizon + 1):
        d = np.abs(chain.power(i) @ ind - chain.pi @ ind)
        best = max(best, float(d[atoms].max()))
    if k == 2:
        for i in range(n + 1, horizon + 1):
            for j in range(n, i):
                pj = chain.power(j)
                step = chain.power(i - j) @ ind  # (S, T2)
                cond = np.einsum("sa,at,au->stu", pj, ind, step)
                marg = np.einsum("a,at,au->tu", chain.pi, ind, step)
                best = max(best, float(np.abs(cond - marg)[atoms].max()))
    return MixingValue(best, horizon, _truncated(chain, n, best))


def phi_tilde2(chain: FiniteStateChain, n: int, horizon: int | None = None) -> MixingValue:
    return phi_tilde(chain, n, 2, horizon)


def phi1_series(chain: FiniteStateChain, tol: float = 1e-14, max_terms: int = 100000) -> tuple[float, float]:
    """sum_{j>=1} j^{-1/2} phi_1(j), returned with a bound on the neglected tail.

    phi_1 is submultiplicative-dominated by the second eigenvalue; the tail is
    bounded by a geometric series once the ratio phi_1(j+1)/phi_1(j) settles.
    """
    total = 0.0
    prev = None
    for j in range(1, max_terms + 1):
        v = phi1_exact(chain, j)
        total += v / math.sqrt(j)
        if v <= tol:
            return total, 0.0
        if prev is not None and prev > 0:
            r = v / prev
            if r < 1 and v * r / (1 - r) / math.sqrt(j + 1) < tol:
                return total, v * r / (1 - r) / math.sqrt(j + 1)
        prev = v
    raise ValueError("phi_1 series did not converge within max_terms")


# ---------------------------------------------------------------------------
# MDP condition checks


@dataclass
class ConditionReport:
    """Numerical evidence (not proof) for the MDP conditions."""

    n_grid: list[int]
    quantities: dict[str, list[float]]
    modes: dict[str, str]
    trends: dict[str, float]
    vanishing: dict[str, bool]
    series: dict[str, list[float]]
    series_converging: dict[str, bool]
    note: str = "numerical evidence only; not a proof of the conditions"


def _chain_second_moments(chain: FiniteStateChain, n_max: int):
    """E(S_n S_n^T | Y_0 = s) for n = 0..n_max, shape (n_max+1, S, m, m)."""
    f = chain.centered
    P = chain.P
    S, m = f.shape
    out = np.zeros((n_max + 1, S, m, m))
    g = np.zeros((S, m))  # E(S_{k} | Y_0) for the current k
    ff = np.einsum("si,sj->sij", f, f)
    for n in range(1, n_max + 1):
        inner = ff + np.einsum("si,sj->sij", f, g) + np.einsum("si,sj->sij", g, f) + out[n - 1]
        out[n] = np.einsum("sy,yij->sij", P, inner)
        g = P @ (f + g)
    return out


def check_mdp_conditions(
    model: ProcessModel,
    Q_hat,
    n_grid,
    tolerances: dict | None = None,
    seed: int = 0,
    outer_M: int = 64,
    inner_N: int = 2048,
) -> ConditionReport:
    """Evaluate the conditional-covariance and summability conditions on ``n_grid``.

    Quantities:
      cond_cov   max_{k,l} ||(1/n) E(<S_n,e_k><S_n,e_l> | F_0) - <Q e_k, e_l>||_inf
      cond_trace ||(1/n) E(||S_n||^2 | F_0) - Tr Q||_inf
      shift_cov  max_{k,l} ||E(X_n^k X_{n+1}^l | F_0) - E(X_0^k X_1^l)||_inf
      shift_ip   ||E(<X_n, X_n> | F_0) - E||X_0||^2||_inf
    and the partial sums of the fwd/bwd series at each n.
    """
    tol = {"vanish": 0.5, "cauchy": 1e-2}
    tol.update(tolerances or {})
    q = np.asarray(getattr(Q_hat, "matrix", Q_hat), dtype=float)
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 1:
        raise ValueError("n_grid must contain integers >= 1")
    quant = {"cond_cov": [], "cond_trace": [], "shift_cov": [], "shift_ip": []}
    chain = None
    if isinstance(model, FiniteStateChain):
        chain = model
    elif isinstance(model, EmpiricalIndicator) and isinstance(model.base, FiniteStateChain):
        chain = model.as_finite_chain()
    if chain is not None:
        mom = _chain_second_moments(chain, n_grid[-1])
        atoms = _atoms(chain)
        f = chain.centered
        stat01 = (f * chain.pi[:, None]).T @ (chain.P @ f)
        stat00 = (f * chain.pi[:, None]).T @ f
        for n in n_grid:
            c = mom[n][atoms] / n
            quant["cond_cov"].append(float(np.abs(c - q).max()))
            quant["cond_trace"].append(float(np.abs(np.trace(c, axis1=1, axis2=2) - np.trace(q)).max()))
            pn = chain.power(n)[atoms]
            m01 = np.einsum("sa,ai,aj->sij", pn, f, chain.P @ f)
            quant["shift_cov"].append(float(np.abs(m01 - stat01).max()))
            m00 = pn @ np.sum(f * f, axis=1)
            quant["shift_ip"].append(float(np.abs(m00 - np.trace(stat00)).max()))
        modes = dict.fromkeys(quant, EXACT)
    else:
        x, _ = model.advance(model.stationary_state(derived_rng(seed, "mdp-stat"), 1 << 14), 2, derived_rng(seed, "mdp-stat", 1))
        stat01 = np.einsum("bi,bj->ij", x[:, 0], x[:, 1]) / x.shape[0]
        stat00 = float(np.mean(np.sum(x[:, 0] ** 2, axis=1)))
        for n in n_grid:
            vals = {k: 0.0 for k in quant}
            for w in range(outer_M):
                rng = derived_rng(seed, "mdp", n, w)
                snap = model.snapshot(model.stationary_state(rng, 1))
                xs, _ = model.advance(snap.repeat(inner_N), n + 1, rng)
                s = xs[:, :n].sum(axis=1)
                c = np.einsum("bi,bj->ij", s, s) / inner_N / n
                vals["cond_cov"] = max(vals["cond_cov"], float(np.abs(c - q).max()))
                vals["cond_trace"] = max(vals["cond_trace"], abs(float(np.trace(c) - np.trace(q))))
                m01 = np.einsum("bi,bj->ij", xs[:, n - 1], xs[:, n]) / inner_N
                vals["shift_cov"] = max(vals["shift_cov"], float(np.abs(m01 - stat01).max()))
                m00 = float(np.mean(np.sum(xs[:, n - 1] ** 2, axis=1)))
                vals["shift_ip"] = max(vals["shift_ip"], abs(m00 - stat00))
            for k in quant:
                quant[k].append(vals[k])
        modes = dict.fromkeys(quant, MC)
    trends, vanishing = {}, {}
    ln = np.log(np.asarray(n_grid, dtype=float))
    for k, v in quant.items():
        v = np.asarray(v)
        pos = v > 0
        trends[k] = float(np.polyfit(ln[pos], np.log(v[pos]), 1)[0]) if pos.sum() >= 2 else float("-inf")
        vanishing[k] = bool(v[-1] <= tol["vanish"] * max(v[0], 1e-300) or v[-1] < 1e-10)
    profile = build_profile(model, n_grid[-1], outer_M, min(inner_N, 1024), seed)
    jj = np.arange(1, n_grid[-1] + 1, dtype=float)
    series = {
        "fwd": [float(np.sum(profile.fwd[:n] * jj[:n] ** -1.5)) for n in n_grid],
        "bwd": [float(np.sum(profile.bwd[:n] * jj[:n] ** -1.5)) for n in n_grid],
    }
    conv = {}
    for k, s in series.items():
        inc = abs(s[-1] - s[-2]) if len(s) >= 2 else 0.0
        conv[k] = bool(inc <= tol["cauchy"] * max(1.0, abs(s[-1])))
    return ConditionReport(n_grid, quant, modes, trends, vanishing, series, conv)


def mixing_table(chain: FiniteStateChain, n_values, horizon_pad: int = 16) -> list[dict]:
    """phi_1, phi_2 and phi~_2 for each n (the last two when enumerable)."""
    out = []
    for n in n_values:
        row = {"n": int(n), "phi1": phi1_exact(chain, n)}
        if chain.n_states <= MAX_ENUM_STATES:
            p2 = phi2_exact(chain, n, n + horizon_pad)
            row["phi2"], row["phi2_truncated"] = p2.value, p2.truncated
            if chain.real_valued:
                t2 = phi_tilde2(chain, n, n + horizon_pad)
                row["phi_tilde2"], row["phi_tilde2_truncated"] = t2.value, t2.truncated
        out.append(row)
    return out

