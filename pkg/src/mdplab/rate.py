"""Limiting covariance operators and the quadratic rate functions built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mdplab._parallel import chunk_sizes, derived_rng, parallel_map
from mdplab.hilbert import HVec, PathCH, TraceClassOperator
from mdplab.processes import EmpiricalIndicator, FiniteStateChain, IIDBounded, ProcessModel

RANGE_TOL = 1e-8
ZERO_EIG_REL = 1e-12


class InsufficientSamplesError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# covariance estimation


@dataclass
class QEstimate:
    operator: TraceClassOperator
    raw: np.ndarray
    se: np.ndarray
    clamped: float
    reps: int
    path_len: int
    lag_cutoff: int
    rel_se: float
    seed: int
    model: dict = field(default_factory=dict)

    @property
    def matrix(self) -> np.ndarray:
        return self.operator.matrix


def _replicate_q(x: np.ndarray, P: int) -> np.ndarray:
    """Per-replicate Gamma_0 + sum_{p<=P} (Gamma_p + Gamma_p^T), x of shape (b, n, m)."""
    n = x.shape[1]
    g0 = np.einsum("bti,btj->bij", x, x) / n
    q = g0.copy()
    for p in range(1, P + 1):
        gp = np.einsum("bti,btj->bij", x[:, :-p], x[:, p:]) / (n - p)
        q += gp + np.transpose(gp, (0, 2, 1))
    return q


def estimate_Q(
    model: ProcessModel,
    lag_cutoff: int | None = None,
    reps: int = 64,
    path_len: int = 8192,
    seed: int = 0,
    max_rel_se: float = 0.05,
) -> QEstimate:
    """Truncated long-run covariance from ``reps`` independent stationary paths.

    Each replicate yields its own truncated-series estimate; the reported
    matrix is their mean and ``se`` their standard error. The mean is
    symmetrized and clamped onto the PSD cone.
    """
    P = model.default_lag_cutoff(1e-6) if lag_cutoff is None else int(lag_cutoff)
    if P < 0:
        raise ValueError("lag cutoff must be >= 0")
    if path_len <= P + 1:
        raise ValueError("path length must exceed the lag cutoff")
    if reps < 2:
        raise ValueError("need at least two replicates for a standard error")
    per = max(1, (1 << 21) // (path_len * max(1, model.dim)))

    def run(job):
        idx, size = job
        rng = derived_rng(seed, "estimate-Q", idx)
        x, _ = model.advance(model.stationary_state(rng, size), path_len, rng)
        return _replicate_q(x, P)

    parts = parallel_map(run, list(enumerate(chunk_sizes(reps, per))))
    qs = np.concatenate(parts, axis=0)
    mean = qs.mean(axis=0)
    se = qs.std(axis=0, ddof=1) / math.sqrt(reps)
    tr = float(np.trace(mean))
    tr_se = float(np.trace(qs, axis1=1, axis2=2).std(ddof=1) / math.sqrt(reps))
    rel = tr_se / abs(tr) if tr != 0 else float("inf")
    if rel > max_rel_se:
        raise InsufficientSamplesError(
            f"relative standard error {rel:.3g} of tr Q exceeds the cap {max_rel_se}; increase reps or path length"
        )
    op, clamped = TraceClassOperator.from_estimate(mean)
    return QEstimate(op, mean, se, clamped, reps, path_len, P, rel, seed, model.describe())


# ---------------------------------------------------------------------------
# spectra and the quadratic rate


@dataclass(frozen=True)
class SpectralRate:
    eigenvalues: np.ndarray  # decreasing
    eigenvectors: np.ndarray  # columns
    trace: float
    range_tol: float = RANGE_TOL

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])

    def positive(self) -> np.ndarray:
        lam1 = self.top
        return self.eigenvalues > ZERO_EIG_REL * lam1 if lam1 > 0 else np.zeros(self.dim, dtype=bool)

    def vector(self, i: int) -> HVec:
        return HVec(self.eigenvectors[:, i])


def spectral(Q, range_tol: float = RANGE_TOL) -> SpectralRate:
    op = Q if isinstance(Q, TraceClassOperator) else TraceClassOperator(Q)
    m = op.matrix
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    v = v[:, order]
    norm = max(float(np.linalg.norm(m, 2)), 1e-300)
    if np.linalg.norm(m - (v * w) @ v.T, 2) > 1e-8 * norm + op.sym_tol:
        raise RuntimeError("eigendecomposition does not reconstruct the operator")
    return SpectralRate(w, v, float(np.trace(m)), range_tol)


def _coords(x) -> np.ndarray:
    return x.coeffs if isinstance(x, HVec) else np.asarray(x, dtype=float)


def lambda_star(rate: SpectralRate, x) -> float:
    """Legendre transform of y -> <y, Q y>/2, +inf off the range of Q."""
    v = _coords(x)
    if v.shape != (rate.dim,):
        raise ValueError(f"dimension mismatch: {v.shape} vs ({rate.dim},)")
    a = rate.eigenvectors.T @ v
    pos = rate.positive()
    energy = float(v @ v)
    null = float(np.sum(a[~pos] ** 2))
    if null > rate.range_tol * energy:
        return math.inf
    return 0.5 * float(np.sum(a[pos] ** 2 / rate.eigenvalues[pos]))


def lambda_star_many(rate: SpectralRate, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    a = xs @ rate.eigenvectors
    pos = rate.positive()
    energy = np.sum(xs * xs, axis=1)
    null = np.sum(a[:, ~pos] ** 2, axis=1)
    out = 0.5 * np.sum(a[:, pos] ** 2 / rate.eigenvalues[pos], axis=1)
    out[null > rate.range_tol * energy] = math.inf
    return out


def fenchel_gap(rate: SpectralRate, Q: np.ndarray, x, ys: np.ndarray) -> np.ndarray:
    """lambda_star(x) - (<y, x> - <y, Q y>/2) for each row y; nonnegative in theory."""
    v = _coords(x)
    ys = np.atleast_2d(ys)
    vals = ys @ v - 0.5 * np.einsum("bi,ij,bj->b", ys, Q, ys)
    return lambda_star(rate, v) - vals


def functional_rate(rate: SpectralRate, phi: PathCH) -> float:
    """Integral of lambda_star(phi'(t)) dt; exact for polygonal paths."""
    if phi.dim != rate.dim:
        raise ValueError("path dimension does not match the operator")
    if not phi.starts_at_zero():
        return math.inf
    dt = np.diff(phi.knots)
    ls = lambda_star_many(rate, phi.slopes)
    if np.any(np.isinf(ls) & (dt > 0)):
        return math.inf
    return float(np.sum(dt * ls))


def cluster_set_contains(rate: SpectralRate, phi: PathCH, tol: float = 1e-12) -> bool:
    """2 I(phi) <= 1, with a small tolerance so boundary paths count."""
    return bool(2.0 * functional_rate(rate, phi) <= 1.0 + tol)


def halfspace_inf(rate: SpectralRate, Q: np.ndarray, u, r: float) -> float:
    """inf of lambda_star over {x : <u, x> >= r}, which is r^2 / (2 <u, Q u>) for r > 0."""
    u = _coords(u)
    if r <= 0:
        return 0.0
    quad = float(u @ np.asarray(Q) @ u)
    if quad <= ZERO_EIG_REL * max(rate.top, 1e-300) * float(u @ u):
        return math.inf
    return r * r / (2.0 * quad)


def ball_complement_inf(rate: SpectralRate, r: float) -> float:
    """inf of lambda_star over {||x|| >= r} = r^2 / (2 lambda_1)."""
    if r <= 0:
        return 0.0
    if rate.top <= 0:
        return math.inf
    return r * r / (2.0 * rate.top)


# ---------------------------------------------------------------------------
# Cramer-von Mises kernel


@dataclass
class CvmKernel:
    grid: np.ndarray
    weights: np.ndarray
    C: np.ndarray  # raw C(s, t) on the grid
    matrix: np.ndarray  # C(s, t) sqrt(mu_s mu_t), symmetrized and clamped
    lag_cutoff: int | None
    mode: str
    tail_bound: float
    clamped: float
    warnings: list[str] = field(default_factory=list)

    @property
    def G(self) -> int:
        return self.grid.size

    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.matrix))[::-1]

    @property
    def nu(self) -> float:
        return float(max(self.eigenvalues()[0], 0.0))


def _finite_chain_series(chain: FiniteStateChain, grid, K: int) -> tuple[np.ndarray, float]:
    y = chain.values[:, 0]
    ind = (y[:, None] <= grid[None, :]).astype(float)  # (S, G)
    F = chain.pi @ ind
    c = np.minimum.outer(F, F) - np.outer(F, F)
    w = ind * chain.pi[:, None]
    g = ind.copy()
    for _ in range(K):
        g = chain.P @ g  # P(Y_k <= s | Y_0 = a)
        # C[s, t] uses P(Y_0 <= t, Y_k <= s)
        c += 2.0 * ((w.T @ g).T - np.outer(F, F))
    tail = 0.0
    for _ in range(200):
        g = chain.P @ g
        tail += 2.0 * float(np.max(np.abs(g - F[None, :])))
    return c, tail


def cvm_kernel(
    model: ProcessModel,
    grid,
    weights,
    lag_cutoff: int | None = None,
    mode: str = "exact",
    seed: int = 0,
    reps: int = 64,
    path_len: int = 8192,
) -> CvmKernel:
    """Kernel C(s, t) = F(s^t) - F(s)F(t) + 2 sum_k (P(Y_0<=t, Y_k<=s) - F(t)F(s)).

    ``exact`` needs a finite-state chain or an i.i.d. base with analytic CDF;
    with a finite chain and ``lag_cutoff=None`` the series is summed in
    closed form. ``mc`` estimates the same matrix as the long-run covariance
    of the indicator sequence.
    """
    grid = np.asarray(grid, dtype=float)
    weights = np.asarray(weights, dtype=float)
    sw = np.sqrt(weights)
    warnings: list[str] = []
    if mode == "exact":
        if isinstance(model, FiniteStateChain):
            if not model.real_valued:
                raise ValueError("CvM kernel needs a real-valued chain")
            if lag_cutoff is None:
                ch = EmpiricalIndicator(model, grid, weights).as_finite_chain()
                k = ch.exact_Q()
                c = k / np.outer(sw, sw)
                tail = 0.0
            else:
                c, tail = _finite_chain_series(model, grid, int(lag_cutoff))
        elif isinstance(model, IIDBounded):
            F = model.marginal_cdf(grid)
            c = np.minimum.outer(F, F) - np.outer(F, F)
            tail, lag_cutoff = 0.0, 0
        else:
            raise ValueError("exact mode needs a finite-state chain or an i.i.d. base; use mode='mc'")
        c = 0.5 * (c + c.T)
        op, clamped = TraceClassOperator.from_estimate(c * np.outer(sw, sw))
    elif mode == "mc":
        ind = EmpiricalIndicator(model, grid, weights, cdf_seed=seed)
        est = estimate_Q(ind, lag_cutoff, reps, path_len, seed, max_rel_se=0.25)
        op, clamped = est.operator, est.clamped
        c = 0.5 * (est.raw + est.raw.T) / np.outer(sw, sw)
        lag_cutoff = est.lag_cutoff
        tail = math.nan
    else:
        raise ValueError(f"unknown mode {mode!r}")
    top = float(np.linalg.eigvalsh(op.matrix)[-1])
    if top > 0 and clamped > 0.01 * top:
        warnings.append(f"PSD clamping removed {clamped:.3e}, above 1% of the top eigenvalue {top:.3e}")
    return CvmKernel(grid, weights, c, op.matrix, lag_cutoff, mode, tail, clamped, warnings)


def cvm_rate(kernel: CvmKernel, y: float) -> float:
    """I'(y) = y^2 / (2 nu), nu the top kernel eigenvalue."""
    if y < 0:
        raise ValueError("y must be >= 0")
    nu = kernel.nu
    if nu <= 0:
        return 0.0 if y == 0 else math.inf
    return y * y / (2.0 * nu)


# ---------------------------------------------------------------------------
# Kantorovich rate


def _bilinear(kernel: CvmKernel) -> np.ndarray:
    """A[s, t] = C(s, t) mu_s mu_t, the form maximized over sign vectors."""
    sw = np.sqrt(kernel.weights)
    return kernel.matrix * np.outer(sw, sw)


def _check_lebesgue(kernel: CvmKernel):
    g, w = kernel.grid, kernel.weights
    if g[0] < 0 or g[-1] > 1 or not np.allclose(w, w[0]) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("Kantorovich mode needs equal Lebesgue weights on [0, 1]")


def brute_force_sign_max(A: np.ndarray) -> tuple[float, np.ndarray]:
    """max over g in {-1, 1}^G of g^T A g by enumeration (g ~ -g, so g_0 = +1)."""
    G = A.shape[0]
    if G > 24:
        raise ValueError("exhaustive search is limited to G <= 24")
    best, arg = -math.inf, None
    rest = G - 1
    total = 1 << rest
    chunk = 1 << min(rest, 16)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = (codes[:, None] >> np.arange(rest)) & 1
        g = np.ones((codes.size, G))
        g[:, 1:] = 1 - 2 * bits
        vals = np.einsum("bi,ij,bj->b", g, A, g)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, arg = float(vals[k]), g[k].copy()
    return best, arg


def _local_search(A: np.ndarray, g: np.ndarray) -> tuple[float, np.ndarray]:
    g = g.copy()
    diag = np.diag(A)
    while True:
        h = A @ g
        # flipping i changes g^T A g by -4 g_i (h_i - A_ii g_i)
        gain1 = -4.0 * g * (h - diag * g)
        i = int(np.argmax(gain1))
        if gain1[i] > 1e-14 * (1 + abs(g @ h)):
            g[i] = -g[i]
            continue
        # pair flips escape single-flip local optima
        gh = g * (h - diag * g)
        pair = -4.0 * (gh[:, None] + gh[None, :]) + 8.0 * A * np.outer(g, g)
        np.fill_diagonal(pair, -np.inf)
        a, b = np.unravel_index(int(np.argmax(pair)), pair.shape)
        if pair[a, b] > 1e-14 * (1 + abs(g @ h)):
            g[a], g[b] = -g[a], -g[b]
            continue
        return float(g @ A @ g), g


def heuristic_sign_max(A: np.ndarray, starts: int = 32, seed: int = 0) -> tuple[float, np.ndarray]:
    """Multi-start flip local search from g = 1, sign(top eigenvector) and random signs."""
    G = A.shape[0]
    w, v = np.linalg.eigh(0.5 * (A + A.T))
    init = [np.ones(G), np.where(v[:, -1] >= 0, 1.0, -1.0)]
    rng = derived_rng(seed, "kantorovich-starts")
    init += [rng.choice([-1.0, 1.0], size=G) for _ in range(max(0, starts - 2))]
    best, arg = -math.inf, None
    for g0 in init:
        val, g = _local_search(A, g0)
        if val > best:
            best, arg = val, g
    return best, arg


@dataclass(frozen=True)
class SigmaResult:
    sigma_sq: float
    g: np.ndarray
    method: str


def kantorovich_maximizer(kernel: CvmKernel, exhaustive_max: int = 20, starts: int = 32, seed: int = 0) -> SigmaResult:
    _check_lebesgue(kernel)
    A = _bilinear(kernel)
    if kernel.G <= exhaustive_max:
        v, g = brute_force_sign_max(A)
        return SigmaResult(v, g, "exhaustive")
    v, g = heuristic_sign_max(A, starts, seed)
    return SigmaResult(v, g, "local-search")


def kantorovich_sigma_sq(kernel: CvmKernel, **kw) -> float:
    """sigma(Z)^2 = max over sign functions g of E(int g Z)^2 on the grid."""
    return kantorovich_maximizer(kernel, **kw).sigma_sq


def kantorovich_rate(sigma_sq: float, y: float) -> float:
    """J(y) = y^2 / (2 sigma(Z)^2)."""
    if y < 0:
        raise ValueError("y must be >= 0")
    if sigma_sq <= 0:
        return 0.0 if y == 0 else math.inf
    return y * y / (2.0 * sigma_sq)


# ---------------------------------------------------------------------------
# records


def operator_record(op, rate: SpectralRate | None = None, provenance: dict | None = None) -> dict:
    m = np.asarray(getattr(op, "matrix", op), dtype=float)
    rec = {
        "dim": int(m.shape[0]),
        "matrix": m.tolist(),
        "sym_tol": float(getattr(op, "sym_tol", 0.0) or 0.0),
        "range_tol": RANGE_TOL,
        "zero_eig_rel": ZERO_EIG_REL,
        "provenance": provenance or {},
    }
    if rate is not None:
        rec["eigenvalues"] = rate.eigenvalues.tolist()
        rec["eigenvectors"] = rate.eigenvectors.T.tolist()
    return rec


def operator_from_record(rec: dict) -> TraceClassOperator:
    m = np.asarray(rec["matrix"], dtype=float)
    if m.shape != (rec["dim"], rec["dim"]):
        raise ValueError("record dimension does not match its matrix")
    return TraceClassOperator(m, sym_tol=rec.get("sym_tol") or None)
