"""Closed-form tail, moment and subadditivity bounds.

All constants are evaluated from their radical forms at import time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT_E2 = 2.0 * math.sqrt(math.e)
D = (40.0 * math.sqrt(2.0) + 27.0) / 7.0
D_PRIME = (24.0 * math.sqrt(2.0) + 12.0) / 7.0
C = max(D, D_PRIME)


def constants() -> tuple[float, float, float]:
    """(D, D', C) with C = max(D, D')."""
    return D, D_PRIME, C


def _tail(n: int, x, scale: float):
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    return SQRT_E2 * np.exp(-(x * x) / (4.0 * n * scale * scale))


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def hoeffding_tail_bound(n: int, x, B: float, delta: float):
    """2 sqrt(e) exp(-x^2 / (4 n (B + C delta)^2)) for P(max_{i<=n} ||S_i|| >= x)."""
    if not B > 0:
        raise ValueError("B must be positive")
    if not delta >= 0 or not math.isfinite(delta):
        raise ValueError("delta must be finite and nonnegative")
    return _scalar_or_array(_tail(n, x, B + C * delta))


def phi_mixing_tail_bound(n: int, x, B: float, phi1_series_value: float):
    """2 sqrt(e) exp(-x^2 / (4 n B^2 (1 + 6 C s)^2)), s = sum_j j^{-1/2} phi_1(j)."""
    if not B > 0:
        raise ValueError("B must be positive")
    s = float(phi1_series_value)
    if not math.isfinite(s) or s < 0:
        raise ValueError("phi_1 series value must be finite and nonnegative")
    # same core as the Hoeffding bound, so s = 0 reproduces it bit for bit
    return _scalar_or_array(_tail(n, x, B * (1.0 + 6.0 * C * s)))


def rio_exponent(n: int, x: float, B: float) -> float:
    """A = x^2 / (4 n B^2) from the moment-to-tail conversion."""
    return x * x / (4.0 * n * B * B)


def _cp(p: float) -> float:
    return 2.0 ** (p + 1) * math.gamma(p + 1)


def mart_moment_bound(n: int, p: float, Bd: float) -> float:
    """2^{p+1} Gamma(p+1) n^p Bd^{2p} for E max_{i<=n} ||Z_1+...+Z_i||^{2p}."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if n < 1 or not Bd > 0:
        raise ValueError("need n >= 1 and Bd > 0")
    return _cp(p) * float(n) ** p * Bd ** (2 * p)


def dyadic_q(n: int) -> int:
    """Unique q with 2^{q-1} <= n < 2^q."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(n).bit_length()


def _check_q(n, q):
    if q is not None and q != dyadic_q(n):
        raise ValueError(f"q={q} is inconsistent with n={n}; expected {dyadic_q(n)}")


def adapted_max_moment_bound(n: int, p: float, martpart_norm: float, Delta_q: float, q: int | None = None) -> float:
    """C_p^{1/2p} sqrt(n) (||Z_1 - E(Z_1|F_0)||_inf + (5/sqrt 2) Delta_q)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_q(n, q)
    return _cp(p) ** (1.0 / (2 * p)) * math.sqrt(n) * (martpart_norm + 5.0 / math.sqrt(2.0) * Delta_q)


def nonadapted_max_moment_bound(n: int, p: float, cond_norm: float, Delta_prime_q: float, q: int | None = None) -> float:
    """C_p^{1/2p} sqrt(n) (||E(Z_0|F_0)||_inf + (2/sqrt 2) Delta'_q)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_q(n, q)
    return _cp(p) ** (1.0 / (2 * p)) * math.sqrt(n) * (cond_norm + 2.0 / math.sqrt(2.0) * Delta_prime_q)


def dyadic_cond_second_moment_bound(Delta_q: float, Delta_prime_q: float, q: int, x1_sq_norm: float, n: int | None = None) -> float:
    """n (||E(||X_1||^2 | F_0)||_inf + Delta_q/2 + Delta'_q/2)^2 with n = 2^q."""
    if q < 0:
        raise ValueError("q must be >= 0")
    if n is not None and n != 1 << q:
        raise ValueError(f"n={n} is not 2^q for q={q}")
    return float(1 << q) * (x1_sq_norm + 0.5 * Delta_q + 0.5 * Delta_prime_q) ** 2


def dyadic_bound_from_n(n: int, Delta_q: float, Delta_prime_q: float, x1_sq_norm: float) -> float:
    if n < 1 or n & (n - 1):
        raise ValueError(f"n={n} is not a power of two")
    return dyadic_cond_second_moment_bound(Delta_q, Delta_prime_q, n.bit_length() - 1, x1_sq_norm)


# ---------------------------------------------------------------------------
# subadditive sequences


def is_subadditive(U, C1: float, C2: float, tol: float = 1e-12) -> bool:
    """U_{i+j} <= C1 U_i + C2 U_j for all i, j >= 0 with i + j < len(U)."""
    u = np.asarray(U, dtype=float)
    n = u.size
    for s in range(n):
        i = np.arange(s + 1)
        rhs = C1 * u[i] + C2 * u[s - i]
        if np.any(u[s] > rhs + tol * (1 + abs(u[s]))):
            return False
    return True


def subadditive_dyadic_check(U, C1: float, C2: float, p: float, n: int) -> tuple[float, float, bool]:
    """Both sides of sum_{j<r} U_{2^j}/2^{j(p-1)} <= C/(1-2^-p) sum_{k<n} U_k/k^p.

    ``U`` is indexed from 0 (U[0] = 0) and must reach index 2^{r-1} where
    2^{r-1} <= n < 2^r. C = C1 + C2.
    """
    u = np.asarray(U, dtype=float)
    if p < 1:
        raise ValueError("p must be >= 1")
    if n < 2:
        raise ValueError("n must be >= 2 (the right-hand sum is empty for n = 1)")
    r = int(n).bit_length()
    top = max(n - 1, 1 << (r - 1))
    if u.size <= top:
        raise ValueError(f"need U_0..U_{top}")
    if u[0] != 0.0:
        raise ValueError("U_0 must be 0")
    if np.any(u < 0):
        raise ValueError("U must be nonnegative")
    if not is_subadditive(u[: top + 1], C1, C2):
        raise ValueError("input sequence violates the subadditivity precondition")
    j = np.arange(r)
    lhs = float(np.sum(u[1 << j] / 2.0 ** (j * (p - 1))))
    k = np.arange(1, n, dtype=float)
    rhs = float((C1 + C2) / (1.0 - 2.0**-p) * np.sum(u[1:n] / k**p))
    return lhs, rhs, lhs <= rhs * (1 + 1e-12)


def random_subadditive(rng: np.random.Generator, n: int, C1: float = 1.0, C2: float = 1.0, scale: float = 1.0) -> np.ndarray:
    """U_0 = 0, U_k = min(b_k, min_i C1 U_i + C2 U_{k-i}) with random b_k > 0.

    Requires C1, C2 >= 1 so that the splits i = 0 and i = k are harmless.
    """
    if C1 < 1 or C2 < 1:
        raise ValueError("generator needs C1, C2 >= 1")
    u = np.zeros(n)
    b = rng.exponential(scale, size=n) * np.arange(n) ** rng.uniform(0, 1.5)
    for k in range(1, n):
        i = np.arange(1, k)
        best = float(np.min(C1 * u[i] + C2 * u[k - i])) if k > 1 else np.inf
        u[k] = min(b[k], best)
    return u


@dataclass(frozen=True)
class PolynomialSequence:
    """U_k = c k^a."""

    c: float
    a: float

    def __call__(self, k):
        return self.c * np.asarray(k, dtype=float) ** self.a

    def summable(self, p: float) -> bool:
        return self.c == 0 or self.a - p < -1

    def tail(self, p: float, m: int, J: int) -> float:
        # sum_{j>J} c (jm)^a / j^p <= c m^a int_J^inf x^{a-p} dx
        e = self.a - p
        return abs(self.c) * m**self.a * J ** (e + 1) / (-(e + 1))


@dataclass(frozen=True)
class GeometricSequence:
    """U_k = c r^k, 0 <= r < 1."""

    c: float
    r: float

    def __call__(self, k):
        return self.c * self.r ** np.asarray(k, dtype=float)

    def summable(self, p: float) -> bool:
        return 0.0 <= self.r < 1.0

    def tail(self, p: float, m: int, J: int) -> float:
        q = self.r**m
        return abs(self.c) * q ** (J + 1) / (1.0 - q) / (J + 1) ** p


@dataclass
class KroneckerTable:
    m: list[int]
    value: list[float]
    tail_bound: list[float]
    envelope_decreasing: bool
    notes: list[str] = field(default_factory=list)


def kronecker_tail_check(U, p: float, m_grid, terms: int = 200000) -> KroneckerTable:
    """Tabulate m^{1-p} sum_{j>=1} U_{jm} / j^p over ``m_grid``.

    ``U`` is a :class:`PolynomialSequence` or :class:`GeometricSequence`;
    the series is summed to ``terms`` and the remainder bounded analytically.
    """
    if not isinstance(U, (PolynomialSequence, GeometricSequence)):
        raise ValueError("U must be a polynomial or geometric family with certified summability")
    if not U.summable(p):
        raise ValueError("sum_k U_k / k^p diverges for this family")
    ms = [int(m) for m in m_grid]
    if any(m < 1 for m in ms):
        raise ValueError("m values must be >= 1")
    j = np.arange(1, terms + 1, dtype=float)
    vals, tails = [], []
    for m in ms:
        s = float(np.sum(U(j * m) / j**p))
        t = U.tail(p, m, terms) if U.c else 0.0
        vals.append(m ** (1.0 - p) * s)
        tails.append(m ** (1.0 - p) * t)
    env = np.maximum.accumulate(np.asarray(vals)[::-1])[::-1]  # running sup of the future
    dec = bool(np.all(np.diff(env) <= 1e-15 * (1 + env[:-1])))
    return KroneckerTable(ms, vals, tails, dec)


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    """Tail bound on a grid of x together with optional empirical tails."""

    x: np.ndarray
    bound: np.ndarray
    n: int
    B: float
    delta: float
    kind: str = "hoeffding"
    empirical: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    constants: dict = field(default_factory=lambda: {"D": D, "D_prime": D_PRIME, "C": C})

    @property
    def violated(self) -> np.ndarray:
        if self.ci_low is None:
            return np.zeros(self.x.size, dtype=bool)
        return self.ci_low > self.bound

    def rows(self):
        nan = np.full(self.x.size, np.nan)
        emp = nan if self.empirical is None else self.empirical
        lo = nan if self.ci_low is None else self.ci_low
        hi = nan if self.ci_high is None else self.ci_high
        for i in range(self.x.size):
            yield self.x[i], self.bound[i], emp[i], lo[i], hi[i], bool(self.violated[i])


def bound_report(n: int, x_grid, B: float, delta: float = 0.0, phi_series: float | None = None) -> BoundReport:
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or np.any(np.diff(x) <= 0):
        raise ValueError("x grid must be strictly increasing")
    if phi_series is None:
        b = np.atleast_1d(hoeffding_tail_bound(n, x, B, delta))
        return BoundReport(x, b, n, B, delta)
    b = np.atleast_1d(phi_mixing_tail_bound(n, x, B, phi_series))
    return BoundReport(x, b, n, B, phi_series, kind="phi-mixing")
