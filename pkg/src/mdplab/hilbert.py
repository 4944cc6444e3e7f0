"""Finite-truncation Hilbert space: vectors, trace-class operators and
piecewise-linear paths in C_H([0, 1]).

Elements of H are represented by their first ``dim`` coordinates against a
fixed orthonormal basis, so everything reduces to real arrays of length m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HVec:
    """Element of the truncated space, stored as basis coordinates."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = _frozen(np.atleast_1d(self.coeffs))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("HVec needs a non-empty 1-d coordinate array")
        if not np.all(np.isfinite(c)):
            raise ValueError("HVec coordinates must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.size

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    def __add__(self, other: "HVec") -> "HVec":
        _check_dims(self, other)
        return HVec(self.coeffs + other.coeffs)

    def __sub__(self, other: "HVec") -> "HVec":
        _check_dims(self, other)
        return HVec(self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> "HVec":
        return HVec(float(c) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "HVec":
        return HVec(-self.coeffs)

    @classmethod
    def zeros(cls, dim: int) -> "HVec":
        return cls(np.zeros(dim))

    @classmethod
    def basis(cls, dim: int, k: int) -> "HVec":
        e = np.zeros(dim)
        e[k] = 1.0
        return cls(e)


def _check_dims(x: HVec, y: HVec) -> None:
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")


def inner(x: HVec, y: HVec) -> float:
    _check_dims(x, y)
    return float(np.dot(x.coeffs, y.coeffs))


def project(x: HVec, m: int) -> HVec:
    """Keep the first ``m`` coordinates (the projection P^m)."""
    if not 1 <= m <= x.dim:
        raise ValueError(f"projection order {m} outside [1, {x.dim}]")
    return HVec(x.coeffs[:m])


@dataclass(frozen=True)
class TraceClassOperator:
    """Symmetric positive semidefinite operator on the truncated space.

    ``sym_tol`` defaults to ``1e-10 * max|M|``. Eigenvalues in
    ``[-sym_tol, 0)`` are treated as zero by :mod:`mdplab.rate`.
    """

    matrix: np.ndarray
    sym_tol: float | None = None

    def __post_init__(self):
        m = _frozen(np.atleast_2d(self.matrix))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator matrix must be square")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator matrix must be finite")
        tol = self.sym_tol
        if tol is None:
            tol = 1e-10 * float(np.max(np.abs(m))) if m.size else 0.0
        if tol < 0:
            raise ValueError("sym_tol must be nonnegative")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "sym_tol", float(tol))
        if np.max(np.abs(m - m.T)) > tol:
            raise ValueError("operator is not symmetric within sym_tol")
        lo = float(np.linalg.eigvalsh(m).min())
        if lo < -tol:
            raise ValueError(f"operator is not positive semidefinite (min eigenvalue {lo:.3e})")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def apply(self, x: HVec) -> HVec:
        if x.dim != self.dim:
            raise ValueError(f"dimension mismatch: {x.dim} vs {self.dim}")
        return HVec(self.matrix @ x.coeffs)

    def quad(self, y: HVec) -> float:
        """<y, Q y>."""
        return inner(y, self.apply(y))

    @classmethod
    def from_estimate(cls, matrix: np.ndarray, sym_tol: float | None = None):
        """Symmetrize and clamp a noisy estimate onto the PSD cone.

        Returns the operator and the magnitude of the most negative
        eigenvalue that was clamped away (0 when nothing was clamped).
        """
        m = np.asarray(matrix, dtype=float)
        m = 0.5 * (m + m.T)
        w, v = np.linalg.eigh(m)
        clamped = float(max(0.0, -w.min())) if w.size else 0.0
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.T
        m = 0.5 * (m + m.T)
        return cls(m, sym_tol=sym_tol), clamped


@dataclass(frozen=True)
class PathCH:
    """Continuous piecewise-linear map [0, 1] -> H given by knots and values."""

    knots: np.ndarray
    values: np.ndarray
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = _frozen(np.asarray(self.knots, dtype=float).ravel())
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        v = _frozen(v)
        if k.size < 2:
            raise ValueError("a path needs at least two knots")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise ValueError("knots must start at 0 and end at 1")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        if v.shape[0] != k.size:
            raise ValueError("need exactly one value per knot")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_slopes", _frozen(np.diff(v, axis=0) / np.diff(k)[:, None]))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def slopes(self) -> np.ndarray:
        """Derivative on each segment, shape (K, dim)."""
        return self._slopes

    def starts_at_zero(self) -> bool:
        return bool(np.all(self.values[0] == 0.0))

    def sup_norm(self) -> float:
        # ||.|| is convex along each linear segment, so the sup sits at a knot
        return float(np.sqrt(np.max(np.sum(self.values**2, axis=1))))

    @classmethod
    def from_increments(cls, increments: np.ndarray, scale: float = 1.0) -> "PathCH":
        """Polygonal path through ``scale * S_k`` at ``t = k/n``.

        With ``scale = 1/sqrt(n)`` this is the normalized partial-sum process
        Z_n; with ``scale = 1/beta(n)`` it is the LIL process.
        """
        x = np.asarray(increments, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        if n < 1:
            raise ValueError("need at least one increment")
        s = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)]) * scale
        return cls(np.arange(n + 1) / n, s)


def path_eval(p: PathCH, t) -> HVec:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return HVec(path_eval_many(p, np.array([t]))[0])


def path_eval_many(p: PathCH, ts: np.ndarray) -> np.ndarray:
    """Vectorized evaluation; returns an array of shape (len(ts), dim)."""
    ts = np.asarray(ts, dtype=float)
    if np.any((ts < 0) | (ts > 1)):
        raise ValueError("evaluation times must lie in [0, 1]")
    k = np.searchsorted(p.knots, ts, side="right") - 1
    k = np.clip(k, 0, p.knots.size - 2)
    out = p.values[k] + (ts - p.knots[k])[:, None] * p.slopes[k]
    # exact at knots, no rounding from the slope form
    hit = ts == p.knots[k]
    out[hit] = p.values[k[hit]]
    end = ts == 1.0
    out[end] = p.values[-1]
    return out
