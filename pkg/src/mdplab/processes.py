"""Generators for bounded stationary H-valued sequences.

Every model is a stateless description; randomness and time live in an
explicit :class:`State` plus a numpy Generator. A state holds a batch of
independent pasts (leading axis), which is what lets the dependence module
freeze the past and resample many futures in one vectorized call.

Models emit ``X`` arrays of shape ``(batch, n, dim)``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mdplab._parallel import chunk_sizes, derived_rng, parallel_map
from mdplab.hilbert import PathCH

KINDS = ("IIDBounded", "FnOfLinearProcess", "StableMarkov", "FiniteStateChain", "EmpiricalIndicator")


class StationarityError(RuntimeError):
    """Raised when a model cannot certify that its initial state is stationary."""


# ---------------------------------------------------------------------------
# innovations and moduli of continuity


@dataclass(frozen=True)
class BoxInnovation:
    """I.i.d. innovation with independent coordinates on ``[low, high]``.

    ``kind`` is ``"uniform"`` or ``"rademacher"`` (two-point on the
    endpoints).
    """

    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("uniform", "rademacher"):
            raise ValueError(f"unknown innovation kind {self.kind!r}")
        if not self.high > self.low:
            raise ValueError("innovation support must have high > low")
        if self.dim < 1:
            raise ValueError("innovation dim must be >= 1")

    @property
    def mean(self) -> np.ndarray:
        return np.full(self.dim, 0.5 * (self.low + self.high))

    @property
    def half_width(self) -> float:
        return 0.5 * (self.high - self.low)

    @property
    def radius(self) -> float:
        """ess sup ||eps - E eps||, the Chebyshev radius of the support box."""
        return self.half_width * math.sqrt(self.dim)

    @property
    def diameter(self) -> float:
        """delta(eps_0) = 2 inf_x ||| eps_0 - x |||_inf."""
        return 2.0 * self.radius

    @property
    def norm_bound(self) -> float:
        return max(abs(self.low), abs(self.high)) * math.sqrt(self.dim)

    @property
    def variance(self) -> float:
        """Per-coordinate variance."""
        h = self.half_width
        return h * h / 3.0 if self.kind == "uniform" else h * h

    @property
    def symmetric(self) -> bool:
        return self.low == -self.high

    def cdf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            return np.clip((t - self.low) / (self.high - self.low), 0.0, 1.0)
        return 0.5 * (t >= self.low) + 0.5 * (t >= self.high)

    def sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        size = (*shape, self.dim)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=size)
        bits = rng.integers(0, 2, size=size, dtype=np.int8)
        return np.where(bits == 1, self.high, self.low)


@dataclass(frozen=True)
class Lipschitz:
    """Modulus w(h) = constant * h."""

    constant: float

    def __call__(self, h: float) -> float:
        return self.constant * float(h)


@dataclass(frozen=True)
class LogModulus:
    """Modulus w(h) = D |log h|^(-gamma) for h < h_max, capped at ``cap``.

    ``cap`` must dominate sup ||f(x) - f(y)|| (e.g. twice a sup bound on f),
    which keeps the modulus valid for large h where the log form breaks down.
    """

    D: float
    gamma: float
    cap: float
    h_max: float = math.exp(-1.0)

    def __call__(self, h: float) -> float:
        h = float(h)
        if h <= 0.0:
            return 0.0
        if h >= self.h_max:
            return self.cap
        return min(self.cap, self.D * abs(math.log(h)) ** (-self.gamma))


_OBSERVABLES: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float, bool]] = {
    # name -> (map, Lipschitz constant, odd with f(0) = 0)
    "identity": (lambda u: u, 1.0, True),
    "tanh": (np.tanh, 1.0, True),
}


def _observable(name):
    if callable(name):
        return name
    try:
        return _OBSERVABLES[name][0]
    except KeyError:
        raise ValueError(f"unknown observable {name!r}") from None


# ---------------------------------------------------------------------------
# state


@dataclass(eq=False)
class State:
    """Batch of process states at a common time origin.

    ``data`` maps names to arrays whose leading axis is the batch.
    """

    kind: str
    data: dict[str, np.ndarray] = field(default_factory=dict)
    batch: int = 1
    time: int = 0

    def take(self, i: int) -> "State":
        return State(self.kind, {k: v[i : i + 1].copy() for k, v in self.data.items()}, 1, self.time)

    def repeat(self, n: int) -> "State":
        """Broadcast a single-member state to ``n`` identical members."""
        if self.batch != 1:
            raise ValueError("repeat() needs a single-member state")
        return State(self.kind, {k: np.repeat(v, n, axis=0) for k, v in self.data.items()}, n, self.time)

    def copy(self) -> "State":
        return State(self.kind, {k: v.copy() for k, v in self.data.items()}, self.batch, self.time)


class ProcessModel(ABC):
    kind: str = ""
    dim: int = 1
    bound_B: float = 0.0
    adapted: bool = True

    @abstractmethod
    def stationary_state(self, rng: np.random.Generator, batch: int = 1) -> State:
        """Draw ``batch`` independent pasts from the stationary law."""

    @abstractmethod
    def advance(self, state: State, n: int, rng: np.random.Generator) -> tuple[np.ndarray, State]:
        """Emit X_{t+1..t+n} for every batch member and return the new state."""

    @abstractmethod
    def describe(self) -> dict:
        """Plain-data parameters for provenance records."""

    def default_lag_cutoff(self, rel: float = 1e-6) -> int:
        return 0

    def snapshot(self, state: State) -> State:
        """F_t-measurable copy of ``state``: anything about the future is dropped."""
        self._check_kind(state)
        return state.copy()

    def restore(self, snap: State) -> State:
        self._check_kind(snap)
        return snap.copy()

    def _check_kind(self, state: State) -> None:
        if state.kind != self.kind:
            raise ValueError(f"state of kind {state.kind!r} cannot be used with a {self.kind} model")


# ---------------------------------------------------------------------------
# models


class IIDBounded(ProcessModel):
    """X_i = eps_i - E eps_i with bounded i.i.d. innovations."""

    kind = "IIDBounded"

    def __init__(self, innovation: BoxInnovation):
        self.innovation = innovation
        self.dim = innovation.dim
        self.bound_B = innovation.radius
        self.adapted = True

    def stationary_state(self, rng, batch=1):
        return State(self.kind, {}, batch, 0)

    def advance(self, state, n, rng):
        self._check_kind(state)
        x = self.innovation.sample(rng, (state.batch, n)) - self.innovation.mean
        return x, State(self.kind, {}, state.batch, state.time + n)

    def advance_raw(self, state, n, rng):
        y = self.innovation.sample(rng, (state.batch, n))[..., 0]
        return y, State(self.kind, {}, state.batch, state.time + n)

    def marginal_cdf(self, t):
        if self.dim != 1:
            raise ValueError("marginal_cdf needs a real-valued model")
        return self.innovation.cdf(t)

    @property
    def is_rademacher(self) -> bool:
        inn = self.innovation
        return inn.kind == "rademacher" and inn.dim == 1 and inn.symmetric

    def describe(self):
        inn = self.innovation
        return {"kind": self.kind, "innovation": {"kind": inn.kind, "low": inn.low, "high": inn.high, "dim": inn.dim}}


class FiniteStateChain(ProcessModel):
    """Stationary finite-state Markov chain observed through ``values``.

    ``values`` has shape (S,) for a real-valued chain or (S, m). The emitted
    sequence is X_i = values[Y_i] - E values[Y_0].
    """

    kind = "FiniteStateChain"

    def __init__(self, transition, values):
        p = np.asarray(transition, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition matrix rows must be probability vectors")
        v = np.asarray(values, dtype=float)
        self.real_valued = v.ndim == 1
        if self.real_valued:
            v = v[:, None]
        if v.shape[0] != p.shape[0]:
            raise ValueError("need one value per state")
        self.P = p
        self.values = v
        self.n_states = p.shape[0]
        self.dim = v.shape[1]
        self.pi = stationary_distribution(p)
        self.centered = v - self.pi @ v
        self.bound_B = float(np.sqrt(np.max(np.sum(self.centered**2, axis=1))))
        self._cum = np.cumsum(p, axis=1)
        self.adapted = True

    # exact quantities -----------------------------------------------------

    def power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.P, int(k))

    def cond_mean(self, k: int) -> np.ndarray:
        """E(X_k | Y_0 = s) for every state s, shape (S, dim)."""
        return self.power(k) @ self.centered

    def cond_partial_sum_mean(self, j: int) -> np.ndarray:
        """E(S_j | Y_0 = s), shape (S, dim)."""
        out = np.zeros_like(self.centered)
        g = self.centered
        for _ in range(int(j)):
            g = self.P @ g
            out = out + g
        return out

    def autocov(self, p: int) -> np.ndarray:
        """Gamma_p[k, l] = E(<X_0, e_k> <X_p, e_l>)."""
        return (self.centered * self.pi[:, None]).T @ self.cond_mean(p)

    def exact_Q(self) -> np.ndarray:
        """Long-run covariance via the fundamental matrix (I - P + 1 pi)^-1."""
        s = self.n_states
        z = np.linalg.inv(np.eye(s) - self.P + np.outer(np.ones(s), self.pi))
        h = (z - np.eye(s)) @ self.centered  # sum_{p>=1} P^p f
        w = self.centered * self.pi[:, None]
        g1 = w.T @ h
        q = w.T @ self.centered + g1 + g1.T
        return 0.5 * (q + q.T)

    def marginal_cdf(self, t):
        if not self.real_valued:
            raise ValueError("marginal_cdf needs a real-valued chain")
        t = np.asarray(t, dtype=float)
        return (self.pi[None, :] * (self.values[:, 0][None, :] <= t.reshape(-1, 1))).sum(axis=1).reshape(t.shape)

    # simulation ----------------------------------------------------------

    def _step(self, y, rng):
        u = rng.random(y.shape[0])
        nxt = (u[:, None] >= self._cum[y]).sum(axis=1)
        return np.minimum(nxt, self.n_states - 1)

    def stationary_state(self, rng, batch=1):
        y = rng.choice(self.n_states, size=batch, p=self.pi)
        return State(self.kind, {"y": y.astype(np.int64)}, batch, 0)

    def state_from(self, states) -> State:
        y = np.asarray(states, dtype=np.int64).ravel()
        return State(self.kind, {"y": y}, y.size, 0)

    def _path(self, state, n, rng):
        self._check_kind(state)
        y = state.data["y"]
        ys = np.empty((state.batch, n), dtype=np.int64)
        for k in range(n):
            y = self._step(y, rng)
            ys[:, k] = y
        return ys, State(self.kind, {"y": y}, state.batch, state.time + n)

    def advance(self, state, n, rng):
        ys, new = self._path(state, n, rng)
        return self.centered[ys], new

    def advance_raw(self, state, n, rng):
        if not self.real_valued:
            raise ValueError("advance_raw needs a real-valued chain")
        ys, new = self._path(state, n, rng)
        return self.values[ys, 0], new

    def default_lag_cutoff(self, rel=1e-6):
        ev = np.sort(np.abs(np.linalg.eigvals(self.P)))[::-1]
        second = ev[1] if ev.size > 1 else 0.0
        if second <= 0.0:
            return 1
        if second >= 1.0:
            raise ValueError("chain is not mixing (second eigenvalue modulus 1)")
        return int(math.ceil(math.log(rel) / math.log(second)))

    def describe(self):
        v = self.values[:, 0] if self.real_valued else self.values
        return {"kind": self.kind, "transition": self.P.tolist(), "values": v.tolist()}


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    s = P.shape[0]
    a = np.vstack([P.T - np.eye(s), np.ones((1, s))])
    b = np.zeros(s + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def two_state_chain(a: float, b: float, values=(-1.0, 1.0)) -> FiniteStateChain:
    """Chain with transition [[1-a, a], [b, 1-b]]."""
    return FiniteStateChain([[1 - a, a], [b, 1 - b]], values)


class StableMarkov(ProcessModel):
    """Y_n = F(Y_{n-1}, xi_n) with a contracting F, observed as f(Y_n) - E f(Y_0).

    ``family`` is ``"affine"`` (F(y, xi) = A y + xi) or ``"tanh"``
    (F(y, xi) = A tanh(y) + xi, componentwise tanh). Both contract with
    rho = ||A||_op and C = 1.
    """

    kind = "StableMarkov"

    def __init__(
        self,
        A,
        innovation: BoxInnovation,
        family: str = "affine",
        observable="identity",
        lip_f: float | None = None,
        burn_in: int | None = None,
        center=None,
        center_seed: int = 0,
    ):
        a = np.atleast_2d(np.asarray(A, dtype=float))
        if a.shape != (innovation.dim, innovation.dim):
            raise ValueError("A must be dim x dim matching the innovation")
        if family not in ("affine", "tanh"):
            raise ValueError(f"unknown map family {family!r}")
        rho = float(np.linalg.norm(a, 2))
        if not rho < 1.0:
            raise ValueError(f"map is not contracting: ||A||_op = {rho}")
        self.A = a
        self.innovation = innovation
        self.family = family
        self.dim = innovation.dim
        self.contraction_rho = rho
        self.C = 1.0
        self.observable_name = observable if isinstance(observable, str) else "custom"
        self.f = _observable(observable)
        if lip_f is None:
            if not isinstance(observable, str):
                raise ValueError("a custom observable needs an explicit lip_f")
            lip_f = _OBSERVABLES[observable][1]
        self.lip_f = float(lip_f)
        self.state_bound = innovation.norm_bound / (1.0 - rho) if rho > 0 else innovation.norm_bound
        needed = self.recommended_burn_in()
        self.burn_in = needed if burn_in is None else int(burn_in)
        self._check_burn_in()
        odd = isinstance(observable, str) and _OBSERVABLES[observable][2]
        self.center_se = 0.0
        if center is not None:
            self.center = np.asarray(center, dtype=float).reshape(self.dim)
            exact_center = False
        elif odd and innovation.symmetric:
            # odd F, odd f, symmetric xi: the stationary law is symmetric
            self.center = np.zeros(self.dim)
            exact_center = True
        else:
            self.center, self.center_se = self._estimate_center(center_seed)
            exact_center = False
        self.centering = "analytic" if exact_center else "estimated"
        if exact_center:
            self.bound_B = self.lip_f * self.state_bound
        else:
            self.bound_B = 2.0 * self.lip_f * self.state_bound
        self.adapted = True

    def recommended_burn_in(self) -> int:
        if self.contraction_rho == 0.0:
            return 1
        return int(math.ceil(math.log(1e-12) / math.log(self.contraction_rho)))

    def _check_burn_in(self):
        bias = self.contraction_rho**self.burn_in * self.state_bound
        if bias > 1e-8 * max(self.state_bound, 1.0):
            raise StationarityError(
                f"burn-in of {self.burn_in} steps leaves initialization bias up to {bias:.3e}; "
                f"use at least {self.recommended_burn_in()} steps"
            )

    def F(self, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        z = np.tanh(y) if self.family == "tanh" else y
        return z @ self.A.T + xi

    def certify_contraction(self, rng: np.random.Generator, pairs: int = 64, draws: int = 4096) -> bool:
        """Check E||F(x, xi) - F(y, xi)|| <= rho ||x - y|| on random pairs."""
        r = self.state_bound
        x = rng.uniform(-r, r, size=(pairs, self.dim))
        y = rng.uniform(-r, r, size=(pairs, self.dim))
        xi = self.innovation.sample(rng, (draws,))
        lhs = np.array([np.linalg.norm(self.F(x[i], xi) - self.F(y[i], xi), axis=1).mean() for i in range(pairs)])
        rhs = self.contraction_rho * np.linalg.norm(x - y, axis=1)
        return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-15))

    def _estimate_center(self, seed):
        rng = derived_rng(seed, "stable-markov-center")
        state = self._raw_state(rng, 64)
        ys, _ = self._run(state, 4096, rng)
        vals = self.f(ys).reshape(64, -1, self.dim).mean(axis=1)
        return vals.mean(axis=0), float(np.max(vals.std(axis=0, ddof=1)) / math.sqrt(64))

    def _raw_state(self, rng, batch):
        y = np.zeros((batch, self.dim))
        for _ in range(self.burn_in):
            y = self.F(y, self.innovation.sample(rng, (batch,)))
        return State(self.kind, {"y": y}, batch, 0)

    def stationary_state(self, rng, batch=1):
        return self._raw_state(rng, batch)

    def _run(self, state, n, rng):
        self._check_kind(state)
        y = state.data["y"]
        xi = self.innovation.sample(rng, (state.batch, n))
        ys = np.empty((state.batch, n, self.dim))
        for k in range(n):
            y = self.F(y, xi[:, k])
            ys[:, k] = y
        return ys, State(self.kind, {"y": y}, state.batch, state.time + n)

    def advance(self, state, n, rng):
        ys, new = self._run(state, n, rng)
        return self.f(ys) - self.center, new

    def advance_raw(self, state, n, rng):
        if self.dim != 1:
            raise ValueError("advance_raw needs a real-valued chain")
        ys, new = self._run(state, n, rng)
        return ys[..., 0], new

    def default_lag_cutoff(self, rel=1e-6):
        if self.contraction_rho == 0.0:
            return 1
        return int(math.ceil(math.log(rel) / math.log(self.contraction_rho)))

    def describe(self):
        inn = self.innovation
        return {
            "kind": self.kind,
            "family": self.family,
            "A": self.A.tolist(),
            "observable": self.observable_name,
            "lip_f": self.lip_f,
            "burn_in": self.burn_in,
            "innovation": {"kind": inn.kind, "low": inn.low, "high": inn.high, "dim": inn.dim},
        }


def ar1(rho: float, low: float = -1.0, high: float = 1.0, **kw) -> StableMarkov:
    """Scalar Y_n = rho Y_{n-1} + xi_n, xi uniform on [low, high]."""
    return StableMarkov([[rho]], BoxInnovation("uniform", low, high, 1), **kw)


class FnOfLinearProcess(ProcessModel):
    """X_k = f(sum_i c_i eps_{k-i}) - E f(...), with offsets i in [i_min, i_max].

    ``coeffs`` has shape (i_max - i_min + 1, m, m) (or (K,) in the scalar
    case), entry r holding c_{i_min + r}. Offsets i < 0 reach into the
    future, which makes the sequence non-adapted to F_k = sigma(eps_j, j <= k).

    ``tail_norm_sum`` records sum ||c_k|| over offsets dropped when the
    model was truncated from an infinite family; it only feeds the reported
    truncation bound.
    """

    kind = "FnOfLinearProcess"

    def __init__(
        self,
        coeffs,
        innovation: BoxInnovation,
        i_min: int = 0,
        f="identity",
        modulus=None,
        tail_norm_sum: float = 0.0,
        center=None,
        center_seed: int = 0,
    ):
        c = np.asarray(coeffs, dtype=float)
        m = innovation.dim
        if c.ndim == 1:
            if m != 1:
                raise ValueError("scalar coefficients need a 1-d innovation")
            c = c[:, None, None]
        if c.ndim != 3 or c.shape[1:] != (m, m):
            raise ValueError("coefficients must have shape (K, m, m)")
        self.coeffs = c
        self.i_min = int(i_min)
        self.i_max = self.i_min + c.shape[0] - 1
        self.innovation = innovation
        self.dim = m
        self.op_norms = np.array([np.linalg.norm(ci, 2) for ci in c])
        self.tail_norm_sum = float(tail_norm_sum)
        self.n_past = max(self.i_max, -1) + 1  # eps_{k-i} with i >= 0: eps_{k - i_max} .. eps_k
        self.n_ahead = max(-self.i_min, 0)  # eps_{k+1} .. eps_{k+n_ahead}
        self.adapted = not np.any(self.op_norms[: max(0, -self.i_min)] > 0)
        self.f_name = f if isinstance(f, str) else "custom"
        self.f = _observable(f)
        if modulus is None:
            if not isinstance(f, str):
                raise ValueError("a custom f needs an explicit modulus of continuity")
            modulus = Lipschitz(_OBSERVABLES[f][1])
        if not isinstance(modulus, (Lipschitz, LogModulus)):
            raise ValueError("unknown modulus family; use Lipschitz or LogModulus")
        self.modulus = modulus
        self.is_linear = self.f_name == "identity"
        self.center_se = 0.0
        if center is not None:
            self.center = np.asarray(center, dtype=float).reshape(m)
            self.centering = "given"
        elif self.is_linear:
            self.center = self.coeffs.sum(axis=0) @ innovation.mean
            self.centering = "analytic"
        else:
            self.center, self.center_se = self._estimate_center(center_seed)
            self.centering = "estimated"
        if self.is_linear:
            self.bound_B = float(self.op_norms.sum() * innovation.radius)
        else:
            # f(u) - (average of f over reachable points) is controlled by the
            # modulus at the reachable diameter
            self.bound_B = float(self.modulus(innovation.diameter * self.op_norms.sum()))

    def offsets(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1)

    def c(self, i: int) -> np.ndarray:
        if self.i_min <= i <= self.i_max:
            return self.coeffs[i - self.i_min]
        return np.zeros((self.dim, self.dim))

    def truncation_bound(self) -> float:
        """w_f(delta(eps_0) * sum over dropped offsets of ||c_k||)."""
        return float(self.modulus(self.innovation.diameter * self.tail_norm_sum))

    def _estimate_center(self, seed):
        rng = derived_rng(seed, "linear-process-center")
        n, blocks = 1 << 16, 16
        eps = self.innovation.sample(rng, (blocks * n, self.coeffs.shape[0]))
        u = np.einsum("bkj,kij->bi", eps, self.coeffs)
        vals = self.f(u).reshape(blocks, n, self.dim).mean(axis=1)
        return vals.mean(axis=0), float(np.max(vals.std(axis=0, ddof=1)) / math.sqrt(blocks))

    def linear_part(self, eps: np.ndarray, n: int) -> np.ndarray:
        """U_k = sum_i c_i eps_{k-i} for k = 1..n.

        ``eps`` has shape (batch, n_past + n + n_ahead, m), position p holding
        eps_{p + 1 - n_past}.
        """
        out = np.zeros((eps.shape[0], n, self.dim))
        for r, i in enumerate(self.offsets()):
            if self.op_norms[r] == 0.0:
                continue
            lo = self.n_past - i - 1 + 1  # position of eps_{1-i}
            seg = eps[:, lo : lo + n]
            if self.dim == 1:
                out += seg * self.coeffs[r, 0, 0]
            else:
                out += seg @ self.coeffs[r].T
        return out

    def filter(self, eps: np.ndarray, n: int) -> np.ndarray:
        return self.f(self.linear_part(eps, n)) - self.center

    def stationary_state(self, rng, batch=1):
        past = self.innovation.sample(rng, (batch, self.n_past))
        return State(self.kind, {"past": past}, batch, 0)

    def snapshot(self, state):
        self._check_kind(state)
        return State(self.kind, {"past": state.data["past"].copy()}, state.batch, state.time)

    def advance(self, state, n, rng):
        eps, new = self.advance_innovations(state, n, rng)
        return self.filter(eps, n), new

    def advance_innovations(self, state, n, rng):
        """Full innovation window for the next n outputs, plus the new state."""
        self._check_kind(state)
        past = state.data["past"]
        ahead = state.data.get("ahead")
        need = n + self.n_ahead
        have = 0 if ahead is None else ahead.shape[1]
        fresh = self.innovation.sample(rng, (state.batch, max(need - have, 0)))
        fut = fresh if ahead is None else np.concatenate([ahead, fresh], axis=1)
        eps = np.concatenate([past, fut[:, :need]], axis=1)
        upto = self.n_past + n  # positions holding eps_{<= t+n}
        data = {"past": eps[:, upto - self.n_past : upto].copy()}
        if need > n:
            data["ahead"] = fut[:, n:need].copy()
        return eps, State(self.kind, data, state.batch, state.time + n)

    def exact_Q(self) -> np.ndarray:
        """Long-run covariance (sum c_i) Sigma (sum c_i)^T, valid for identity f."""
        if not self.is_linear:
            raise ValueError("closed-form Q needs identity f")
        s = self.coeffs.sum(axis=0)
        return self.innovation.variance * (s @ s.T)

    def default_lag_cutoff(self, rel=1e-6):
        # autocovariances vanish beyond the span of the coefficient window
        return int(self.i_max - self.i_min)

    def describe(self):
        inn = self.innovation
        return {
            "kind": self.kind,
            "i_min": self.i_min,
            "coeffs": self.coeffs.tolist(),
            "f": self.f_name,
            "modulus": type(self.modulus).__name__,
            "tail_norm_sum": self.tail_norm_sum,
            "innovation": {"kind": inn.kind, "low": inn.low, "high": inn.high, "dim": inn.dim},
        }


def geometric_linear_process(
    rho: float,
    L: int = 24,
    two_sided: bool = False,
    innovation: BoxInnovation | None = None,
    f="identity",
    modulus=None,
) -> FnOfLinearProcess:
    """Scalar linear process with c_i = rho^|i|, truncated to |i| <= L."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    innovation = innovation or BoxInnovation("uniform", -1.0, 1.0, 1)
    i_min = -L if two_sided else 0
    offs = np.arange(i_min, L + 1)
    coeffs = rho ** np.abs(offs).astype(float)
    sides = 2 if two_sided else 1
    tail = sides * rho ** (L + 1) / (1.0 - rho)
    return FnOfLinearProcess(coeffs, innovation, i_min=i_min, f=f, modulus=modulus, tail_norm_sum=tail)


class EmpiricalIndicator(ProcessModel):
    """X_i = (1{Y_i <= t_k} - F(t_k)) sqrt(mu_k), k = 1..G, over a real base sequence.

    The coordinates discretize t -> 1{Y_i <= t} - F(t) in L^2(mu); the
    sqrt-weights make the Euclidean norm match the L^2(mu) norm.
    """

    kind = "EmpiricalIndicator"

    def __init__(self, base: ProcessModel, grid, weights, cdf=None, cdf_seed: int = 0):
        if not hasattr(base, "advance_raw"):
            raise ValueError("base model must be real-valued")
        grid = np.asarray(grid, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if grid.ndim != 1 or weights.shape != grid.shape:
            raise ValueError("grid and weights must be matching 1-d arrays")
        if np.any(np.diff(grid) <= 0) or np.any(weights <= 0):
            raise ValueError("grid must increase strictly and weights must be positive")
        self.base = base
        self.grid = grid
        self.weights = weights
        self.sqrt_w = np.sqrt(weights)
        self.dim = grid.size
        self.cdf_se = 0.0
        if cdf is not None:
            self.F = np.asarray(cdf, dtype=float).reshape(grid.shape)
            self.cdf_mode = "given"
        elif hasattr(base, "marginal_cdf"):
            self.F = base.marginal_cdf(grid)
            self.cdf_mode = "analytic"
        else:
            self.F, self.cdf_se = self._estimate_cdf(cdf_seed)
            self.cdf_mode = "estimated"
        self.bound_B = float(np.sqrt(np.sum(self.weights * np.maximum(self.F, 1.0 - self.F) ** 2)))
        self.adapted = base.adapted

    def _estimate_cdf(self, seed):
        rng = derived_rng(seed, "empirical-cdf")
        st = self.base.stationary_state(rng, 32)
        y, _ = self.base.advance_raw(st, 8192, rng)
        ind = (y[..., None] <= self.grid).mean(axis=1)
        return ind.mean(axis=0), float(np.max(ind.std(axis=0, ddof=1)) / math.sqrt(32))

    def features(self, y: np.ndarray) -> np.ndarray:
        return ((y[..., None] <= self.grid) - self.F) * self.sqrt_w

    def l1_norm(self, v: np.ndarray) -> np.ndarray:
        """Discretized L^1(mu) norm of the function encoded by coordinates ``v``."""
        return np.sum(np.abs(v) * self.sqrt_w, axis=-1)

    def as_finite_chain(self) -> FiniteStateChain:
        """Equivalent finite chain with vector observable, for exact computations."""
        if not isinstance(self.base, FiniteStateChain):
            raise ValueError("exact computations need a finite-state base chain")
        y = self.base.values[:, 0]
        feats = (y[:, None] <= self.grid[None, :]) * self.sqrt_w[None, :]
        return FiniteStateChain(self.base.P, feats)

    def stationary_state(self, rng, batch=1):
        st = self.base.stationary_state(rng, batch)
        return State(self.kind, {"base": _pack(st)}, batch, 0)

    def advance(self, state, n, rng):
        self._check_kind(state)
        inner = _unpack(state.data["base"], self.base.kind, state.batch, state.time)
        y, new = self.base.advance_raw(inner, n, rng)
        return self.features(y), State(self.kind, {"base": _pack(new)}, state.batch, new.time)

    def default_lag_cutoff(self, rel=1e-6):
        return self.base.default_lag_cutoff(rel)

    def describe(self):
        return {"kind": self.kind, "base": self.base.describe(), "grid": self.grid.tolist(), "weights": self.weights.tolist()}


def _pack(st: State) -> np.ndarray:
    # nested states are stored as a structured object array, batch-leading
    arr = np.empty(st.batch, dtype=object)
    for i in range(st.batch):
        arr[i] = {k: v[i] for k, v in st.data.items()}
    return arr


def _unpack(arr: np.ndarray, kind: str, batch: int, time: int) -> State:
    if batch == 0 or not arr[0]:
        return State(kind, {}, batch, time)
    keys = arr[0].keys()
    return State(kind, {k: np.stack([a[k] for a in arr]) for k in keys}, batch, time)


def uniform_grid(G: int, lo: float = 0.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint grid with equal Lebesgue weights on [lo, hi]."""
    h = (hi - lo) / G
    return lo + h * (np.arange(G) + 0.5), np.full(G, h)


# ---------------------------------------------------------------------------
# sampling front ends


def sample_paths(model: ProcessModel, n: int, reps: int, seed: int, stream: str = "paths", chunk: int | None = None) -> np.ndarray:
    """``reps`` independent stationary paths (X_1..X_n), shape (reps, n, dim)."""
    if n < 1 or reps < 1:
        raise ValueError("need n >= 1 and reps >= 1")
    chunk = chunk or _default_chunk(n, model.dim)

    def run(job):
        idx, size = job
        rng = derived_rng(seed, stream, idx)
        st = model.stationary_state(rng, size)
        x, _ = model.advance(st, n, rng)
        return x

    parts = parallel_map(run, list(enumerate(chunk_sizes(reps, chunk))))
    return np.concatenate(parts, axis=0)


def _default_chunk(n: int, dim: int) -> int:
    return max(1, (1 << 21) // max(1, n * dim))


def sample_path(model: ProcessModel, n: int, seed: int) -> np.ndarray:
    """One stationary realization (X_1..X_n) as an (n, dim) array."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = derived_rng(seed, "path")
    st = model.stationary_state(rng, 1)
    x, _ = model.advance(st, n, rng)
    return x[0]


def partial_sum_path(model: ProcessModel, n: int, seed: int) -> PathCH:
    """Normalized polygonal partial-sum process Z_n with knots k/n."""
    return PathCH.from_increments(sample_path(model, n, seed), scale=1.0 / math.sqrt(n))


class Simulator:
    """Single stationary realization with snapshot/restore of its past.

    Restoring a snapshot with a new seed replays the same past and draws a
    fresh future, which is how conditional quantities given F_0 are sampled.
    """

    def __init__(self, model: ProcessModel, seed: int):
        self.model = model
        self.rng = derived_rng(seed, "simulator")
        self.state = model.stationary_state(self.rng, 1)

    def run(self, n: int) -> np.ndarray:
        x, self.state = self.model.advance(self.state, n, self.rng)
        return x[0]

    def snapshot(self) -> State:
        return self.model.snapshot(self.state)

    def restore(self, snap: State, seed: int | None = None) -> None:
        self.state = self.model.restore(snap)
        if seed is not None:
            self.rng = derived_rng(seed, "simulator")
