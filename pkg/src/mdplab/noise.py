"""Poisson random measures on a finite mark space.

The mark space Z = {z_1, ..., z_K} carries a finite measure nu with weights
nu_k.  N^{1/eps} has intensity eps^{-1} nu(dz) dt; a controlled measure
N^{psi/eps} has intensity eps^{-1} psi(t, z) nu(dz) dt with psi piecewise
constant on the cells (t_j, t_{j+1}] x {z_k} of a time grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError, ResourceError
from .timegrid import TimeGrid

DEFAULT_MAX_POINTS = 50_000_000


@dataclass(frozen=True)
class MarkSpace:
    weights: np.ndarray
    marks: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0 or not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise InputError("mark weights must be finite and strictly positive")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if not self.marks:
            object.__setattr__(self, "marks", tuple(f"z{k}" for k in range(w.size)))
        elif len(self.marks) != w.size:
            raise InputError("one identifier per mark weight is required")

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class DeviationScale:
    """Noise intensity eps and deviation scale a(eps)."""

    epsilon: float
    a_of_eps: float
    description: str = ""
    gamma: float | None = None

    def __post_init__(self):
        if not (self.epsilon > 0 and self.a_of_eps > 0):
            raise InputError("epsilon and a(epsilon) must be positive")

    @classmethod
    def power(cls, epsilon: float, gamma: float = 0.3) -> "DeviationScale":
        """a(eps) = eps**gamma; gamma in (0, 1/2) keeps a -> 0 and eps/a^2 -> 0."""
        return cls(epsilon, epsilon ** gamma, f"a(eps)=eps^{gamma}", gamma)

    @property
    def speed(self) -> float:
        """eps / a(eps)^2."""
        return self.epsilon / self.a_of_eps ** 2


@dataclass(frozen=True)
class JumpCoefficient:
    """Jump map G(t, u, z_k) with Lipschitz/growth envelopes L1, L2, L3.

    ``g_eval(t, u, k)`` must broadcast over leading axes of ``u`` and over an
    integer array ``k``.  ``comp_eval(t, u)``, when given, returns
    sum_k G(t, u, z_k) nu_k directly.
    """

    g_eval: Callable
    L1: Callable
    L2: Callable
    L3: Callable
    dim: int
    n_marks: int
    comp_eval: Callable | None = None
    is_zero: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, t, u, k):
        return self.g_eval(t, u, k)

    def all_marks(self, t, u) -> np.ndarray:
        """G(t, u, z_k) for every mark, shape (..., K, n)."""
        u = np.asarray(u, dtype=float)
        return np.stack([self.g_eval(t, u, k) for k in range(self.n_marks)], axis=-2)

    def compensator(self, t, u, weights) -> np.ndarray:
        if self.comp_eval is not None:
            return self.comp_eval(t, u)
        return np.einsum("...kn,k->...n", self.all_marks(t, u), weights)

    @classmethod
    def affine(cls, space: MarkSpace, vectors, multipliers=None) -> "JumpCoefficient":
        """G(t, u, z_k) = g_k + s_k u.

        Envelopes: L1 = L3 = |s_k|, L2 = |g_k|.
        """
        g = np.array(vectors, dtype=float)
        if g.ndim != 2 or g.shape[0] != space.K:
            raise InputError(f"need one jump vector per mark: shape ({space.K}, n)")
        s = np.zeros(space.K) if multipliers is None else np.array(multipliers, dtype=float)
        if s.shape != (space.K,):
            raise InputError("need one multiplier per mark")
        g.flags.writeable = False
        s.flags.writeable = False
        nu = space.weights
        g_comp = nu @ g
        s_comp = float(nu @ s)
        gnorm = np.linalg.norm(g, axis=1)

        def g_eval(t, u, k):
            k = np.asarray(k)
            return g[k] + s[k][..., None] * u

        def comp(t, u):
            return g_comp + s_comp * np.asarray(u)

        def env_lip(t, k):
            return np.abs(s[np.asarray(k)])

        def env_growth(t, k):
            return gnorm[np.asarray(k)]

        return cls(g_eval, env_lip, env_growth, env_lip, dim=g.shape[1], n_marks=space.K,
                   comp_eval=comp, is_zero=not (np.any(g) or np.any(s)),
                   params={"vectors": g, "multipliers": s})

    @classmethod
    def zero(cls, space: MarkSpace, dim: int) -> "JumpCoefficient":
        return cls.affine(space, np.zeros((space.K, dim)))


def check_jump_envelopes(g: JumpCoefficient, n_samples: int = 200, T: float = 1.0,
                         rng_seed: int = 0, rtol: float = 1e-12) -> dict:
    """Spot-check (H1-G) and (H2-G) on random states, times and marks."""
    rng = np.random.default_rng(rng_seed)
    t = rng.uniform(0, T, n_samples)
    k = rng.integers(0, g.n_marks, n_samples)
    u1 = rng.standard_normal((n_samples, g.dim))
    u2 = rng.standard_normal((n_samples, g.dim))
    lip = np.linalg.norm(g(t, u1, k) - g(t, u2, k), axis=-1)
    lip_bound = g.L1(t, k) * np.linalg.norm(u1 - u2, axis=-1)
    grow = np.linalg.norm(g(t, u1, k), axis=-1)
    grow_bound = g.L2(t, k) + g.L3(t, k) * np.linalg.norm(u1, axis=-1)
    slack = rtol * (1.0 + lip_bound)
    return {
        "lipschitz_ok": bool(np.all(lip <= lip_bound + slack)),
        "growth_ok": bool(np.all(grow <= grow_bound + rtol * (1.0 + grow_bound))),
        "max_lipschitz_ratio": float(np.max(lip / np.maximum(lip_bound, 1e-300))),
        "max_growth_ratio": float(np.max(grow / np.maximum(grow_bound, 1e-300))),
    }


def _cell_table(grid: TimeGrid, values, K, what):
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.M, K):
        raise InputError(f"{what} values must have shape ({grid.M}, {K}), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{what} values must be finite")
    v = v.copy()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Control:
    """phi(t, z), piecewise constant on (t_j, t_{j+1}] x {z_k}; values (M, K)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _cell_table(self.grid, self.values,
                                                       np.shape(self.values)[-1], "control"))

    @classmethod
    def zeros(cls, grid: TimeGrid, K: int) -> "Control":
        return cls(grid, np.zeros((grid.M, K)))

    @classmethod
    def from_function(cls, grid: TimeGrid, K: int, fn) -> "Control":
        """Tabulate fn(t, k) at left endpoints t_j."""
        t = grid.times[:-1, None]
        k = np.arange(K)[None, :]
        return cls(grid, np.broadcast_to(fn(t, k), (grid.M, K)).astype(float))

    def norm2_sq(self, space: MarkSpace) -> float:
        if space.K != self.values.shape[1]:
            raise InputError("control and mark space disagree on the number of marks")
        return float(np.sum(self.values ** 2 * space.weights[None, :] * self.grid.dt[:, None]))

    def norm2(self, space: MarkSpace) -> float:
        return float(np.sqrt(self.norm2_sq(space)))

    def truncated(self, beta: float, a: float) -> "Control":
        """phi * 1{|phi| <= beta / a}."""
        mask = np.abs(self.values) <= beta / a
        return Control(self.grid, np.where(mask, self.values, 0.0))

    def __add__(self, other: "Control") -> "Control":
        if not self.grid.same_as(other.grid):
            raise InputError("controls live on different grids")
        return Control(self.grid, self.values + other.values)

    def __mul__(self, c: float) -> "Control":
        return Control(self.grid, c * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Tilt:
    """Intensity multiplier psi with psi in [1/n, n] on every cell."""

    grid: TimeGrid
    values: np.ndarray
    bound: float

    def __post_init__(self):
        if not self.bound >= 1:
            raise InputError("tilt bound n must be >= 1")
        v = _cell_table(self.grid, self.values, np.shape(self.values)[-1], "tilt")
        lo, hi = 1.0 / self.bound, self.bound
        tiny = 1e-12 * self.bound
        if np.any(v < lo - tiny) or np.any(v > hi + tiny):
            raise InputError(f"tilt values must lie in [1/{self.bound}, {self.bound}]")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, K: int, c: float = 1.0, bound: float | None = None) -> "Tilt":
        if bound is None:
            bound = max(c, 1.0 / c, 1.0)
        return cls(grid, np.full((grid.M, K), float(c)), bound)

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def at(self, t, k) -> np.ndarray:
        return self.values[self.grid.cell_index(t), k]

    def induced_control(self, a: float) -> Control:
        """phi = (psi - 1) / a."""
        return Control(self.grid, (self.values - 1.0) / a)


@dataclass(frozen=True)
class PointProcessSample:
    """Jump times in (0, T] (sorted) with their mark indices."""

    times: np.ndarray
    marks: np.ndarray
    T: float

    @property
    def count(self) -> int:
        return int(self.times.size)

    def cell_counts(self, grid: TimeGrid, K: int) -> np.ndarray:
        out = np.zeros((grid.M, K), dtype=np.int64)
        np.add.at(out, (grid.cell_index(self.times), self.marks), 1)
        return out


def _check_budget(expected, max_points):
    if expected > max_points:
        raise ResourceError(f"expected {expected:.3g} points exceeds budget {max_points:.3g}")


def _draw_points(rng, rate_total, T, weights, max_points):
    _check_budget(rate_total * T, max_points)
    n = int(rng.poisson(rate_total * T))
    times = T * (1.0 - rng.random(n))  # uniform on (0, T]
    marks = rng.choice(weights.size, size=n, p=weights / weights.sum())
    return times, marks


def _sorted_sample(times, marks, T):
    order = np.argsort(times, kind="stable")
    return PointProcessSample(times[order], marks[order].astype(np.intp), float(T))


def sample_prm(space: MarkSpace, epsilon: float, T: float, rng,
               max_points: float = DEFAULT_MAX_POINTS) -> PointProcessSample:
    """Homogeneous Poisson random measure with intensity eps^{-1} nu x Leb."""
    if not (epsilon > 0 and T > 0):
        raise InputError("epsilon and T must be positive")
    times, marks = _draw_points(rng, space.total_mass / epsilon, T, space.weights, max_points)
    return _sorted_sample(times, marks, T)


def sample_controlled_prm(space: MarkSpace, epsilon: float, psi: Tilt, rng,
                          max_points: float = DEFAULT_MAX_POINTS) -> PointProcessSample:
    """Thinning: dominate at rate n nu_k / eps, keep (t, z) w.p. psi(t, z) / n.

    The draws for the dominating process come first and in the same order as
    :func:`sample_prm`, so with n = 1 both functions see the same points.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    if psi.K != space.K:
        raise InputError("tilt and mark space disagree on the number of marks")
    n = psi.bound
    T = psi.grid.T
    times, marks = _draw_points(rng, n * space.total_mass / epsilon, T, space.weights, max_points)
    accept = rng.random(times.size) * n < psi.at(times, marks)
    return _sorted_sample(times[accept], marks[accept], T)


def girsanov_log_weight(sample: PointProcessSample, psi: Tilt, epsilon: float,
                        space: MarkSpace, T: float | None = None) -> float:
    """log dP/dP^psi on a sample drawn at intensity eps^{-1} psi nu.

    -sum_points log psi(t, z) + eps^{-1} sum_{j,k} (psi_jk - 1) nu_k dt_j
    """
    T = psi.grid.T if T is None else T
    if not np.isclose(T, psi.grid.T):
        raise InputError("tilt grid horizon differs from T")
    vals = psi.at(sample.times, sample.marks)
    if np.any(vals <= 0):
        raise InputError("psi vanishes at an observed point: weight is infinite")
    compensator = np.sum((psi.values - 1.0) * space.weights[None, :] * psi.grid.dt[:, None])
    return float(-np.sum(np.log(vals)) + compensator / epsilon)


def ell(x) -> np.ndarray:
    """x log x - x + 1 with ell(0) = 1."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    y = safe - 1.0
    direct = safe * np.log(safe) - y
    # near x = 1 the log1p form avoids cancelling against 1
    near = (1.0 + y) * np.log1p(np.where(np.abs(y) < 0.5, y, 0.0)) - y
    return np.where(x > 0, np.where(np.abs(y) < 0.5, near, direct), 1.0)


def q_functional(psi, space: MarkSpace) -> float:
    """Q(psi) = sum_{j,k} ell(psi_jk) nu_k dt_j for a Tilt or nonnegative Control."""
    vals = np.asarray(psi.values, dtype=float)
    if np.any(vals < 0):
        raise InputError("Q is defined for nonnegative functions only")
    if vals.shape[1] != space.K:
        raise InputError("values and mark space disagree on the number of marks")
    return float(np.sum(ell(vals) * space.weights[None, :] * psi.grid.dt[:, None]))


def check_admissible(psi: Tilt, m: float, scale: DeviationScale,
                     space: MarkSpace) -> tuple[bool, dict]:
    """Membership of psi in {Q(g) <= m a(eps)^2}."""
    q = q_functional(psi, space)
    bound = m * scale.a_of_eps ** 2
    phi = psi.induced_control(scale.a_of_eps)
    diag = {"Q": q, "bound": bound, "phi_norm2": phi.norm2(space)}
    return bool(q <= bound), diag
