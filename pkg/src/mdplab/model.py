"""Finite realization of the abstract hydrodynamic model (A, B, norms).

The Gelfand triple V c H c V' is realized on R^n: H carries the Euclidean
inner product, A is diagonal with positive eigenvalues, ||v||^2 = sum lam_i v_i^2
and the V'-V pairing coincides with the H inner product.

Every evaluation routine works on batches: arrays of shape (..., n).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .errors import InputError

BilinearFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
NormFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """A model plugin: diagonal operator, bilinear term and auxiliary Q-norm.

    ``bilinear_eval(u, v)`` and ``q_norm_eval(v)`` must be pure and accept
    leading batch axes. ``is_linear`` marks models with B == 0 so solvers can
    take closed-form recurrences.
    """

    dim: int
    a_eigenvalues: np.ndarray
    bilinear_eval: BilinearFn
    q_norm_eval: NormFn
    a0: float
    label: str
    is_linear: bool = False
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.a_eigenvalues, dtype=float)
        if lam.shape != (self.dim,):
            raise InputError(f"a_eigenvalues must have shape ({self.dim},), got {lam.shape}")
        if not np.all(lam > 0):
            raise InputError("all eigenvalues of A must be strictly positive")
        if not self.a0 > 0:
            raise InputError("a0 must be positive")
        lam = lam.copy()
        lam.flags.writeable = False
        object.__setattr__(self, "a_eigenvalues", lam)

    def check_state(self, u, name="u") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (self.dim,):
            raise InputError(f"{name} has trailing dimension {u.shape[-1:]} but model dim is {self.dim}")
        return u

    def h_norm(self, u) -> np.ndarray:
        return np.sqrt(np.sum(np.square(u), axis=-1))

    def v_norm(self, u) -> np.ndarray:
        return np.sqrt(np.sum(self.a_eigenvalues * np.square(u), axis=-1))

    def B(self, u, v) -> np.ndarray:
        return self.bilinear_eval(u, v)


def apply_A(model: ModelSpec, u) -> np.ndarray:
    """Apply the diagonal operator A: (lam_i u_i)_i."""
    u = model.check_state(u)
    return model.a_eigenvalues * u


def trilinear(model: ModelSpec, u, v, w) -> np.ndarray:
    """b(u, v, w) = <B(u, v), w>, batched over leading axes."""
    u = model.check_state(u, "u")
    v = model.check_state(v, "v")
    w = model.check_state(w, "w")
    return np.sum(model.bilinear_eval(u, v) * w, axis=-1)


@dataclass
class CheckRecord:
    name: str
    n_samples: int
    max_abs_defect: float
    max_rel_defect: float
    constant_estimate: float | None
    passed: bool
    tol: float | None


@dataclass
class AssumptionReport:
    model: str
    records: list[CheckRecord]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def __getitem__(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"model": self.model, "passed": self.passed,
                "checks": [asdict(r) for r in self.records]}


def _unit_samples(rng, n_samples, dim):
    x = rng.standard_normal((n_samples, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _ratio(num, den):
    num = np.abs(num)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def verify_assumptions(model: ModelSpec, n_samples: int = 1000, tol: float = 1e-10,
                       rng_seed: int = 0) -> AssumptionReport:
    """Spot-check bilinearity, skew symmetry, interpolation and the trilinear bound.

    Samples have standard-normal coordinates scaled to unit H-norm, so the
    defect ratios are scale free. Relative defects are taken against the
    Cauchy-Schwarz magnitude of the terms involved. The trilinear-bound
    constant is reported, not thresholded.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = model.dim
    u, u2, v, w = (_unit_samples(rng, n_samples, n) for _ in range(4))
    alpha, beta = rng.standard_normal((2, n_samples, 1))
    B = model.bilinear_eval
    hn = model.h_norm
    records = []

    Buv, Bu2v, Buw = B(u, v), B(u2, v), B(u, w)
    d1 = B(alpha * u + beta * u2, v) - alpha * Buv - beta * Bu2v
    s1 = np.abs(alpha[:, 0]) * hn(Buv) + np.abs(beta[:, 0]) * hn(Bu2v)
    d2 = B(u, alpha * v + beta * w) - alpha * Buv - beta * Buw
    s2 = np.abs(alpha[:, 0]) * hn(Buv) + np.abs(beta[:, 0]) * hn(Buw)
    abs_def = np.maximum(hn(d1), hn(d2))
    rel_def = np.maximum(_ratio(hn(d1), s1), _ratio(hn(d2), s2))
    records.append(CheckRecord("bilinearity", n_samples, float(abs_def.max()),
                               float(rel_def.max()), None, bool(rel_def.max() <= tol), tol))

    b_vw = np.sum(Buv * w, axis=-1)
    b_wv = np.sum(Buw * v, axis=-1)
    skew = b_vw + b_wv
    mag = hn(Buv) * hn(w) + hn(Buw) * hn(v)
    rel = _ratio(skew, mag)
    records.append(CheckRecord("skew_symmetry", n_samples, float(np.abs(skew).max()),
                               float(rel.max()), None, bool(rel.max() <= tol), tol))

    b_vv = np.sum(Buv * v, axis=-1)
    rel = _ratio(b_vv, hn(Buv) * hn(v))
    records.append(CheckRecord("diagonal_null", n_samples, float(np.abs(b_vv).max()),
                               float(rel.max()), None, bool(rel.max() <= tol), tol))

    ratio = model.q_norm_eval(v) ** 2 / (hn(v) * model.v_norm(v))
    excess = np.maximum(ratio - model.a0, 0.0)
    records.append(CheckRecord("interpolation", n_samples, float(excess.max()),
                               float(excess.max() / model.a0), float(ratio.max()),
                               bool(excess.max() / model.a0 <= tol), tol))

    qu, qw = model.q_norm_eval(u), model.q_norm_eval(w)
    c = _ratio(b_vw, qu * model.v_norm(v) * qw)
    const = float(c.max())
    records.append(CheckRecord("trilinear_bound", n_samples, 0.0, 0.0, const,
                               bool(np.isfinite(const)), None))
    return AssumptionReport(model.label, records)
