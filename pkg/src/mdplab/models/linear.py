"""Linear test model: B == 0, diagonal A.  Used for closed-form oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..model import ModelSpec


@dataclass(frozen=True)
class LinearConfig:
    eigenvalues: tuple[float, ...] = (1.0,)


def _zero_bilinear(u, v):
    return np.zeros(np.broadcast_shapes(np.shape(u), np.shape(v)))


def _l4(v):
    return np.sum(np.asarray(v, dtype=float) ** 4, axis=-1) ** 0.25


def build_linear(config: LinearConfig) -> ModelSpec:
    lam = np.asarray(config.eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InputError("eigenvalues must be a non-empty list")
    if not np.all(lam > 0):
        raise InputError("eigenvalues must be positive")
    return ModelSpec(
        dim=lam.size,
        a_eigenvalues=lam,
        bilinear_eval=_zero_bilinear,
        q_norm_eval=_l4,
        a0=float(1.0 / np.sqrt(lam.min())),
        label=f"linear-n{lam.size}",
        is_linear=True,
        info={"config": config},
    )
