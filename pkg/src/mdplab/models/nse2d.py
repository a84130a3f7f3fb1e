"""2D Navier-Stokes on the torus, spectral Galerkin truncation.

Velocity fields are divergence free with Fourier modes 0 < |k| <= K.  Each
retained mode carries a scalar complex amplitude c_k along the unit vector
e_k = k_perp / |k|; reality forces c_{-k} = -conj(c_k), so only one
representative per +-k pair is stored.  Real coordinates are
sqrt(2) * (Re c_k, Im c_k), which makes the Euclidean norm equal to the
mean-square velocity.

The nonlinear term is computed by direct convolution over retained triads,
so no aliasing occurs and <B(u, v), w> = -<B(u, w), v> holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import InputError, ResourceError
from ..model import ModelSpec

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Nse2dConfig:
    K: int = 4
    visc: float = 0.05
    truncation: str = "square"  # "square": |k|_inf <= K, "disk": |k|_2 <= K
    max_triads: int = 2_000_000


def _retained_modes(K, truncation):
    r = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    k = np.stack([k1.ravel(), k2.ravel()], axis=1)
    k = k[np.any(k != 0, axis=1)]
    if truncation == "disk":
        k = k[np.sum(k * k, axis=1) <= K * K]
    elif truncation != "square":
        raise InputError(f"unknown truncation {truncation!r}")
    return k


class Nse2dGalerkin:
    """Precomputed triad tables and coordinate maps for one truncation."""

    def __init__(self, config: Nse2dConfig):
        if config.K < 1:
            raise InputError("K must be >= 1")
        if not config.visc > 0:
            raise InputError("visc must be positive")
        self.config = config
        full = _retained_modes(config.K, config.truncation)
        half_mask = (full[:, 0] > 0) | ((full[:, 0] == 0) & (full[:, 1] > 0))
        self.half = full[half_mask]
        self.full = full
        index = {tuple(k): i for i, k in enumerate(self.half)}
        # full mode i -> (half index, +1 if representative else -1 meaning -conj)
        self._full_src = np.array([index[tuple(k)] if m else index[tuple(-k)]
                                   for k, m in zip(full, half_mask)])
        self._full_is_rep = half_mask
        self.dim = 2 * len(self.half)
        self.ksq = np.sum(self.half ** 2, axis=1).astype(float)
        perp = np.stack([-full[:, 1], full[:, 0]], axis=1).astype(float)
        self.e_full = perp / np.linalg.norm(perp, axis=1, keepdims=True)

        full_index = {tuple(k): i for i, k in enumerate(full)}
        p_idx, q_idx, k_idx = [], [], []
        for h, k in enumerate(self.half):
            q = k[None, :] - full
            for i, qq in enumerate(map(tuple, q)):
                j = full_index.get(qq)
                if j is not None:
                    p_idx.append(i)
                    q_idx.append(j)
                    k_idx.append(h)
        n_triads = len(p_idx)
        if n_triads > config.max_triads:
            raise ResourceError(f"{n_triads} triads exceed budget {config.max_triads}")
        self.n_triads = n_triads
        self._p = np.array(p_idx, dtype=np.intp)
        self._q = np.array(q_idx, dtype=np.intp)
        kh = np.array(k_idx, dtype=np.intp)
        e_half = self.e_full[half_mask]
        qvec = full[self._q].astype(float)
        # (u.grad v)_k = sum_{p+q=k} i (u_p . q) v_q, then project on e_k
        self._w = 1j * np.sum(self.e_full[self._p] * qvec, axis=1) \
            * np.sum(self.e_full[self._q] * e_half[kh], axis=1)
        self._scatter = sp.csr_matrix((np.ones(n_triads), (kh, np.arange(n_triads))),
                                      shape=(len(self.half), n_triads))
        # |u|^4 has modes up to 4K; 4K + 1 points make the grid mean exact
        self.grid_n = max(4 * config.K + 1, 8)

    # coordinate maps -------------------------------------------------------
    def to_half(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., 0::2] + 1j * x[..., 1::2]) / SQRT2

    def from_half(self, c):
        out = np.empty(c.shape[:-1] + (2 * c.shape[-1],))
        out[..., 0::2] = SQRT2 * c.real
        out[..., 1::2] = SQRT2 * c.imag
        return out

    def to_full(self, x):
        c = self.to_half(x)[..., self._full_src]
        return np.where(self._full_is_rep, c, -np.conj(c))

    def velocity_hat(self, x):
        """Fourier velocity vectors for every retained mode, shape (..., F, 2)."""
        return self.to_full(x)[..., None] * self.e_full

    def velocity_field(self, x):
        """Velocity on the uniform collocation grid, shape (..., 2, N, N)."""
        N = self.grid_n
        uh = self.velocity_hat(x)
        grid = np.zeros(uh.shape[:-2] + (2, N, N), dtype=complex)
        kx, ky = self.full[:, 0] % N, self.full[:, 1] % N
        grid[..., 0, kx, ky] = uh[..., 0]
        grid[..., 1, kx, ky] = uh[..., 1]
        return np.fft.ifft2(grid, axes=(-2, -1)).real * (N * N)

    # model routines --------------------------------------------------------
    def bilinear(self, u, v):
        cu = self.to_full(u)
        cv = self.to_full(v)
        batch = np.broadcast_shapes(cu.shape[:-1], cv.shape[:-1])
        prod = np.broadcast_to(cu[..., self._p] * cv[..., self._q] * self._w,
                               batch + (self.n_triads,))
        flat = prod.reshape(-1, self.n_triads)
        out = (self._scatter @ flat.T).T
        return self.from_half(out.reshape(batch + (len(self.half),)))

    def l4_norm(self, v):
        field = self.velocity_field(v)
        speed2 = np.sum(field ** 2, axis=-3)
        return np.mean(speed2 ** 2, axis=(-2, -1)) ** 0.25


def build_nse2d(config: Nse2dConfig) -> ModelSpec:
    """Spectral Galerkin 2D Navier-Stokes as a :class:`ModelSpec`.

    A = visc * (-Laplacian), Q-norm = discrete L^4 norm of the velocity on a
    (4K+1)^2 grid, exact for the truncated field.  a0 = sqrt(sum_k 1/lam_k)
    is a proven bound: |u|_inf is at most sum |c_k| <= sqrt(sum 1/lam_k) ||u||,
    and |u|_L4^2 <= |u|_inf |u|.
    """
    g = Nse2dGalerkin(config)
    lam = config.visc * np.repeat(g.ksq, 2)
    a0 = float(np.sqrt(2.0 * np.sum(1.0 / (config.visc * g.ksq))))
    return ModelSpec(
        dim=g.dim,
        a_eigenvalues=lam,
        bilinear_eval=g.bilinear,
        q_norm_eval=g.l4_norm,
        a0=a0,
        label=f"nse2d-K{config.K}",
        info={"galerkin": g, "config": config},
    )
