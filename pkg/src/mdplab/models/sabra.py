"""Sabra shell model of turbulence.

Shells n = 1..N with wavenumbers k_n = k0 * lam**n and complex velocities u_n.
The classical nonlinearity (with du/dt + B(u, u) = ...) is

    B(u, u)_n = -i (a k_{n+1} conj(u_{n+1}) u_{n+2}
                    + b k_n conj(u_{n-1}) u_{n+1}
                    - c k_{n-1} u_{n-1} u_{n-2}),

with u_{-1} = u_0 = u_{N+1} = u_{N+2} = 0 and a + b + c = 0.

The bilinear extension is built triad by triad from the trilinear form

    b(u, v, w) = sum_m k_{m+1} Re(i F_m(u, v, w)),
    F_m = -c (conj(v_m) conj(u_{m+1}) w_{m+2} - conj(w_m) conj(u_{m+1}) v_{m+2})
          -b (conj(v_m) conj(w_{m+1}) u_{m+2} - conj(w_m) conj(v_{m+1}) u_{m+2}),

which is antisymmetric in (v, w) by construction and reduces to the
classical term on the diagonal exactly when a + b + c = 0.  Reading off the
coefficient of conj(w_n) gives

    B(u, v)_n = i c k_{n-1} v_{n-2} u_{n-1}
                + i k_{n+1} (c conj(u_{n+1}) v_{n+2} + b conj(v_{n+1}) u_{n+2})
                - i b k_n conj(v_{n-1}) u_{n+1}.

Real coordinates interleave (Re u_n, Im u_n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..model import ModelSpec


@dataclass(frozen=True)
class SabraConfig:
    n_shells: int = 16
    k0: float = 1.0
    lam: float = 2.0
    visc: float = 1e-3
    coeff_a: float = 1.0
    coeff_b: float = -0.5
    coeff_c: float = -0.5
    boundary: str = "zero"  # "broken" wraps shells periodically (negative control)


def _to_complex(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def _to_real(z):
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


class SabraOperator:
    def __init__(self, config: SabraConfig):
        N = config.n_shells
        if N < 1:
            raise InputError("n_shells must be >= 1")
        if not config.lam > 1:
            raise InputError("lam must exceed 1")
        if not (config.k0 > 0 and config.visc > 0):
            raise InputError("k0 and visc must be positive")
        if abs(config.coeff_a + config.coeff_b + config.coeff_c) > 1e-12:
            raise InputError("Sabra coefficients must satisfy a + b + c = 0")
        if config.boundary not in ("zero", "broken"):
            raise InputError(f"unknown boundary convention {config.boundary!r}")
        self.config = config
        self.N = N
        # k_n for n = -1 .. N+2, padded index p = n + 1
        self.k_pad = config.k0 * config.lam ** np.arange(-1, N + 3, dtype=float)
        self.k = self.k_pad[2:N + 2]

    def _pad(self, z):
        N = self.N
        out = np.zeros(z.shape[:-1] + (N + 4,), dtype=complex)
        out[..., 2:N + 2] = z
        if self.config.boundary == "broken":
            out[..., 0:2] = z[..., N - 2:N] if N >= 2 else 0.0
            out[..., N + 2:N + 4] = z[..., 0:2] if N >= 2 else 0.0
        return out

    def bilinear_complex(self, u, v):
        N, b, c = self.N, self.config.coeff_b, self.config.coeff_c
        U, V = self._pad(u), self._pad(v)
        kp = self.k_pad
        n = np.arange(2, N + 2)  # padded positions of shells 1..N
        return (1j * c * kp[n - 1] * V[..., n - 2] * U[..., n - 1]
                + 1j * kp[n + 1] * (c * np.conj(U[..., n + 1]) * V[..., n + 2]
                                    + b * np.conj(V[..., n + 1]) * U[..., n + 2])
                - 1j * b * kp[n] * np.conj(V[..., n - 1]) * U[..., n + 1])

    def classical(self, u):
        """The textbook Sabra nonlinearity B(u, u), written independently."""
        N, cfg = self.N, self.config
        U = self._pad(u)
        kp = self.k_pad
        n = np.arange(2, N + 2)
        return -1j * (cfg.coeff_a * kp[n + 1] * np.conj(U[..., n + 1]) * U[..., n + 2]
                      + cfg.coeff_b * kp[n] * np.conj(U[..., n - 1]) * U[..., n + 1]
                      - cfg.coeff_c * kp[n - 1] * U[..., n - 1] * U[..., n - 2])

    def bilinear(self, u, v):
        return _to_real(self.bilinear_complex(_to_complex(u), _to_complex(v)))

    def l4_norm(self, v):
        z = _to_complex(v)
        return np.sum(np.abs(z) ** 4, axis=-1) ** 0.25


def build_sabra(config: SabraConfig) -> ModelSpec:
    """Sabra shell model as a :class:`ModelSpec`.

    Q-norm is (sum |u_n|^4)^(1/4); a0 = 1/sqrt(visc k_1^2) bounds the
    interpolation ratio since sqrt(sum |u_n|^4) <= max|u_n| |u| and
    max|u_n| <= ||u|| / sqrt(lam_min).
    """
    op = SabraOperator(config)
    lam = np.repeat(config.visc * op.k ** 2, 2)
    return ModelSpec(
        dim=2 * config.n_shells,
        a_eigenvalues=lam,
        bilinear_eval=op.bilinear,
        q_norm_eval=op.l4_norm,
        a0=float(1.0 / np.sqrt(lam.min())),
        label=f"sabra-N{config.n_shells}",
        info={"operator": op, "config": config},
    )
