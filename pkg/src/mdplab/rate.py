"""Quadratic rate functions of the skeleton dynamics.

The endpoint map L: phi -> Y^phi(T) is linear, so the cheapest control
reaching x solves a linear-quadratic problem:

    I_T(x) = min { 1/2 ||phi||_2^2 : L phi = x } = 1/2 <x, G^{-1} x>,
    G = L L*,   phi* = L* G^{-1} x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, InputError
from .model import ModelSpec
from .noise import Control, DeviationScale, JumpCoefficient, MarkSpace, Tilt
from .solvers import LinearizedFlow, Trajectory
from .timegrid import TimeGrid

REACHABILITY_RTOL = 1e-12
NULL_COMPONENT_TOL = 1e-8


def rate_of_control(phi: Control, space: MarkSpace) -> float:
    """1/2 ||phi||_2^2."""
    return 0.5 * phi.norm2_sq(space)


@dataclass
class EndpointRateResult:
    target: np.ndarray
    rate: float
    phi_star: Control | None
    gramian_condition: float
    cg_iterations: int
    residual: float
    reachable: bool = True
    gramian: np.ndarray | None = None
    gramian_asymmetry: float = 0.0

    def to_dict(self) -> dict:
        return {"target": self.target.tolist(), "rate": self.rate,
                "cg_iterations": self.cg_iterations, "residual": self.residual,
                "gramian_condition": self.gramian_condition, "reachable": self.reachable}


def gramian(flow: LinearizedFlow) -> np.ndarray:
    """Dense controllability Gramian L L*, assembled from n batched adjoint sweeps."""
    n = flow.model.dim
    ctrl = flow.adjoint_control(np.eye(n))  # (M, K, n): column i is L* e_i
    return flow.endpoint(ctrl).T  # row i of endpoint batch = L L* e_i


def _apply_gramian(flow, y):
    return flow.endpoint(flow.adjoint_control(y))


def endpoint_rate(model: ModelSpec, g: JumpCoefficient, space: MarkSpace, u0_path: Trajectory,
                  x, grid: TimeGrid, cg_tol: float = 1e-10, method: str = "cg",
                  maxiter: int | None = None, flow: LinearizedFlow | None = None
                  ) -> EndpointRateResult:
    """Endpoint rate I_T(x) and its optimal control.

    ``method="cg"`` solves G y = x matrix-free (one adjoint and one forward
    sweep per iteration); ``method="dense"`` solves with the assembled
    Gramian.  The dense Gramian is always formed for diagnostics (condition
    number, reachability test).
    """
    x = model.check_state(x, "x")
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise InputError("target must be a finite state vector")
    flow = flow or LinearizedFlow(model, g, space, u0_path, grid)
    G = gramian(flow)
    asym = np.max(np.abs(G - G.T)) / max(np.max(np.abs(G)), 1e-300)
    Gs = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(Gs)
    cond = float(w[-1] / w[0]) if w[0] > 0 else float("inf")
    n = model.dim
    xx = float(x @ x)
    if xx == 0.0:
        return EndpointRateResult(x, 0.0, Control.zeros(grid, space.K), cond, 0, 0.0, True, G)
    rayleigh = float(x @ Gs @ x) / xx
    null = V[:, w <= REACHABILITY_RTOL * max(w[-1], 0.0)]
    off_range = float(np.linalg.norm(null.T @ x)) / np.sqrt(xx) if null.size else 0.0
    if rayleigh < REACHABILITY_RTOL * np.trace(Gs) / n or off_range > NULL_COMPONENT_TOL:
        return EndpointRateResult(x, float("inf"), None, cond, 0, float("nan"), False, G)

    iters = 0
    if method == "dense":
        y = np.linalg.solve(Gs, x)
    elif method == "cg":
        def cb(_):
            nonlocal iters
            iters += 1

        op = LinearOperator((n, n), matvec=lambda v: _apply_gramian(flow, v), dtype=float)
        y, info = cg(op, x, rtol=cg_tol, atol=0.0, maxiter=maxiter or 10 * n + 10, callback=cb)
        if info != 0:
            res = float(np.linalg.norm(_apply_gramian(flow, y) - x) / np.linalg.norm(x))
            raise ConvergenceError(f"CG did not converge (info={info})", residual=res,
                                   iterations=iters)
    else:
        raise InputError(f"unknown method {method!r}")
    phi = Control(grid, flow.adjoint_control(y))
    residual = float(np.linalg.norm(flow.endpoint(phi.values) - x) / np.sqrt(xx))
    return EndpointRateResult(x, rate_of_control(phi, space), phi, cond, iters, residual,
                              True, G, float(asym))


@dataclass
class TiltResult:
    tilt: Tilt
    clipping_fraction: float


def optimal_tilt(phi_star: Control, scale: DeviationScale, bound: float) -> TiltResult:
    """psi = 1 + a(eps) phi*, clipped into [1/n, n]."""
    raw = 1.0 + scale.a_of_eps * phi_star.values
    lo, hi = 1.0 / bound, float(bound)
    clipped = np.clip(raw, lo, hi)
    frac = float(np.mean((raw < lo) | (raw > hi)))
    return TiltResult(Tilt(phi_star.grid, clipped, bound), frac)


def ball_rate(model, g, space, u0_path, x, delta, grid, **kw) -> tuple[float, np.ndarray]:
    """Rate of the ball {|y - x| <= delta} via its point nearest the origin.

    Exact for the quadratic rate only when the Gramian is isotropic; used as
    the reference exponent of the tail experiment.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r <= delta:
        return 0.0, np.zeros_like(x)
    near = x * (1.0 - delta / r)
    res = endpoint_rate(model, g, space, u0_path, near, grid, **kw)
    return res.rate, near
