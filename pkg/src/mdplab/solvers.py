"""Time integration: deterministic, stochastic, skeleton and controlled equations.

All schemes are semi-implicit Euler: A is treated implicitly (a diagonal
solve), every other term explicitly at the left endpoint of the step,

    (I + dt A) y_new = y + dt f(t, y).

Stochastic runs use jump-adapted grids: jump times are inserted exactly into
the base grid, the state is advanced to the jump time, the left limit is
stored, and then the jump is applied.  Ensembles of replicas are advanced
together; in each base cell the k-th jumps of all replicas are processed in
one vectorized sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import InputError, SolverError
from .model import ModelSpec
from .noise import (Control, DeviationScale, JumpCoefficient, MarkSpace, PointProcessSample,
                    Tilt, sample_controlled_prm, sample_prm)
from .timegrid import TimeGrid

DEFAULT_EPS_CEILING = 0.5
J_CACHE_BUDGET = 30_000_000  # floats


@dataclass
class Trajectory:
    """A cadlag path on its nodes.

    At a jump time the node appears twice: the left limit (flag False)
    followed by the post-jump value (flag True).
    """

    times: np.ndarray
    states: np.ndarray
    jump_flags: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def sup_h(self) -> float:
        return float(np.max(np.linalg.norm(self.states, axis=1)))

    def l2_v(self, eigenvalues) -> float:
        """Left-endpoint quadrature of (int ||x||^2 dt)^(1/2)."""
        dt = np.diff(self.times)
        vsq = np.sum(np.asarray(eigenvalues) * self.states[:-1] ** 2, axis=1)
        return float(np.sqrt(np.sum(vsq * dt)))

    def path_norm(self, eigenvalues) -> float:
        return max(self.sup_h(), self.l2_v(eigenvalues))

    def at_grid(self, grid: TimeGrid) -> np.ndarray:
        """Right-continuous values at the base nodes."""
        idx = np.searchsorted(self.times, grid.times, side="right") - 1
        if np.any(idx < 0) or not np.allclose(self.times[idx], grid.times, rtol=0, atol=1e-12):
            raise InputError("trajectory does not contain every base grid node")
        return self.states[idx]

    def check_jumps(self) -> bool:
        """Left limit + increment reproduces the stored post-jump value."""
        inc = self.meta.get("jump_increments")
        if inc is None:
            return True
        pos = np.nonzero(self.jump_flags)[0]
        return bool(np.array_equal(self.states[pos - 1] + inc, self.states[pos]))

    def to_csv(self, path, run_id: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if run_id is not None:
                fh.write(f"# run_id={run_id}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "jump_flag"] + [f"x_{i}" for i in range(self.dim)])
            for t, f, x in zip(self.times, self.jump_flags, self.states):
                w.writerow([repr(float(t)), int(f)] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        rows = []
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        if header[:2] != ["t", "jump_flag"]:
            raise InputError("not a trajectory CSV")
        for r in reader:
            rows.append([float(v) for v in r])
        arr = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls(arr[:, 0], arr[:, 2:], arr[:, 1].astype(bool))


# --------------------------------------------------------------------------
# batched jump-adapted engine


@dataclass
class System:
    """One component of a coupled ensemble integration.

    ``drift(j, t, y)`` returns the explicit part f; ``jump(j, t, y, marks)``
    the jump increment (None for systems that ignore the point process).
    """

    y0: np.ndarray
    drift: Callable
    jump: Callable | None = None


@dataclass
class PackedEvents:
    """Points of many replicas sorted by (cell, replica, time)."""

    replica: np.ndarray
    times: np.ndarray
    marks: np.ndarray
    rank: np.ndarray
    starts: np.ndarray

    @classmethod
    def pack(cls, samples: Sequence[PointProcessSample], grid: TimeGrid) -> "PackedEvents":
        R = len(samples)
        counts = np.array([s.count for s in samples], dtype=np.intp)
        if counts.sum() == 0:
            z = np.zeros(0)
            return cls(z.astype(np.intp), z, z.astype(np.intp), z.astype(np.intp),
                       np.zeros(grid.M + 1, dtype=np.intp))
        times = np.concatenate([s.times for s in samples])
        marks = np.concatenate([s.marks for s in samples]).astype(np.intp)
        replica = np.repeat(np.arange(R, dtype=np.intp), counts)
        cell = grid.cell_index(times)
        order = np.lexsort((times, replica, cell))
        times, marks, replica, cell = times[order], marks[order], replica[order], cell[order]
        key = cell.astype(np.int64) * R + replica
        new_group = np.ones(key.size, dtype=bool)
        new_group[1:] = key[1:] != key[:-1]
        group_start = np.maximum.accumulate(np.where(new_group, np.arange(key.size), 0))
        rank = np.arange(key.size) - group_start
        starts = np.searchsorted(cell, np.arange(grid.M + 1), side="left")
        return cls(replica, times, marks, rank, starts)


class Observer:
    """Hook interface for the ensemble engine (all methods optional)."""

    def node(self, kind, idx, j, t, ys):  # kind in {"start", "left", "jump", "grid"}
        pass

    def segment(self, idx, j, t, ys, dt):
        pass


def run_ensemble(lam, grid: TimeGrid, systems: Sequence[System], events: PackedEvents,
                 n_replicas: int, observers: Sequence[Observer] = ()) -> list[np.ndarray]:
    """Advance coupled systems over the base grid with exact jump insertion.

    Returns the terminal states, one (R, n) array per system.
    """
    lam = np.asarray(lam, dtype=float)
    R = n_replicas
    ys = [np.array(np.broadcast_to(s.y0, (R, lam.size)), dtype=float) for s in systems]
    times = grid.times
    cur = np.empty(R)
    everyone = slice(None)

    def step(idx, j, t_from, dt):
        for obs in observers:
            obs.segment(idx, j, t_from, [y[idx] for y in ys], dt)
        dtc = dt[:, None]
        for s, y in zip(systems, ys):
            yi = y[idx]
            f = s.drift(j, t_from, yi)
            new = (yi + dtc * f) / (1.0 + dtc * lam)
            if not np.all(np.isfinite(new)):
                raise SolverError(f"non-finite state in cell {j} (t={times[j]:.6g})")
            y[idx] = new

    all_idx = np.arange(R)
    for obs in observers:
        obs.node("start", all_idx, 0, np.zeros(R), ys)
    for j in range(grid.M):
        t0, t1 = times[j], times[j + 1]
        cur.fill(t0)
        lo, hi = events.starts[j], events.starts[j + 1]
        if hi > lo:
            ranks = events.rank[lo:hi]
            for k in range(int(ranks.max()) + 1):
                sel = lo + np.nonzero(ranks == k)[0]
                idx = events.replica[sel]
                tau = events.times[sel]
                marks = events.marks[sel]
                step(idx, j, cur[idx], tau - cur[idx])
                cur[idx] = tau
                for obs in observers:
                    obs.node("left", idx, j, tau, [y[idx] for y in ys])
                for s, y in zip(systems, ys):
                    if s.jump is not None:
                        y[idx] = y[idx] + s.jump(j, tau, y[idx], marks)
                for obs in observers:
                    obs.node("jump", idx, j, tau, [y[idx] for y in ys])
        step(everyone, j, cur.copy(), t1 - cur)
        for obs in observers:
            obs.node("grid", all_idx, j + 1, np.full(R, t1), ys)
    return ys


class Recorder(Observer):
    """Records every node of a single-replica run."""

    def __init__(self, system_index: int = 0):
        self.s = system_index
        self.t, self.x, self.flag, self.inc = [], [], [], []
        self._last_left = None

    def node(self, kind, idx, j, t, ys):
        y = ys[self.s]
        x = y[idx][0] if not isinstance(idx, slice) else y[0]
        tt = float(np.atleast_1d(t)[0])
        if kind == "grid" and self.t and self.t[-1] == tt:
            return  # zero-length final sub-step after a jump at a grid node
        if kind == "jump":
            self.inc.append(x - self._last_left)
        if kind == "left":
            self._last_left = x.copy()
        self.t.append(tt)
        self.x.append(x.copy())
        self.flag.append(kind == "jump")

    def trajectory(self, meta) -> Trajectory:
        meta = dict(meta)
        if self.inc:
            meta["jump_increments"] = np.array(self.inc)
        return Trajectory(np.array(self.t), np.array(self.x), np.array(self.flag, dtype=bool), meta)


class PathStats(Observer):
    """Per-replica sup_t |d|^2 and int ||d||^2 dt for a tracked difference d."""

    def __init__(self, n_replicas, lam, diff: Callable):
        self.lam = np.asarray(lam)
        self.diff = diff
        self.sup = np.zeros(n_replicas)
        self.integral = np.zeros(n_replicas)

    def node(self, kind, idx, j, t, ys):
        d = self.diff(j, ys)
        if isinstance(idx, slice):
            idx = np.arange(self.sup.size)
        self.sup[idx] = np.maximum(self.sup[idx], np.sum(d * d, axis=1))

    def segment(self, idx, j, t, ys, dt):
        d = self.diff(j, ys)
        contrib = np.sum(self.lam * d * d, axis=1) * dt
        if isinstance(idx, slice):
            self.integral += contrib
        else:
            self.integral[idx] += contrib

    @property
    def total(self):
        return self.sup + self.integral


# --------------------------------------------------------------------------
# single-path solvers


def _grid_from(grid) -> TimeGrid:
    if isinstance(grid, TimeGrid):
        return grid
    t = np.asarray(grid, dtype=float)
    return TimeGrid(float(t[-1]), float(np.max(np.diff(t))), t)


def energy_defect(model: ModelSpec, traj: Trajectory) -> float:
    """max_j | |u_j|^2 + 2 sum_{l<j} ||u_{l+1}||^2 dt_l - |u_0|^2 |."""
    x = traj.states
    e = np.sum(x * x, axis=1)
    v = np.sum(model.a_eigenvalues * x[1:] ** 2, axis=1) * np.diff(traj.times)
    acc = e - e[0]
    acc[1:] += 2.0 * np.cumsum(v)
    return float(np.max(np.abs(acc)))


def _deterministic_drift(model):
    B = model.bilinear_eval

    def drift(j, t, y):
        return -B(y, y)

    return drift


def evolve_deterministic(model: ModelSpec, u0, grid) -> Trajectory:
    """Semi-implicit Euler for du/dt + A u + B(u, u) = 0 on the given nodes."""
    grid = _grid_from(grid)
    u0 = model.check_state(u0, "u0")
    if u0.ndim != 1:
        raise InputError("u0 must be a single state vector")
    meta = {"model": model.label, "kind": "deterministic"}
    if model.is_linear:
        # B = 0: u_{j+1} = u_j / (1 + h_j A), a cumulative product
        factors = 1.0 / (1.0 + grid.dt[:, None] * model.a_eigenvalues[None, :])
        states = u0 * np.concatenate([np.ones((1, u0.size)), np.cumprod(factors, axis=0)])
        traj = Trajectory(grid.times.copy(), states, np.zeros(grid.times.size, bool), meta)
    else:
        rec = Recorder()
        run_ensemble(model.a_eigenvalues, grid, [System(u0, _deterministic_drift(model))],
                     PackedEvents.pack([], grid), 1, [rec])
        traj = rec.trajectory(meta)
    traj.meta["energy_defect"] = energy_defect(model, traj)
    return traj


def stochastic_system(model: ModelSpec, g: JumpCoefficient, space: MarkSpace,
                      scale: DeviationScale, u0) -> System:
    B = model.bilinear_eval
    eps = scale.epsilon
    nu = space.weights

    def drift(j, t, y):
        return -B(y, y) - g.compensator(t, y, nu)

    def jump(j, t, y, marks):
        return eps * g(t, y, marks)

    return System(np.asarray(u0, dtype=float), drift, jump)


def _check_eps(scale, eps_ceiling):
    if scale.epsilon > eps_ceiling:
        raise InputError(f"epsilon={scale.epsilon} exceeds the well-posedness ceiling {eps_ceiling}")


def _check_g(model, g, space):
    if g.dim != model.dim:
        raise InputError("jump coefficient dimension differs from model dimension")
    if g.n_marks != space.K:
        raise InputError("jump coefficient and mark space disagree on the number of marks")


def evolve_stochastic(model: ModelSpec, g: JumpCoefficient, space: MarkSpace,
                      scale: DeviationScale, u0, grid: TimeGrid, rng,
                      eps_ceiling: float = DEFAULT_EPS_CEILING) -> Trajectory:
    """Jump-adapted semi-implicit Euler for the small-noise equation.

    Between events the compensator drift -sum_k G(t, u, z_k) nu_k is added;
    at an event (tau, z) the state jumps by eps G(tau, u(tau-), z).
    """
    _check_eps(scale, eps_ceiling)
    _check_g(model, g, space)
    u0 = model.check_state(u0, "u0")
    sample = sample_prm(space, scale.epsilon, grid.T, rng)
    rec = Recorder()
    run_ensemble(model.a_eigenvalues, grid, [stochastic_system(model, g, space, scale, u0)],
                 PackedEvents.pack([sample], grid), 1, [rec])
    return rec.trajectory({"model": model.label, "kind": "stochastic",
                           "epsilon": scale.epsilon, "n_jumps": sample.count})


def _base_states(u0_path: Trajectory, grid: TimeGrid) -> np.ndarray:
    if u0_path.times.shape != grid.times.shape or not np.allclose(u0_path.times, grid.times,
                                                                 rtol=0, atol=1e-12):
        raise InputError("u0_path is not sampled on the given base grid")
    return u0_path.states


def controlled_system(model: ModelSpec, g: JumpCoefficient, space: MarkSpace,
                      scale: DeviationScale, u0_states: np.ndarray) -> System:
    """Drift and jumps of the rescaled deviation M = (u - u0)/a under a tilt.

    The two G-integrals (compensated jumps at the tilted intensity plus the
    control drift) combine to the drift -(1/a) sum_k G(t, a M + u0, z_k) nu_k.
    """
    B = model.bilinear_eval
    a, eps = scale.a_of_eps, scale.epsilon
    nu = space.weights

    def drift(j, t, m):
        base = u0_states[j]
        nonlin = a * B(m, m) + B(m, base) + B(base, m)
        return -nonlin - g.compensator(t, a * m + base, nu) / a

    def jump(j, t, m, marks):
        return (eps / a) * g(t, a * m + u0_states[j], marks)

    return System(np.zeros(model.dim), drift, jump)


def evolve_controlled_moderate(model: ModelSpec, g: JumpCoefficient, space: MarkSpace,
                               scale: DeviationScale, psi: Tilt, u0_path: Trajectory,
                               grid: TimeGrid, rng,
                               eps_ceiling: float = DEFAULT_EPS_CEILING) -> Trajectory:
    """Simulate M^psi driven by the tilted measure N^{psi/eps}, M(0) = 0."""
    _check_eps(scale, eps_ceiling)
    _check_g(model, g, space)
    if not psi.grid.same_as(grid):
        raise InputError("tilt must live on the base grid")
    u0_states = _base_states(u0_path, grid)
    sample = sample_controlled_prm(space, scale.epsilon, psi, rng)
    rec = Recorder()
    run_ensemble(model.a_eigenvalues, grid, [controlled_system(model, g, space, scale, u0_states)],
                 PackedEvents.pack([sample], grid), 1, [rec])
    return rec.trajectory({"model": model.label, "kind": "controlled",
                           "epsilon": scale.epsilon, "n_jumps": sample.count})


# --------------------------------------------------------------------------
# skeleton (linearized) dynamics and its adjoint


class LinearizedFlow:
    """Discrete skeleton map phi -> Y^phi and its exact transpose.

    Forward:  (I + h A) Y_{j+1} = Y_j - h J_j Y_j + h f_j,
              J_j Y = B(Y, u0_j) + B(u0_j, Y),
              f_j = sum_k G(t_j, u0_j, z_k) phi_jk nu_k.
    Adjoint:  P_M = p,  q_j = (I + h A)^{-1} P_{j+1},  P_j = q_j - h J_j^T q_j,
              (L* p)_jk = <G(t_j, u0_j, z_k), q_j>.
    """

    def __init__(self, model: ModelSpec, g: JumpCoefficient, space: MarkSpace,
                 u0_path: Trajectory, grid: TimeGrid):
        _check_g(model, g, space)
        self.model, self.g, self.space, self.grid = model, g, space, grid
        self.u0 = _base_states(u0_path, grid)
        t = grid.times[:-1]
        self.h = grid.dt
        self.d = 1.0 / (1.0 + self.h[:, None] * model.a_eigenvalues[None, :])  # (M, n)
        self.G = np.stack([g(t, self.u0[:-1], np.full(grid.M, k)) for k in range(space.K)],
                          axis=1)  # (M, K, n)
        self.uniform = bool(np.allclose(self.h, self.h[0], rtol=1e-8, atol=0))
        self._J = None
        if not model.is_linear and grid.M * model.dim ** 2 <= J_CACHE_BUDGET:
            # J is linear in u0_j, so contract basis Jacobians J(e_i) along the path
            n = model.dim
            basis = self._jacobian(np.eye(n))  # (n, n, n), basis[i] = J(e_i)
            self._J = (self.u0[:-1] @ basis.reshape(n, n * n)).reshape(grid.M, n, n)

    def _jacobian(self, u):
        """J(u) for u of shape (n,) or a stack (b, n); column i is J(u) e_i."""
        n = self.model.dim
        u = np.asarray(u)
        E = np.broadcast_to(np.eye(n), u.shape[:-1] + (n, n))
        base = np.broadcast_to(u[..., None, :], E.shape)
        cols = self.model.bilinear_eval(E, base) + self.model.bilinear_eval(base, E)
        return np.swapaxes(cols, -1, -2)

    def _assemble_J(self, j):
        return self._jacobian(self.u0[j])

    def J(self, j):
        return self._J[j] if self._J is not None else self._assemble_J(j)

    def forcing(self, phi_values) -> np.ndarray:
        """f_j for controls of shape (M, K) or (M, K, b); returns (M, n) or (M, b, n)."""
        w = phi_values * self.space.weights[:, None] if phi_values.ndim == 3 \
            else phi_values * self.space.weights
        if phi_values.ndim == 2:
            return np.einsum("jkn,jk->jn", self.G, w)
        return np.einsum("jkn,jkb->jbn", self.G, w)

    def forward(self, phi_values) -> np.ndarray:
        """Y on all base nodes: (M+1, n) or (M+1, b, n)."""
        f = self.forcing(np.asarray(phi_values, dtype=float))
        M = self.grid.M
        hf = self.h.reshape((M,) + (1,) * (f.ndim - 1)) * f
        if self.model.is_linear and self.uniform:
            # Y_{j+1} = d (Y_j + h f_j): a first-order recursion per coordinate
            flat = hf.reshape(M, -1)
            dflat = np.broadcast_to(self.d[0], hf.shape[1:]).reshape(-1)
            out = np.empty_like(flat)
            for c in range(flat.shape[1]):
                out[:, c] = lfilter([dflat[c]], [1.0, -dflat[c]], flat[:, c])
            y = out.reshape(hf.shape)
            zero = np.zeros((1,) + hf.shape[1:])
            return np.concatenate([zero, y], axis=0)
        Y = np.zeros((M + 1,) + f.shape[1:])
        for j in range(M):
            y = Y[j]
            if self.model.is_linear:
                rhs = y + hf[j]
            elif self._J is not None:
                rhs = y - self.h[j] * (y @ self._J[j].T) + hf[j]
            else:
                base = np.broadcast_to(self.u0[j], y.shape)
                B = self.model.bilinear_eval
                rhs = y - self.h[j] * (B(y, base) + B(base, y)) + hf[j]
            Y[j + 1] = self.d[j] * rhs
        return Y

    def adjoint(self, terminal) -> tuple[np.ndarray, np.ndarray]:
        """Backward sweep. Returns (P on nodes (M+1, ..., n), q per cell (M, ..., n))."""
        p = np.asarray(terminal, dtype=float)
        M = self.grid.M
        P = np.empty((M + 1,) + p.shape)
        q = np.empty((M,) + p.shape)
        P[M] = p
        if self.model.is_linear and self.uniform:
            steps = np.arange(M, 0, -1, dtype=float)  # M - j for j = 0..M-1
            logd = np.log(self.d[0])
            powers = np.exp(steps[:, None] * logd[None, :])  # d^(M-j)
            shape = (M,) + (1,) * (p.ndim - 1) + (-1,)
            q[:] = powers.reshape(shape) * p
            P[:M] = q
            return P, q
        for j in range(M - 1, -1, -1):
            qj = self.d[j] * P[j + 1]
            q[j] = qj
            if self.model.is_linear:
                P[j] = qj
            else:
                P[j] = qj - self.h[j] * (qj @ self.J(j))
        return P, q

    def adjoint_control(self, terminal) -> np.ndarray:
        """(L* p)_jk, shape (M, K) or (M, K, b) for batched terminals (b, n)."""
        _, q = self.adjoint(terminal)
        if q.ndim == 2:
            return np.einsum("jkn,jn->jk", self.G, q)
        return np.einsum("jkn,jbn->jkb", self.G, q)

    def endpoint(self, phi_values) -> np.ndarray:
        return self.forward(phi_values)[-1]


def solve_skeleton(model: ModelSpec, g: JumpCoefficient, space: MarkSpace, phi: Control,
                   u0_path: Trajectory, grid: TimeGrid,
                   flow: LinearizedFlow | None = None) -> Trajectory:
    """Skeleton solution Y^phi on the base grid, Y(0) = 0."""
    if not phi.grid.same_as(grid):
        raise InputError("control must live on the base grid")
    flow = flow or LinearizedFlow(model, g, space, u0_path, grid)
    Y = flow.forward(phi.values)
    return Trajectory(grid.times.copy(), Y, np.zeros(grid.M + 1, dtype=bool),
                      {"model": model.label, "kind": "skeleton"})


def linearized_adjoint_solve(model: ModelSpec, u0_path: Trajectory, terminal, grid: TimeGrid,
                             g: JumpCoefficient | None = None,
                             space: MarkSpace | None = None) -> Trajectory:
    """Backward adjoint of the skeleton dynamics with p(T) = terminal."""
    terminal = model.check_state(terminal, "terminal")
    space = space or MarkSpace(np.ones(1))
    g = g or JumpCoefficient.zero(space, model.dim)
    flow = LinearizedFlow(model, g, space, u0_path, grid)
    P, _ = flow.adjoint(terminal)
    return Trajectory(grid.times.copy(), P, np.zeros(grid.M + 1, dtype=bool),
                      {"model": model.label, "kind": "adjoint"})
