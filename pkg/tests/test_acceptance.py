"""Acceptance suite: one verdict line per criterion, at the stated tolerances."""

import time
from pathlib import Path

import numpy as np
import pytest

from mdplab.cli import main, run_configured
from mdplab.config import parse_config
from mdplab.model import verify_assumptions
from mdplab.models import LinearConfig, Nse2dConfig, SabraConfig, build_linear, build_nse2d, \
    build_sabra
from mdplab.noise import Control, JumpCoefficient, MarkSpace, Tilt, girsanov_log_weight, \
    q_functional, sample_controlled_prm
from mdplab.rate import endpoint_rate
from mdplab.solvers import LinearizedFlow, energy_defect, evolve_deterministic, solve_skeleton
from mdplab.streams import stream
from mdplab.timegrid import TimeGrid

from test_rate import sigma_closed_form, sigma_quadrature

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(name):
    t0 = time.perf_counter()
    rep = run_configured(parse_config(CONFIGS / f"{name}.toml"))
    return rep, time.perf_counter() - t0


def _crit(rep, name):
    return next(c for c in rep.criteria if c.name == name)


def _unit_u0(model, seed=0):
    u = stream(seed, 0, "u0").standard_normal(model.dim) / np.sqrt(model.a_eigenvalues)
    return u / np.linalg.norm(u)


# --------------------------------------------------------------------------


def test_c01_assumption_suite(verdict):
    t0 = time.perf_counter()
    reps = [verify_assumptions(build_nse2d(Nse2dConfig(K=6)), n_samples=1000),
            verify_assumptions(build_sabra(SabraConfig(n_shells=16)), n_samples=1000)]
    dt = time.perf_counter() - t0
    worst = max(r[c].max_rel_defect for r in reps for c in ("skew_symmetry", "diagonal_null"))
    ok = worst <= 1e-10 and dt <= 10.0
    verdict(1, "assumption suite NSE2D K=6, Sabra N=16",
            ok, f"max rel defect {worst:.2e} (<= 1e-10), {dt:.2f} s (<= 10 s)")
    assert ok


def test_c02_energy_law(verdict):
    m = build_nse2d(Nse2dConfig(K=4))
    u0 = _unit_u0(m)
    defects, bounded = [], True
    for h in (2e-3, 1e-3):
        traj = evolve_deterministic(m, u0, TimeGrid.uniform(1.0, h))
        d = energy_defect(m, traj)
        defects.append(d)
        bounded &= bool(np.max(np.sum(traj.states ** 2, axis=1)) <= u0 @ u0 + d)
    ratio = defects[0] / defects[1]
    ok = 1.7 <= ratio <= 2.3 and bounded
    verdict(2, "energy law NSE2D K=4", ok,
            f"defect ratio {ratio:.4f} in [1.7, 2.3], sup|u|^2 <= |u0|^2 + defect: {bounded}")
    assert ok


def test_c03_skeleton_linearity(verdict):
    m = build_nse2d(Nse2dConfig(K=4))
    space = MarkSpace(np.full(m.dim, 0.0125))
    g = JumpCoefficient.affine(space, np.eye(m.dim))
    grid = TimeGrid.uniform(1.0, 1e-3)
    path = evolve_deterministic(m, _unit_u0(m), grid)
    rng = np.random.default_rng(0)
    phi = Control(grid, rng.uniform(-1, 1, (grid.M, m.dim)))
    chi = Control(grid, rng.uniform(-1, 1, (grid.M, m.dim)))
    alpha, beta = 0.7, -1.9
    t0 = time.perf_counter()
    flow = LinearizedFlow(m, g, space, path, grid)  # one skeleton map, three evaluations
    lhs = solve_skeleton(m, g, space, alpha * phi + beta * chi, path, grid, flow).states
    rhs = (alpha * solve_skeleton(m, g, space, phi, path, grid, flow).states
           + beta * solve_skeleton(m, g, space, chi, path, grid, flow).states)
    dt = time.perf_counter() - t0
    rel = np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs))
    ok = rel <= 1e-12 and dt <= 1.0
    verdict(3, "skeleton linearity NSE2D K=4", ok,
            f"max rel defect {rel:.2e} (<= 1e-12), {dt:.2f} s (<= 1 s)")
    assert ok


def test_c04_endpoint_rate_oracle(verdict):
    # the closed-form Sigma is checked against quadrature first
    lam, G, nu = np.array([1.0, 2.5]), np.diag([1.0, 0.7]), np.array([1.0, 0.5])
    quad_ok = np.allclose(np.diag(sigma_quadrature(lam, G, nu, 1.0)),
                          sigma_closed_form(lam, G, nu, 1.0), rtol=1e-12)
    errs = []
    for lam, G, nu, x in [(np.ones(1), np.ones((1, 1)), np.ones(1), np.ones(1)),
                          (lam, G, nu, np.array([0.8, -0.3]))]:
        m = build_linear(LinearConfig(tuple(lam)))
        space = MarkSpace(nu)
        g = JumpCoefficient.affine(space, G)
        grid = TimeGrid.uniform(1.0, 2.5e-7)
        res = endpoint_rate(m, g, space, evolve_deterministic(m, np.zeros(m.dim), grid), x, grid)
        exact = 0.5 * np.sum(x ** 2 / sigma_closed_form(lam, G, nu, 1.0))
        errs.append(abs(res.rate / exact - 1))
        if m.dim == 1:
            scalar = res.rate
    ok = quad_ok and max(errs) <= 1e-6 and abs(scalar - 1.15652) < 5e-6
    verdict(4, "endpoint-rate oracle (h = 2.5e-7)", ok,
            f"max rel error {max(errs):.2e} (<= 1e-6), I_1(1) = {scalar:.7f}, "
            f"Sigma closed form vs quadrature: {quad_ok}")
    assert ok


def test_c05_q_taylor_link(verdict):
    grid = TimeGrid.uniform(1.0, 0.01)
    space = MarkSpace(np.array([1.0, 0.5, 2.0]))
    a, worst = 1e-3, 0.0
    rng = np.random.default_rng(5)
    for _ in range(20):
        phi = Control(grid, rng.uniform(-2, 2, (grid.M, space.K)))
        half = 0.5 * phi.norm2_sq(space)
        q = q_functional(Control(grid, 1.0 + a * phi.values), space)
        worst = max(worst, abs(q / a ** 2 - half) / half)
    ok = worst <= 1e-2
    verdict(5, "Q-functional Taylor link a = 1e-3", ok, f"max rel error {worst:.2e} (<= 1e-2)")
    assert ok


def test_c06_girsanov_unbiasedness(verdict):
    grid = TimeGrid.uniform(1.0, 0.1)
    space = MarkSpace(np.array([1.0, 0.5]))
    vals = np.where(np.arange(grid.M)[:, None] % 2 == 0, [1.8, 0.6], [0.7, 1.5])
    psi = Tilt(grid, vals, 2.0)
    eps, R = 0.1, 10_000
    t0 = time.perf_counter()
    est = np.empty(R)
    for r in range(R):
        s = sample_controlled_prm(space, eps, psi, stream(0, r, "girsanov"))
        est[r] = s.count * np.exp(girsanov_log_weight(s, psi, eps, space))
    dt = time.perf_counter() - t0
    exact = space.total_mass * 1.0 / eps
    se = est.std(ddof=1) / np.sqrt(R)
    z = abs(est.mean() - exact) / se
    ok = z <= 3 and dt <= 30
    verdict(6, "Girsanov unbiasedness eps = 0.1", ok,
            f"IS mean {est.mean():.4f} vs {exact:.4f}, {z:.2f} SE (<= 3), {dt:.1f} s (<= 30 s)")
    assert ok


def test_c07_lln_linear(verdict):
    rep, dt = _run("linear-lln")
    slope = rep.summary["slope_sup"]
    ok = 0.8 <= slope <= 1.2
    verdict(7, "LLN slope, linear model", ok,
            f"slope {slope:.4f} +- {rep.summary['slope_se']:.4f} in [0.8, 1.2], {dt:.1f} s")
    assert ok


def test_c07_lln_nse2d(verdict):
    rep, dt = _run("nse2d-lln")
    mono, ratio = _crit(rep, "monotone"), rep.summary["final_over_initial"]
    ok = mono.passed and ratio <= 0.01
    verdict(7, "LLN decay, NSE2D K=4", ok,
            f"monotone {mono.passed}, final/initial {ratio:.4f} (<= 0.01), "
            f"slope {rep.summary['slope_sup']:.4f}, {dt:.1f} s")
    assert ok


@pytest.mark.parametrize("name", ["linear-mdp1", "nse2d-mdp1"])
def test_c08_mdp1(verdict, name):
    rep, dt = _run(name)
    e = {r["n"]: r["e_n"] for r in rep.rows}
    ratio = e[64] / e[1]
    ok = ratio <= 0.1 and dt <= 120
    verdict(8, f"MDP-1 weak-null perturbations, {name.split('-')[0]}", ok,
            f"e_64 / e_1 = {ratio:.4f} (<= 0.1), {dt:.1f} s (<= 120 s)")
    assert ok


def test_c09_mdp2(verdict):
    rep, dt = _run("linear-mdp2")
    ratio = rep.summary["final_over_initial"]
    mono, lemma = _crit(rep, "monotone"), _crit(rep, "lemma_bounded")
    ok = mono.passed and ratio <= 0.1 and lemma.passed and dt <= 600
    verdict(9, "MDP-2 controlled fluctuation, linear phi = 1", ok,
            f"monotone {mono.passed}, final/initial {ratio:.4f} (<= 0.1), "
            f"lemma slope {rep.summary['lemma_slope']:.3f} (>= -0.1), {dt:.1f} s (<= 600 s)")
    assert ok


def test_c10_tail_exponent(verdict):
    rep, dt = _run("linear-tail")
    rate_rel = rep.summary["rate_rel_error"]
    var = _crit(rep, "is_variance")
    last = rep.rows[-1]
    ok = rate_rel <= 0.3 and var.passed and dt <= 600
    verdict(10, "tail exponent x = 1, delta = 0.25", ok,
            f"r_eps {last['r_is']:.4f} vs I_delta {rep.summary['I_delta']:.4f}, "
            f"rel error {rate_rel:.3f} (<= 0.3), IS var <= naive: {var.passed}, "
            f"{dt:.1f} s (<= 600 s)")
    assert ok


SMALL_BASE = """
[model]
kind = "linear-test"
u0 = [{u0}]

[scale]
epsilon = [0.0625, 0.015625]

[solver]
h = 0.002

[experiment]
"""

SMALL = {
    "lln": 'name = "lln"\nreplicas = 200\nchunk_size = 64\n',
    "mdp1": 'name = "mdp1"\nfreqs = [1, 4, 16]\n',
    "mdp2": 'name = "mdp2"\nreplicas = 200\nchunk_size = 64\n',
    "tail": 'name = "tail"\nreplicas = 500\nchunk_size = 128\ntarget = [1.0]\n',
}


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_c11_reproducibility(verdict, kind, tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL_BASE.format(u0=0.0 if kind == "tail" else 1.0) + SMALL[kind])
    for d in ("a", "b"):
        main(["experiment", "--config", str(path), "--out", str(tmp_path / d), "--quiet"])
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "registry.jsonl")
    same = len(files) == 2 and all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    verdict(11, f"byte-identical rerun, {kind}", same, ", ".join(files))
    assert same
