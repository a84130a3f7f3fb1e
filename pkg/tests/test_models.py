import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdplab.errors import InputError, ResourceError
from mdplab.model import ModelSpec, apply_A, trilinear, verify_assumptions
from mdplab.models import (LinearConfig, Nse2dConfig, Nse2dGalerkin, SabraConfig, SabraOperator,
                           build_linear, build_nse2d, build_sabra)

seeds = st.integers(0, 2**32 - 1)


def _rand(model, seed, k=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((k, model.dim))


# --------------------------------------------------------------------------
# ModelSpec


def test_modelspec_rejects_nonpositive_eigenvalues():
    with pytest.raises(InputError):
        ModelSpec(2, np.array([1.0, 0.0]), lambda u, v: 0 * u, lambda v: v[..., 0], 1.0, "x")


def test_modelspec_rejects_shape_mismatch():
    with pytest.raises(InputError):
        ModelSpec(3, np.array([1.0, 2.0]), lambda u, v: 0 * u, lambda v: v[..., 0], 1.0, "x")


def test_check_state_dimension():
    m = build_linear(LinearConfig((1.0, 2.0)))
    with pytest.raises(InputError):
        m.check_state(np.zeros(3))


def test_apply_A_and_norms():
    m = build_linear(LinearConfig((1.0, 4.0)))
    u = np.array([3.0, 1.0])
    assert np.allclose(apply_A(m, u), [3.0, 4.0])
    assert np.isclose(m.h_norm(u), np.sqrt(10.0))
    assert np.isclose(m.v_norm(u), np.sqrt(9.0 + 4.0))


# --------------------------------------------------------------------------
# NSE2D


def test_nse2d_mode_count_and_eigenvalues():
    g = Nse2dGalerkin(Nse2dConfig(K=1))
    # square truncation K=1: 8 nonzero modes, 4 representatives, 8 real coordinates
    assert len(g.full) == 8 and len(g.half) == 4 and g.dim == 8
    m = build_nse2d(Nse2dConfig(K=1, visc=0.1))
    assert np.allclose(np.sort(m.a_eigenvalues), np.sort(0.1 * np.repeat(g.ksq, 2)))


def test_nse2d_disk_truncation_is_smaller():
    sq = Nse2dGalerkin(Nse2dConfig(K=3))
    disk = Nse2dGalerkin(Nse2dConfig(K=3, truncation="disk"))
    assert disk.dim < sq.dim
    assert np.all(np.sum(disk.full ** 2, axis=1) <= 9)


def test_nse2d_triad_budget():
    with pytest.raises(ResourceError):
        Nse2dGalerkin(Nse2dConfig(K=4, max_triads=10))


def test_nse2d_coordinates_roundtrip_and_isometry(nse_small):
    g = nse_small.info["galerkin"]
    x = np.random.default_rng(1).standard_normal(g.dim)
    assert np.allclose(g.from_half(g.to_half(x)), x)
    field = g.velocity_field(x)
    # mean-square velocity equals the Euclidean norm of the coordinates
    assert np.isclose(np.mean(np.sum(field ** 2, axis=0)), x @ x)
    # the reconstructed field is divergence free
    N = g.grid_n
    k = np.fft.fftfreq(N, 1.0 / N)
    uh = np.fft.fft2(field, axes=(-2, -1))
    div = 1j * k[:, None] * uh[0] + 1j * k[None, :] * uh[1]
    assert np.max(np.abs(div)) < 1e-9 * np.max(np.abs(uh))


def _pseudo_spectral_B(g, u, v):
    """Independent oracle: Leray-Galerkin projection of (u . grad) v on a fine grid."""
    N = 6 * g.config.K + 2
    def field(x):
        uh = g.velocity_hat(x)
        grid = np.zeros((2, N, N), dtype=complex)
        grid[:, g.full[:, 0] % N, g.full[:, 1] % N] = uh.T
        return grid
    uhat, vhat = field(u), field(v)
    k = np.fft.fftfreq(N, 1.0 / N)
    ux = np.fft.ifft2(uhat, axes=(-2, -1)) * N * N
    dv0 = np.fft.ifft2(1j * k[:, None] * vhat, axes=(-2, -1)) * N * N
    dv1 = np.fft.ifft2(1j * k[None, :] * vhat, axes=(-2, -1)) * N * N
    adv = ux[0] * dv0 + ux[1] * dv1  # shape (2, N, N)
    what = np.fft.fft2(adv.real, axes=(-2, -1)) / (N * N)
    half = g.half
    e = g.e_full[[np.flatnonzero((g.full == h).all(axis=1))[0] for h in half]]
    coef = np.sum(what[:, half[:, 0] % N, half[:, 1] % N].T * e, axis=1)
    return g.from_half(coef)


def test_nse2d_bilinear_matches_pseudo_spectral_oracle(nse_small):
    g = nse_small.info["galerkin"]
    rng = np.random.default_rng(7)
    u, v = rng.standard_normal((2, g.dim))
    assert np.allclose(nse_small.B(u, v), _pseudo_spectral_B(g, u, v), rtol=1e-10, atol=1e-10)


def test_nse2d_l4_norm_matches_fine_grid(nse_small):
    g = nse_small.info["galerkin"]
    x = np.random.default_rng(3).standard_normal(g.dim)
    N = 32
    uh = g.velocity_hat(x)
    grid = np.zeros((2, N, N), dtype=complex)
    grid[:, g.full[:, 0] % N, g.full[:, 1] % N] = uh.T
    f = np.fft.ifft2(grid, axes=(-2, -1)).real * N * N
    ref = np.mean(np.sum(f ** 2, axis=0) ** 2) ** 0.25
    assert np.isclose(nse_small.q_norm_eval(x), ref, rtol=1e-12)


def test_nse2d_batched_bilinear(nse_small):
    x = _rand(nse_small, 5, 4)
    batched = nse_small.B(x, x[::-1])
    single = np.stack([nse_small.B(a, b) for a, b in zip(x, x[::-1])])
    assert np.allclose(batched, single, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_nse2d_skew_symmetry_property(seed):
    m = build_nse2d(Nse2dConfig(K=2))
    u, v, w = _rand(m, seed)
    b1, b2 = trilinear(m, u, v, w), trilinear(m, u, w, v)
    scale = np.linalg.norm(m.B(u, v)) * np.linalg.norm(w) + 1e-300
    assert abs(b1 + b2) <= 1e-12 * scale


# --------------------------------------------------------------------------
# Sabra


def test_sabra_requires_energy_condition():
    with pytest.raises(InputError):
        SabraOperator(SabraConfig(coeff_a=1.0, coeff_b=-0.5, coeff_c=-0.4))


def test_sabra_eigenvalues():
    m = build_sabra(SabraConfig(n_shells=4, k0=1.0, lam=2.0, visc=0.01))
    k = 2.0 ** np.arange(1, 5)
    assert np.allclose(m.a_eigenvalues, np.repeat(0.01 * k ** 2, 2))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-2.0, 2.0))
def test_sabra_diagonal_matches_classical(seed, b):
    cfg = SabraConfig(n_shells=8, coeff_a=1.0, coeff_b=b, coeff_c=-1.0 - b)
    op = SabraOperator(cfg)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    assert np.allclose(op.bilinear_complex(z, z), op.classical(z), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_sabra_skew_symmetry_property(seed):
    m = build_sabra(SabraConfig(n_shells=10))
    u, v, w = _rand(m, seed)
    scale = np.linalg.norm(m.B(u, v)) * np.linalg.norm(w) + 1e-300
    assert abs(trilinear(m, u, v, w) + trilinear(m, u, w, v)) <= 1e-12 * scale


def test_sabra_broken_boundary_fails_skew_check():
    m = build_sabra(SabraConfig(n_shells=8, boundary="broken"))
    rep = verify_assumptions(m, n_samples=200)
    assert not rep["skew_symmetry"].passed


# --------------------------------------------------------------------------
# assumption checks


@pytest.mark.parametrize("builder", [
    lambda: build_linear(LinearConfig((1.0, 3.0))),
    lambda: build_nse2d(Nse2dConfig(K=3)),
    lambda: build_sabra(SabraConfig(n_shells=12)),
])
def test_verify_assumptions_passes_for_shipped_models(builder):
    rep = verify_assumptions(builder(), n_samples=300)
    assert rep.passed, rep.to_dict()
    assert rep["interpolation"].constant_estimate <= builder().a0


def test_verify_assumptions_detects_non_skew_operator():
    m = ModelSpec(2, np.ones(2), lambda u, v: np.stack([u[..., 0] * v[..., 0],
                                                        0 * u[..., 0]], axis=-1),
                  lambda v: np.sum(v ** 4, axis=-1) ** 0.25, 1.0, "bad")
    rep = verify_assumptions(m, n_samples=50)
    assert not rep["skew_symmetry"].passed and not rep["diagonal_null"].passed


def test_verify_assumptions_detects_bad_a0():
    m = build_linear(LinearConfig((1.0,)))
    bad = ModelSpec(1, m.a_eigenvalues, m.bilinear_eval, m.q_norm_eval, 1e-3, "bad-a0")
    assert not verify_assumptions(bad, n_samples=20)["interpolation"].passed


def test_verify_assumptions_is_seeded(sabra_small):
    a = verify_assumptions(sabra_small, n_samples=50, rng_seed=4).to_dict()
    b = verify_assumptions(sabra_small, n_samples=50, rng_seed=4).to_dict()
    assert a == b
