import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdtflow.deturck_transport import (boundary_pullback, boundary_pullback_check,
                                       convexity_monitor, deturck_vector_field,
                                       integrate_diffeo, interpolate_on_grid, jacobian,
                                       mean_curvature_check, pullback_metric, pullback_trace,
                                       ricci_flow_residual, tangency_residual)
from rdtflow.errors import BoundaryEscape, JacobianDegenerate, NotPositiveDefinite
from rdtflow.grid import FACES, ChartGrid
from rdtflow.ricci_deturck import Background, MuFunction, deturck_covector
from rdtflow.scenarios import flat_metric, s3_band_metric, warped_bowl_metric

from conftest import random_spd_field, smooth_metric

S3_H0 = -0.42279321873816176


@pytest.fixture(scope="module")
def band():
    return ChartGrid((8, 8, 9))


def zero_P(grid):
    return np.zeros(grid.shape + (3,))


# ------------------------------------------------------------ vector field

def test_vector_field_raise_lower_roundtrip(rng):
    g = random_spd_field(rng, (5, 5, 5), 3)
    P = rng.normal(size=(5, 5, 5, 3))
    Pv = deturck_vector_field(g, P)
    assert np.allclose(np.einsum("...ij,...j->...i", g, Pv), P, rtol=0, atol=1e-12)
    assert np.abs(deturck_vector_field(g, np.zeros_like(P))).max() == 0


def test_tangency_residual_reads_normal_component(band):
    Pv = zero_P(band)
    Pv[..., 0] = 3.0
    assert tangency_residual(Pv, band) == 0.0
    Pv[:, :, -1, 2] = -0.25
    assert tangency_residual(Pv, band) == 0.25


# ---------------------------------------------------------- interpolation

@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_interpolation_reproduces_affine_fields(a, b, c):
    grid = ChartGrid((6, 5, 7))
    x = grid.coords()
    f = (1.0 + 2.0 * x[..., 2])[..., None]
    pos = np.array([[a, b, c]])
    assert interpolate_on_grid(f, pos, grid)[0, 0] == pytest.approx(1.0 + 2.0 * c, abs=1e-12)


def test_interpolation_wraps_periodic_axes():
    grid = ChartGrid((8, 8, 5))
    x = grid.coords()
    f = np.sin(2 * np.pi * x[..., 0])[..., None]
    p = np.array([[0.25, 0.0, 0.5], [1.25, 0.0, 0.5], [-0.75, 0.0, 0.5]])
    vals = interpolate_on_grid(f, p, grid)[:, 0]
    assert np.allclose(vals, 1.0, atol=1e-12)


# --------------------------------------------------------------- transport

def test_zero_field_gives_identity(band):
    times = np.linspace(0, 0.1, 11)
    tr = integrate_diffeo([zero_P(band)] * len(times), times, band)
    for psi in tr.psi:
        assert np.array_equal(psi, band.coords())
    assert tr.min_det == [1.0] * len(times)


def test_constant_tangential_field_translates(band):
    v = np.array([0.3, -0.7, 0.0])
    P = np.broadcast_to(v, band.shape + (3,)).copy()
    times = np.linspace(0, 0.5, 21)
    tr = integrate_diffeo([P] * len(times), times, band)
    for t, psi in zip(times, tr.psi):
        assert np.abs(psi - (band.coords() - t * v)).max() <= 1e-12
    assert np.allclose(tr.min_det, 1.0, atol=1e-12)


def test_length_mismatch_rejected(band):
    with pytest.raises(ValueError):
        integrate_diffeo([zero_P(band)], [0.0, 0.1], band)


def test_boundary_escape_reported(band):
    P = zero_P(band)
    P[..., 2] = 1.0
    with pytest.raises(BoundaryEscape) as exc:
        integrate_diffeo([P, P], [0.0, 0.1], band)
    assert exc.value.info["node"][2] == 0


def test_small_overshoot_is_clamped(band):
    P = zero_P(band)
    P[..., 2] = 0.5 * band.h ** 2
    tr = integrate_diffeo([P, P], [0.0, 1.0], band)
    assert tr.psi[-1][..., 2].min() == 0.0


def test_fold_reported(band):
    x = band.coords()
    P = zero_P(band)
    P[..., 0] = np.sin(2 * np.pi * x[..., 0])
    with pytest.raises(JacobianDegenerate):
        integrate_diffeo([P, P], [0.0, 1.0], band)


# ---------------------------------------------------------------- pullback

def test_pullback_by_identity_is_exact(band):
    g = smooth_metric(band)
    assert np.array_equal(pullback_metric(g, band.coords(), band), g)


def test_pullback_linear_map_on_flat_band():
    grid = ChartGrid((8, 8, 9))
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.2, -0.1, 1.0]])
    psi = grid.coords() @ A
    g = pullback_metric(flat_metric(grid), psi, grid)
    assert np.allclose(g, A @ A.T, rtol=0, atol=1e-12)
    assert np.array_equal(g, np.swapaxes(g, -1, -2))


def test_pullback_rejects_orientation_reversal():
    grid = ChartGrid((8, 8, 9))
    psi = grid.coords().copy()
    psi[..., 0] = -psi[..., 0]
    with pytest.raises(JacobianDegenerate):
        pullback_metric(flat_metric(grid), psi, grid)


def test_pullback_rejects_indefinite_metric():
    grid = ChartGrid((8, 8, 9))
    g = flat_metric(grid)
    g[..., 1, 1] = -1.0
    with pytest.raises(NotPositiveDefinite):
        pullback_metric(g, grid.coords(), grid)


def test_jacobian_of_identity(band):
    assert np.allclose(jacobian(band.coords(), band), np.eye(3), atol=1e-14)


# ---------------------------------------------------------------- monitors

def test_ricci_residual_flat_trace(band):
    times = np.linspace(0, 0.01, 5)
    r = ricci_flow_residual([flat_metric(band)] * 5, times, band)
    assert np.isnan(r[0]) and np.isnan(r[-1])
    assert np.nanmax(r) <= 1e-8


def test_ricci_residual_exact_shrinking_trace():
    errs = []
    for N in (9, 17, 33):
        grid = ChartGrid((4, 4, N))
        g = s3_band_metric(grid)
        times = np.linspace(0, 0.01, 6)
        errs.append(np.nanmax(ricci_flow_residual([(1 - 4 * t) * g for t in times], times, grid)))
    h = 1.0 / np.array([8, 16, 32])
    assert np.polyfit(np.log(h), np.log(errs), 1)[0] >= 1.8
    assert errs[-1] < 0.02


def test_ricci_residual_detects_non_solution(rng):
    grid = ChartGrid((4, 4, 17))
    g = s3_band_metric(grid)
    times = np.linspace(0, 0.01, 6)
    exact = [(1 - 4 * t) * g for t in times]
    noisy = [gg * (1 + 0.01 * rng.normal(size=grid.shape + (1, 1))) for gg in exact]
    r_exact = np.nanmax(ricci_flow_residual(exact, times, grid))
    r_noisy = np.nanmax(ricci_flow_residual(noisy, times, grid))
    assert r_noisy >= 10 * r_exact


def test_ricci_residual_needs_three_steps(band):
    with pytest.raises(ValueError):
        ricci_flow_residual([flat_metric(band)] * 2, [0, 1], band)


def test_mean_curvature_check_flat_and_s3():
    grid = ChartGrid((4, 4, 33))
    flat = flat_metric(grid)
    err = mean_curvature_check([flat, flat], [0.0, 0.1], grid, MuFunction.linear(), 0.0)
    assert err.max() <= 5 * grid.h ** 2
    g = s3_band_metric(grid)
    mu = MuFunction.shrinking()
    times = [0.0, 0.005, 0.01]
    err = mean_curvature_check([(1 - 4 * t) * g for t in times], times, grid, mu, S3_H0)
    assert err.max() <= 5 * (1 / 32) ** 2


def test_boundary_pullback_identity_is_zero():
    grid = ChartGrid((8, 8, 17))
    bg = Background(warped_bowl_metric(grid), grid)
    diffeo = integrate_diffeo([zero_P(grid)] * 3, [0.0, 0.01, 0.02], grid)
    res = boundary_pullback_check([bg.g] * 3, diffeo, bg)
    assert res.max() <= 1e-12


def test_boundary_pullback_of_translation():
    grid = ChartGrid((8, 8, 9))
    x = grid.coords()
    field = np.zeros(grid.face_shape + (2, 2))
    field[..., 0, 0] = np.cos(2 * np.pi * grid.face(x, "upper")[..., 0])
    psi = x.copy()
    psi[..., 0] += 1.0 / 8
    out = boundary_pullback(field, psi, grid, "upper")
    assert np.allclose(out[..., 0, 0], np.roll(field[..., 0, 0], -1, axis=0), atol=1e-12)


def test_boundary_pullback_flat_band_targets_zero():
    grid = ChartGrid((8, 8, 9))
    bg = Background(flat_metric(grid), grid)
    diffeo = integrate_diffeo([zero_P(grid)] * 2, [0.0, 0.01], grid)
    assert boundary_pullback_check([bg.g] * 2, diffeo, bg).max() <= 1e-12


def test_convexity_monitor_signs():
    grid = ChartGrid((8, 8, 33))
    bowl = convexity_monitor([warped_bowl_metric(grid)], grid)
    for f in FACES:
        assert bowl[f][0] > 0.27
    flat = convexity_monitor([flat_metric(grid)], grid)
    for f in FACES:
        assert abs(flat[f][0]) <= 5 * grid.h ** 2
    s3 = convexity_monitor([s3_band_metric(grid)], grid)
    for f in FACES:
        assert s3[f][0] < 0


def test_self_similar_chain_is_identity():
    grid = ChartGrid((6, 6, 9))
    g = s3_band_metric(grid)
    times = np.linspace(0, 0.01, 4)
    gbar = [(1 - 4 * t) * g for t in times]
    bg = Background(g, grid)
    P = [deturck_vector_field(gb, deturck_covector(gb, bg)) for gb in gbar]
    assert max(np.abs(p).max() for p in P) <= 1e-9
    diffeo = integrate_diffeo(P, times, grid)
    assert max(np.abs(psi - grid.coords()).max() for psi in diffeo.psi) <= 1e-9
    for a, b in zip(pullback_trace(gbar, diffeo), gbar):
        assert np.abs(a - b).max() <= 1e-9 * np.abs(b).max()
