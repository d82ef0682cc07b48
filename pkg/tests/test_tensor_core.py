import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rdtflow.errors import NotPositiveDefinite
from rdtflow.grid import FACE_SIGN, ChartGrid, stencils
from rdtflow.scenarios import s3_band_metric
from rdtflow.tensor_core import (MetricField, christoffel, covariant_derivative_sym2,
                                 discrete_lq_norm, gradient, hessian, laplacian_like,
                                 metric_inverse, partial_derivative, ricci, ricci_parts,
                                 second_covariant_sym2, second_partial, spd_margin, sup_norm,
                                 sym_index_pairs, sym_pack, sym_unpack)

from conftest import random_spd_field, smooth_metric


def generic_metric(grid):
    x = grid.coords()
    a, b, r = x[..., 0], x[..., 1], x[..., 2]
    g = np.zeros(grid.shape + (3, 3))
    g[..., 0, 0] = 2 + np.sin(2 * np.pi * a) * r / 2
    g[..., 0, 1] = g[..., 1, 0] = np.cos(2 * np.pi * b) / 5
    g[..., 1, 1] = 1 + r**2
    g[..., 1, 2] = g[..., 2, 1] = r * (1 - r) * np.sin(2 * np.pi * a) / 4
    g[..., 2, 2] = 1 + r / 3
    return g


# sympy evaluation of Gamma^k_ij for generic_metric at (1/4, 1/8, 1/2)
GENERIC_GAMMA = np.array([
    [[-0.0006800929235202214, 0.0, 0.11190904609811127],
     [0.0, -0.39911921907494174, -0.025390135811421598],
     [0.11190904609811127, -0.025390135811421598, 0.00045339528234681427]],
    [[0.010820212156307983, 0.0, -0.012695067905710799],
     [0.0, 0.06676258479025146, 0.40395458716883137],
     [-0.012695067905710799, 0.40395458716883137, -0.007213474770871989]],
    [[-0.21486536850837365, 0.0, 0.0006800929235202214],
     [0.0, -0.4321479956137635, -0.021640424312615966],
     [0.0006800929235202214, -0.021640424312615966, 0.14324357900558243]],
])


# ------------------------------------------------------------- grid basics

def test_grid_faces_and_orientation():
    g = ChartGrid((8, 6, 5))
    assert g.transverse_axis == 2
    assert g.periodic == (True, True, False)
    assert FACE_SIGN == {"lower": -1.0, "upper": 1.0}
    assert g.spacings == pytest.approx((1 / 8, 1 / 6, 1 / 4))
    assert g.boundary_mask().sum() == 2 * 8 * 6
    assert g.cell_weights().sum() == pytest.approx(1.0)


@pytest.mark.parametrize("sizes", [(3,), (8, 3), (0, 8)])
def test_grid_rejects_small_axes(sizes):
    with pytest.raises(ValueError):
        ChartGrid(sizes)


# ------------------------------------------------------------- derivatives

def test_constant_field_has_zero_derivative(grid3):
    f = np.full(grid3.shape, 3.7)
    for a in range(3):
        assert np.abs(partial_derivative(f, grid3, a)).max() < 1e-12


def test_linear_transverse_field():
    grid = ChartGrid((8, 9))
    f = grid.coords()[..., 1]
    assert np.allclose(partial_derivative(f, grid, 1), 1.0, atol=1e-12)


@pytest.mark.parametrize("N", [4, 5, 9, 33])
def test_transverse_stencils_reproduce_quadratics(N):
    grid = ChartGrid((4, N))
    r = grid.coords()[..., 1]
    f = 1.5 - 2.0 * r + 3.0 * r**2
    st_ = stencils(grid)
    assert np.allclose(st_.apply(st_.d1[1], f), -2.0 + 6.0 * r, atol=1e-9)
    assert np.allclose(st_.apply(st_.d2[1][1], f), 6.0, atol=1e-8)


def test_boundary_rows_reproduce_cubics():
    grid = ChartGrid((4, 17))
    r = grid.coords()[..., 1]
    f = r**3 - r
    faces = [0, -1]
    d1 = partial_derivative(f, grid, 1)[:, faces]
    d2 = second_partial(f, grid, 1, 1)
    assert np.allclose(d1, (3 * r**2 - 1)[:, faces], atol=1e-10)
    assert np.allclose(d2, 6 * r, atol=1e-8)


def test_periodic_derivative_of_sine():
    grid = ChartGrid((64, 5))
    x = grid.coords()[..., 0]
    err = np.abs(partial_derivative(np.sin(2 * np.pi * x), grid, 0)
                 - 2 * np.pi * np.cos(2 * np.pi * x)).max()
    assert err <= 0.02


def test_axis_out_of_range(grid3):
    with pytest.raises(ValueError):
        partial_derivative(np.zeros(grid3.shape), grid3, 3)


def test_hessian_symmetric_and_mixed_matches_composition(grid3):
    x = grid3.coords()
    f = np.sin(2 * np.pi * x[..., 0]) * x[..., 2] ** 2
    H = hessian(f, grid3)
    assert np.array_equal(H, np.swapaxes(H, -1, -2))
    d02 = partial_derivative(partial_derivative(f, grid3, 2), grid3, 0)
    assert np.allclose(H[..., 0, 2], d02, atol=1e-10)


# ------------------------------------------------------------------ packing

def test_index_pairs_put_mixed_block_first():
    assert sym_index_pairs(3) == [(0, 2), (1, 2), (0, 0), (0, 1), (1, 1), (2, 2)]
    assert sym_index_pairs(1) == [(0, 0)]


@given(hnp.arrays(np.float64, (2, 6), elements=st.floats(-1e3, 1e3)))
def test_pack_unpack_roundtrip(v):
    T = sym_unpack(v, 3)
    assert np.array_equal(T, np.swapaxes(T, -1, -2))
    assert np.array_equal(sym_pack(T), v)


# ------------------------------------------------------------------- metric

def test_inverse_examples():
    assert np.array_equal(metric_inverse(np.eye(3)), np.eye(3))
    assert np.allclose(metric_inverse(np.diag([4.0, 1.0, 1.0])), np.diag([0.25, 1, 1]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_inverse_is_involution(seed, n):
    g = random_spd_field(np.random.default_rng(seed), (7,), n)
    ginv = metric_inverse(g)
    assert np.abs(np.einsum("...ij,...jk->...ik", g, ginv) - np.eye(n)).max() < 1e-12
    assert np.abs(metric_inverse(ginv) - g).max() < 1e-12 * max(1.0, np.abs(g).max())


def test_inverse_reports_first_bad_node():
    g = np.broadcast_to(np.eye(3), (4, 5, 3, 3)).copy()
    g[2, 3] = np.diag([2.0, -1.0, 1.0])
    with pytest.raises(NotPositiveDefinite) as exc:
        metric_inverse(g)
    assert exc.value.info["node"] == (2, 3)


def test_spd_margin_examples(rng):
    assert spd_margin(np.eye(3)) == pytest.approx(1.0)
    assert spd_margin(np.diag([2.0, -1.0, 1.0])) == pytest.approx(-1.0)
    assert np.all(spd_margin(random_spd_field(rng, (10,), 3)) > 0)


def test_metric_field_lazy_inverse(grid3):
    g = smooth_metric(grid3)
    mf = MetricField(g, grid3)
    assert mf._inverse is None
    assert np.abs(np.einsum("...ij,...jk->...ik", mf.data, mf.inverse) - np.eye(3)).max() < 1e-12


# -------------------------------------------------------------- christoffel

def test_constant_metric_has_zero_christoffel(grid3):
    g = np.broadcast_to(np.diag([4.0, 1.0, 2.0]), grid3.shape + (3, 3)).copy()
    assert np.abs(christoffel(g, grid3)).max() < 1e-12


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
def test_christoffel_scale_invariant(grid3, c):
    g = smooth_metric(grid3)
    assert np.abs(christoffel(c * g, grid3) - christoffel(g, grid3)).max() < 1e-12


def test_christoffel_symmetric_lower_indices(grid3):
    gam = christoffel(smooth_metric(grid3), grid3)
    assert np.array_equal(gam, np.swapaxes(gam, -1, -2))


def test_christoffel_against_symbolic_oracle():
    errs = []
    for m in (32, 64):
        grid = ChartGrid((m, m, m + 1))
        gam = christoffel(generic_metric(grid), grid)
        errs.append(np.abs(gam[m // 4, m // 8, m // 2] - GENERIC_GAMMA).max())
    assert errs[1] < 5e-3
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_s3_band_christoffel():
    a = 0.2
    grid = ChartGrid((8, 8, 33))
    gam = christoffel(s3_band_metric(grid, a), grid)
    theta = np.pi / 4 - a + 2 * a * grid.axis_nodes(2)
    # back to angle coordinates: x3 = (theta - theta0) / (2a), phi = 2 pi x
    to_angle = 2 * a / (2 * np.pi) ** 2
    h = grid.h * 2 * a
    cs = np.cos(theta) * np.sin(theta)
    assert np.abs(gam[0, 0, :, 2, 0, 0] * to_angle - cs).max() <= 2 * h**2
    assert np.abs(gam[0, 0, :, 2, 1, 1] * to_angle + cs).max() <= 2 * h**2


# -------------------------------------------------------------------- ricci

def test_flat_ricci_vanishes(grid3):
    assert np.abs(ricci(np.broadcast_to(np.eye(3), grid3.shape + (3, 3)), grid3)).max() < 1e-12


def test_s3_band_is_einstein():
    errs = []
    for N in (33, 65):
        grid = ChartGrid((8, 8, N))
        g = s3_band_metric(grid)
        errs.append(np.abs(ricci(g, grid) - 2 * g).max())
    assert errs[1] < 0.01
    assert np.log2(errs[0] / errs[1]) >= 1.8


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
def test_ricci_scale_invariance(grid3, c):
    g = smooth_metric(grid3)
    R = ricci(g, grid3)
    assert sup_norm(ricci(c * g, grid3) - R) <= 1e-9 * sup_norm(R)


def test_ricci_parts_split(grid3):
    g = smooth_metric(grid3)
    ginv = metric_inverse(g)
    second, first = ricci_parts(g, gradient(g, grid3), hessian(g, grid3), ginv)
    assert np.abs(second + first - ricci(g, grid3)).max() < 1e-11


# ----------------------------------------------------- covariant derivative

def test_metric_compatibility(grid3):
    g = smooth_metric(grid3)
    assert np.abs(covariant_derivative_sym2(g, christoffel(g, grid3), grid3)).max() < 1e-10


def test_second_covariant_of_metric_vanishes_at_second_order():
    # the compact second difference is not d1 @ d1, so only O(h^2) survives
    errs = []
    for m in (16, 32, 64):
        grid = ChartGrid((m, m, m + 1))
        g = smooth_metric(grid)
        errs.append(np.abs(second_covariant_sym2(g, christoffel(g, grid), grid)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < 0.1
    assert orders[-1] >= 1.8


def test_flat_covariant_is_partial(grid3, rng):
    T = sym_unpack(rng.normal(size=grid3.shape + (6,)), 3)
    D = covariant_derivative_sym2(T, np.zeros(grid3.shape + (3, 3, 3)), grid3)
    assert np.allclose(D, gradient(T, grid3), atol=1e-12)


def test_covariant_derivative_pointwise_formula(grid3, rng):
    g = smooth_metric(grid3)
    gam = christoffel(g, grid3)
    x = grid3.coords()
    T = np.zeros(grid3.shape + (3, 3))
    T[..., 0, 1] = T[..., 1, 0] = np.sin(2 * np.pi * x[..., 0]) * x[..., 2]
    T[..., 2, 2] = np.cos(2 * np.pi * x[..., 1])
    D = covariant_derivative_sym2(T, gam, grid3)
    dT = gradient(T, grid3)
    node = (3, 5, 7)
    G, t, d = gam[node], T[node], dT[node]
    ref = np.empty((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                ref[i, j, k] = d[i, j, k] - sum(G[p, i, j] * t[p, k] + G[p, i, k] * t[j, p]
                                                for p in range(3))
    assert np.abs(D[node] - ref).max() < 1e-12


def test_flat_laplacian_of_sine():
    grid = ChartGrid((64, 8, 9))
    x = grid.coords()
    T = np.zeros(grid.shape + (3, 3))
    T[..., 0, 0] = np.sin(2 * np.pi * x[..., 0])
    ddT = second_covariant_sym2(T, np.zeros(grid.shape + (3, 3, 3)), grid)
    lap = laplacian_like(np.broadcast_to(np.eye(3), grid.shape + (3, 3)), ddT)
    err = np.abs(lap[..., 0, 0] + (2 * np.pi) ** 2 * np.sin(2 * np.pi * x[..., 0])).max()
    assert err < (2 * np.pi) ** 4 * grid.h**2 / 12 * 1.01
    trace = np.einsum("...iikl->...kl", ddT)
    assert np.allclose(lap, trace)


# ------------------------------------------------------------------- norms

def test_norm_examples(grid3, rng):
    assert sup_norm(np.zeros(5)) == 0.0
    assert discrete_lq_norm(np.full(grid3.shape, 3.0), 2, grid3) == pytest.approx(3.0)
    f = rng.normal(size=grid3.shape)
    assert sup_norm(f) >= discrete_lq_norm(f, 2, grid3)
    assert sup_norm(f) >= discrete_lq_norm(f, 1, grid3)


def test_lq_norm_in_time(grid3):
    trace = [np.ones(grid3.shape)] * 5
    assert discrete_lq_norm(trace, 2, grid3, dt=0.25) == pytest.approx(1.0)
