"""Discrete tensor calculus on a :class:`~rdtflow.grid.ChartGrid`.

Index conventions (all arrays carry node axes first):

* symmetric (0,2) tensors: ``T[..., i, j]`` stored as full symmetric
  matrices; :func:`sym_pack` gives the upper-triangle fiber vector.
* Christoffel symbols: ``gamma[..., k, i, j]`` = Gamma^k_ij.
* derivative index first: ``gradient(T)[..., a, i, j]`` = d_a T_ij.

Derivatives use the shared sparse stencils of the grid, so every second
derivative that appears in a principal part is the compact one.
"""
from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite
from .grid import ChartGrid, stencils


def partial_derivative(f: np.ndarray, grid: ChartGrid, axis: int) -> np.ndarray:
    """Second-order finite difference of any field along ``axis``."""
    if not 0 <= axis < grid.n:
        raise ValueError(f"axis {axis} out of range for n={grid.n}")
    st = stencils(grid)
    return st.apply(st.d1[axis], f)


def second_partial(f: np.ndarray, grid: ChartGrid, a: int, b: int) -> np.ndarray:
    st = stencils(grid)
    return st.apply(st.d2[a][b], f)


def gradient(f: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """All first partials; the derivative index is inserted after the node axes."""
    st = stencils(grid)
    out = np.stack([st.apply(st.d1[a], f) for a in range(grid.n)], axis=0)
    return np.moveaxis(out, 0, grid.n)


def hessian(f: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """All second partials ``H[..., a, b, *comp]`` (symmetric in a, b)."""
    st = stencils(grid)
    n = grid.n
    out = np.empty((n, n) + np.shape(f))
    for a in range(n):
        for b in range(a, n):
            out[a, b] = st.apply(st.d2[a][b], f)
            if b != a:
                out[b, a] = out[a, b]
    return np.moveaxis(out, [0, 1], [n, n + 1])


# ---------------------------------------------------------------- packing

def sym_index_pairs(n: int) -> list:
    """Fiber ordering of a symmetric (0,2) tensor in ``n`` dimensions.

    Mixed components ``(alpha, n)`` come first so that the Dirichlet block
    of the boundary split is a leading coordinate block, then the
    tangential upper triangle, then ``(n, n)``.
    """
    last = n - 1
    pairs = [(a, last) for a in range(last)]
    pairs += [(a, b) for a in range(last) for b in range(a, last)]
    pairs.append((last, last))
    return pairs


def sym_pack(T: np.ndarray) -> np.ndarray:
    n = T.shape[-1]
    return np.stack([T[..., i, j] for i, j in sym_index_pairs(n)], axis=-1)


def sym_unpack(v: np.ndarray, n: int) -> np.ndarray:
    out = np.empty(v.shape[:-1] + (n, n))
    for c, (i, j) in enumerate(sym_index_pairs(n)):
        out[..., i, j] = v[..., c]
        out[..., j, i] = v[..., c]
    return out


def symmetrize(T: np.ndarray) -> np.ndarray:
    return 0.5 * (T + np.swapaxes(T, -1, -2))


# ------------------------------------------------------------ metric types

def spd_margin(g: np.ndarray) -> np.ndarray:
    """Node-wise smallest eigenvalue of a symmetric field."""
    return np.linalg.eigvalsh(symmetrize(g))[..., 0]


def metric_inverse(g: np.ndarray) -> np.ndarray:
    """Node-wise inverse of an SPD field.

    Raises:
        NotPositiveDefinite: if some node fails the Cholesky test; the
            first offending node index is reported.
    """
    g = np.asarray(g, dtype=float)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        bad = np.argwhere(~(spd_margin(g) > 0))
        node = tuple(int(i) for i in bad[0]) if len(bad) else None
        raise NotPositiveDefinite(f"metric not positive definite at node {node}",
                                  node=node) from None
    return symmetrize(np.linalg.inv(g))


class MetricField:
    """SPD symmetric field with a lazily computed inverse."""

    def __init__(self, data: np.ndarray, grid: ChartGrid):
        self.data = symmetrize(np.asarray(data, dtype=float))
        self.grid = grid
        self._inverse = None

    @property
    def inverse(self) -> np.ndarray:
        if self._inverse is None:
            self._inverse = metric_inverse(self.data)
        return self._inverse


# -------------------------------------------------------------- curvature

def christoffel_first_kind(dg: np.ndarray) -> np.ndarray:
    """``Gamma_{l,ij}`` from ``dg[..., a, i, j] = d_a g_ij``; index order (l, i, j)."""
    # d_i g_jl + d_j g_il - d_l g_ij
    t1 = np.einsum("...ijl->...lij", dg)
    t2 = np.einsum("...jil->...lij", dg)
    return 0.5 * (t1 + t2 - dg)


def christoffel(g: np.ndarray, grid: ChartGrid, ginv: np.ndarray | None = None) -> np.ndarray:
    """Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)."""
    if ginv is None:
        ginv = metric_inverse(g)
    low = christoffel_first_kind(gradient(g, grid))
    return np.einsum("...kl,...lij->...kij", ginv, low)


def inverse_gradient(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """d_a g^{ij} = -g^{ip} g^{jq} d_a g_pq."""
    return -np.einsum("...ip,...jq,...apq->...aij", ginv, ginv, dg)


def christoffel_gradient(g: np.ndarray, grid: ChartGrid, ginv: np.ndarray | None = None) -> np.ndarray:
    """d_a Gamma^k_ij via the product rule, shape ``[..., a, k, i, j]``.

    Built from first and second partials of ``g`` rather than by
    differencing Gamma, which would amplify the one-sided boundary error
    to first order.
    """
    if ginv is None:
        ginv = metric_inverse(g)
    dg = gradient(g, grid)
    ddg = hessian(g, grid)
    low = christoffel_first_kind(dg)
    # d_a Gamma_{l,ij} = 1/2 (d_a d_i g_jl + d_a d_j g_il - d_a d_l g_ij)
    dlow = 0.5 * (np.einsum("...aijl->...alij", ddg)
                  + np.einsum("...ajil->...alij", ddg)
                  - ddg)
    return (np.einsum("...akl,...lij->...akij", inverse_gradient(ginv, dg), low)
            + np.einsum("...kl,...alij->...akij", ginv, dlow))


def ricci_second_order(ddg, ginv):
    """Part of Ric linear in second derivatives of ``g``.

    1/2 g^il (d_i d_k g_jl + d_j d_l g_ik - d_i d_l g_jk - d_j d_k g_il)
    """
    return 0.5 * (
        np.einsum("...il,...ikjl->...jk", ginv, ddg)
        + np.einsum("...il,...jlik->...jk", ginv, ddg)
        - np.einsum("...il,...iljk->...jk", ginv, ddg)
        - np.einsum("...il,...jkil->...jk", ginv, ddg)
    )


def ricci_first_order(dg, ginv):
    """Part of Ric built from ``g`` and first derivatives only."""
    low = christoffel_first_kind(dg)
    gam = np.einsum("...kl,...lij->...kij", ginv, low)
    dginv = inverse_gradient(ginv, dg)
    return (
        np.einsum("...iil,...ljk->...jk", dginv, low)
        - np.einsum("...jil,...lik->...jk", dginv, low)
        + np.einsum("...iip,...pjk->...jk", gam, gam)
        - np.einsum("...ijp,...pik->...jk", gam, gam)
    )


def ricci_parts(g, dg, ddg, ginv):
    """Split the Ricci tensor into its second-derivative part and the rest.

    Returns ``(second, first)`` with ``second`` linear in ``ddg`` and
    ``first`` depending only on ``g`` and ``dg``.
    """
    return ricci_second_order(ddg, ginv), ricci_first_order(dg, ginv)


def ricci(g: np.ndarray, grid: ChartGrid, ginv: np.ndarray | None = None) -> np.ndarray:
    """Ric_jk = d_i Gamma^i_jk - d_j Gamma^i_ik + Gamma^i_ip Gamma^p_jk - Gamma^i_jp Gamma^p_ik.

    The derivatives of the Christoffel symbols are expanded by the product
    rule so that second derivatives of ``g`` are taken with the compact
    stencils.
    """
    if ginv is None:
        ginv = metric_inverse(g)
    second, first = ricci_parts(g, gradient(g, grid), hessian(g, grid), ginv)
    return symmetrize(second + first)


def covariant_derivative_sym2(T: np.ndarray, gamma: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """(nabla T)_ijk = d_i T_jk - Gamma^p_ij T_pk - Gamma^p_ik T_jp."""
    dT = gradient(T, grid)
    return (dT
            - np.einsum("...pij,...pk->...ijk", gamma, T)
            - np.einsum("...pik,...jp->...ijk", gamma, T))


def second_covariant_sym2(T: np.ndarray, gamma: np.ndarray, grid: ChartGrid | None,
                          dgamma: np.ndarray | None = None, dT: np.ndarray | None = None,
                          ddT: np.ndarray | None = None) -> np.ndarray:
    """(nabla nabla T)_ijkl, i.e. nabla applied to nabla T.

    The outer partial derivative of ``nabla T`` is expanded with the product
    rule; the resulting ``d_i d_j T_kl`` uses the compact second
    differences. Pass ``dgamma`` from :func:`christoffel_gradient` to keep
    second order up to the boundary; otherwise Gamma is differenced
    directly. With ``dT``, ``ddT`` and ``dgamma`` all supplied the
    evaluation is purely node-wise and ``grid`` may be ``None``.
    """
    dT = gradient(T, grid) if dT is None else dT
    ddT = hessian(T, grid) if ddT is None else ddT
    # [..., i, p, j, k] = d_i Gamma^p_jk
    dgam = gradient(gamma, grid) if dgamma is None else dgamma
    nT = (dT
          - np.einsum("...pjk,...pl->...jkl", gamma, T)
          - np.einsum("...pjl,...kp->...jkl", gamma, T))
    d_nT = (ddT
            - np.einsum("...ipjk,...pl->...ijkl", dgam, T)
            - np.einsum("...pjk,...ipl->...ijkl", gamma, dT)
            - np.einsum("...ipjl,...kp->...ijkl", dgam, T)
            - np.einsum("...pjl,...ikp->...ijkl", gamma, dT))
    return (d_nT
            - np.einsum("...pij,...pkl->...ijkl", gamma, nT)
            - np.einsum("...pik,...jpl->...ijkl", gamma, nT)
            - np.einsum("...pil,...jkp->...ijkl", gamma, nT))


def laplacian_like(ginv: np.ndarray, ddT: np.ndarray) -> np.ndarray:
    """Contract ``ginv^ij (nabla nabla T)_ijkl`` to a symmetric field."""
    return np.einsum("...ij,...ijkl->...kl", ginv, ddT)


# ------------------------------------------------------------------ norms

def sup_norm(f) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.max(np.abs(f))) if f.size else 0.0


def discrete_lq_norm(trace, q: float, grid: ChartGrid, dt: float | None = None) -> float:
    """Discrete L^q norm with trapezoidal weights.

    ``trace`` is a single field (``dt=None``) or a sequence of fields at
    equally spaced times ``dt`` apart (trapezoid in time as well).
    Component axes are reduced with the Euclidean norm.
    """
    w = grid.cell_weights()

    def spatial(f):
        f = np.asarray(f, dtype=float)
        mag = np.abs(f) if f.ndim == grid.n else np.sqrt(
            np.sum(f.reshape(grid.shape + (-1,)) ** 2, axis=-1))
        return float(np.sum(w * mag**q))

    if dt is None:
        return spatial(trace) ** (1.0 / q)
    vals = np.array([spatial(f) for f in trace])
    if len(vals) == 1:
        return (vals[0] * dt) ** (1.0 / q)
    wt = np.full(len(vals), dt)
    wt[0] = wt[-1] = 0.5 * dt
    return float(np.sum(wt * vals)) ** (1.0 / q)
