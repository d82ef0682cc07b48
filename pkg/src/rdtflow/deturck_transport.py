"""DeTurck diffeomorphisms, pullback to Ricci flow, and geometric monitors.

Given a Ricci-DeTurck trace ``gbar(t)`` and its DeTurck vector field
``P^i``, the maps ``psi(., t)`` solve ``d psi/dt = -P(psi, t)``,
``psi(x, 0) = x``; the pulled-back family ``g = psi^* gbar`` is then
checked against the Ricci flow equation and the boundary laws.

``psi`` is stored unwrapped (no reduction modulo the period), so
``psi - x`` is a smooth periodic displacement and ``D psi`` is computed
with the solver's stencils.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryEscape, JacobianDegenerate, NotPositiveDefinite
from .grid import FACES, ChartGrid
from .ricci_deturck import Background, mean_curvature, second_fundamental_form, shape_eigenvalues
from .tensor_core import gradient, metric_inverse, ricci, spd_margin, symmetrize

log = logging.getLogger(__name__)


# ------------------------------------------------------------ interpolation

def interpolate(values: np.ndarray, pos: np.ndarray, sizes, spacings, periodic) -> np.ndarray:
    """Multilinear interpolation of node values at arbitrary positions.

    Args:
        values: ``(*sizes, *comp)`` node values.
        pos: ``(..., k)`` query positions in chart units.
        sizes, spacings, periodic: per-axis grid description.

    Periodic axes wrap; bounded axes are clamped to the grid extent.
    """
    k = len(sizes)
    pos = np.asarray(pos, dtype=float)
    idx0, frac = [], []
    for a in range(k):
        s = pos[..., a] / spacings[a]
        near = np.rint(s)
        s = np.where(np.abs(s - near) < 1e-12, near, s)
        N = sizes[a]
        if periodic[a]:
            i = np.floor(s)
            f = s - i
            i = np.mod(i.astype(np.int64), N)
        else:
            s = np.clip(s, 0.0, N - 1)
            i = np.minimum(np.floor(s), N - 2)
            f = s - i
            i = i.astype(np.int64)
        idx0.append(i)
        frac.append(f)
    comp = values.shape[k:]
    out = np.zeros(pos.shape[:-1] + comp)
    for corner in range(2 ** k):
        w = np.ones(pos.shape[:-1])
        ids = []
        for a in range(k):
            bit = (corner >> a) & 1
            i = idx0[a] + bit
            if periodic[a]:
                i = np.mod(i, sizes[a])
            ids.append(i)
            w = w * (frac[a] if bit else 1.0 - frac[a])
        out += w.reshape(w.shape + (1,) * len(comp)) * values[tuple(ids)]
    return out


def interpolate_on_grid(values, pos, grid: ChartGrid):
    return interpolate(values, pos, grid.sizes, grid.spacings, grid.periodic)


def interpolate_on_face(values, pos, grid: ChartGrid):
    """Interpolate face values (periodic tangential grid) at tangential positions."""
    m = grid.n - 1
    return interpolate(values, pos[..., :m], grid.sizes[:m], grid.spacings[:m], (True,) * m)


# ------------------------------------------------------------ vector field

def deturck_vector_field(gbar: np.ndarray, P: np.ndarray, ginv: np.ndarray | None = None) -> np.ndarray:
    """Raise the index of the DeTurck covector: ``P^i = gbar^{ij} P_j``."""
    if ginv is None:
        ginv = metric_inverse(gbar)
    return np.einsum("...ij,...j->...i", ginv, P)


def tangency_residual(Pvec: np.ndarray, grid: ChartGrid) -> float:
    """Largest normal component ``|P^n|`` over both faces."""
    return max(float(np.max(np.abs(grid.face(Pvec, f)[..., -1]))) for f in FACES)


# -------------------------------------------------------------- transport

@dataclass
class DiffeoTrace:
    grid: ChartGrid
    times: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    min_det: list = field(default_factory=list)


def jacobian(psi: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """``J[..., a, k] = d_a psi^k``."""
    disp = psi - grid.coords()
    return np.eye(grid.n) + gradient(disp, grid)


def integrate_diffeo(P_trace, times, grid: ChartGrid) -> DiffeoTrace:
    """RK4 for ``d psi/dt = -P(psi, t)`` on the stored time levels.

    ``P`` is interpolated linearly in time between stored levels and
    multilinearly in space. The transverse coordinate may overshoot a
    face by at most ``h^2`` and is then clamped.

    Raises:
        BoundaryEscape: on a larger overshoot.
        JacobianDegenerate: if ``det D psi <= 0`` somewhere.
    """
    if len(P_trace) != len(times):
        raise ValueError("P_trace and times must have equal length")
    x = grid.coords()
    L = grid.lengths[-1]
    tol = grid.h ** 2
    out = DiffeoTrace(grid)
    psi = x.copy()
    out.times.append(float(times[0]))
    out.psi.append(psi.copy())
    out.min_det.append(1.0)

    def velocity(P, p):
        return -interpolate_on_grid(P, p, grid)

    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        P0, P1 = P_trace[k], P_trace[k + 1]
        Pm = 0.5 * (P0 + P1)
        k1 = velocity(P0, psi)
        k2 = velocity(Pm, psi + 0.5 * dt * k1)
        k3 = velocity(Pm, psi + 0.5 * dt * k2)
        k4 = velocity(P1, psi + dt * k3)
        psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        xn = psi[..., -1]
        over = np.maximum(-xn, xn - L)
        if np.any(over > tol):
            node = tuple(int(i) for i in np.argwhere(over > tol)[0])
            raise BoundaryEscape(
                f"transverse coordinate left the chart by {over.max():.3e} at node {node}",
                node=node, t=float(times[k + 1]))
        psi[..., -1] = np.clip(xn, 0.0, L)
        det = np.linalg.det(jacobian(psi, grid))
        if not np.all(det > 0):
            node = tuple(int(i) for i in np.argwhere(~(det > 0))[0])
            raise JacobianDegenerate(f"det D psi <= 0 at node {node}", node=node,
                                     t=float(times[k + 1]))
        out.times.append(float(times[k + 1]))
        out.psi.append(psi.copy())
        out.min_det.append(float(det.min()))
    return out


def pullback_metric(gbar: np.ndarray, psi: np.ndarray, grid: ChartGrid) -> np.ndarray:
    """``g_ij(x) = d_i psi^k d_j psi^l gbar_kl(psi(x))``.

    Raises:
        JacobianDegenerate: if ``det D psi <= 0``.
        NotPositiveDefinite: if the result fails the SPD test.
    """
    J = jacobian(psi, grid)
    if not np.all(np.linalg.det(J) > 0):
        raise JacobianDegenerate("det D psi <= 0 in pullback")
    gpsi = interpolate_on_grid(gbar, psi, grid)
    g = symmetrize(np.einsum("...ak,...kl,...bl->...ab", J, gpsi, J))
    if not np.all(spd_margin(g) > 0):
        raise NotPositiveDefinite("pulled-back metric is not positive definite")
    return g


def pullback_trace(gbar_trace, diffeo: DiffeoTrace) -> list:
    return [pullback_metric(gb, psi, diffeo.grid) for gb, psi in zip(gbar_trace, diffeo.psi)]


# ---------------------------------------------------------------- monitors

def ricci_flow_residual(g_trace, times, grid: ChartGrid) -> np.ndarray:
    """``sup |d_t g + 2 Ric(g)|`` per stored step.

    Centered differences in time; the first and last entries are ``nan``.
    """
    if len(g_trace) < 3:
        raise ValueError("need at least 3 stored steps")
    out = np.full(len(g_trace), np.nan)
    for k in range(1, len(g_trace) - 1):
        dgdt = (g_trace[k + 1] - g_trace[k - 1]) / (times[k + 1] - times[k - 1])
        out[k] = float(np.max(np.abs(dgdt + 2.0 * ricci(g_trace[k], grid))))
    return out


def mean_curvature_check(g_trace, times, grid: ChartGrid, mu, H0) -> np.ndarray:
    """``sup |H(x, t) - mu(t) H0|`` over both faces, per step.

    ``H0`` is a number or a dict of face arrays.
    """
    out = np.empty(len(g_trace))
    for k, (g, t) in enumerate(zip(g_trace, times)):
        err = 0.0
        for f in FACES:
            ref = H0[f] if isinstance(H0, dict) else H0
            err = max(err, float(np.max(np.abs(mean_curvature(g, grid, f) - mu(t) * ref))))
        out[k] = err
    return out


def boundary_pullback(II_hat_face: np.ndarray, psi: np.ndarray, grid: ChartGrid, face: str) -> np.ndarray:
    """Pullback of a face tensor by the boundary restriction of ``psi``."""
    m = grid.n - 1
    Jt = grid.face(jacobian(psi, grid), face)[..., :m, :m]
    at = interpolate_on_face(II_hat_face, grid.face(psi, face), grid)
    return symmetrize(np.einsum("...ag,...gd,...bd->...ab", Jt, at, Jt))


def boundary_pullback_check(g_trace, diffeo: DiffeoTrace, background: Background) -> np.ndarray:
    """``sup |II(g(t)) - (psi|_bdry)^* IIhat|`` over both faces, per step."""
    grid = diffeo.grid
    out = np.empty(len(g_trace))
    for k, (g, psi) in enumerate(zip(g_trace, diffeo.psi)):
        err = 0.0
        for f in FACES:
            II = second_fundamental_form(g, grid, f)
            target = boundary_pullback(background.II[f], psi, grid, f)
            err = max(err, float(np.max(np.abs(II - target))))
        out[k] = err
    return out


def convexity_monitor(g_trace, grid: ChartGrid) -> dict:
    """Smallest principal curvature per face and step."""
    return {f: np.array([float(shape_eigenvalues(g, grid, f).min()) for g in g_trace])
            for f in FACES}
