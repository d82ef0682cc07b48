"""Ricci-DeTurck flow on a band with two boundary faces.

The flow ``dg/dt = -2 Ric(g) + Q(g)`` for a metric ``g`` (written ``gbar``
below) is expressed as a quasilinear system for the packed fiber vector
``sym_pack(gbar)`` with ``H = gbar^{-1}``. Boundary conditions come in two
modes:

* ``mean_curvature``: mixed components vanish, the second fundamental form
  of ``gbar`` is ``mu(t)`` times the symmetrized product of ``gbar`` and
  the background form, and the normal DeTurck component vanishes.
* ``convexity``: as above but the second fundamental form of ``gbar``
  equals the background one.

Both are rewritten as a Neumann condition on the non-mixed components,
which is what :func:`zeta_map` and :func:`chi_map` return.

Second derivatives of ``gbar`` enter ``-2 Ric + Q`` only through
``gbar^{ab} d_a d_b gbar``; the remaining first-order map is evaluated
directly so the solver sees the principal part with compact stencils.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AdaptedChartViolation
from .grid import FACE_SIGN, FACES, ChartGrid
from .parabolic_bundle import ProblemSpec, SolverConfig, SubbundleSplit, evolve
from .tensor_core import (christoffel, christoffel_first_kind, christoffel_gradient,
                          gradient, hessian, inverse_gradient, metric_inverse,
                          ricci_first_order, ricci_second_order,
                          second_covariant_sym2, spd_margin, sym_pack, sym_unpack,
                          symmetrize)

log = logging.getLogger(__name__)

MODES = ("mean_curvature", "convexity")
ZETA_VARIANTS = ("derived", "verbatim")


class MuFunction:
    """Time profile of the prescribed mean-curvature factor, ``mu(0) = 1``."""

    def __init__(self, fn: Callable[[float], float], label: str = "custom"):
        if float(fn(0.0)) != 1.0:
            raise ValueError(f"mu(0) must equal 1, got {fn(0.0)!r}")
        self.fn = fn
        self.label = label

    def __call__(self, t: float) -> float:
        return float(self.fn(t))

    @classmethod
    def constant(cls):
        return cls(lambda t: 1.0, "constant")

    @classmethod
    def shrinking(cls, rate: float = 4.0):
        """``(1 - rate t)^{-1/2}``, the factor of a metric shrinking as ``1 - rate t``."""
        return cls(lambda t: (1.0 - rate * t) ** -0.5, f"shrinking({rate:g})")

    @classmethod
    def linear(cls, slope: float = 1.0):
        return cls(lambda t: 1.0 + slope * t, f"linear({slope:g})")


# ----------------------------------------------------------- geometry

def outward_unit_normal(g: np.ndarray, face: str, ginv: np.ndarray | None = None) -> np.ndarray:
    """``upsilon^i = sign * g^{in} / sqrt(g^{nn})`` on whole-grid arrays."""
    if ginv is None:
        ginv = metric_inverse(g)
    col = ginv[..., :, -1]
    return FACE_SIGN[face] * col / np.sqrt(ginv[..., -1, -1])[..., None]


def second_fundamental_form(g: np.ndarray, grid: ChartGrid, face: str,
                            ginv: np.ndarray | None = None,
                            gamma: np.ndarray | None = None) -> np.ndarray:
    """Tangential second fundamental form on ``face`` w.r.t. the outward normal.

    ``II_ab = g_ak (d_b ups^k + Gamma^k_bm ups^m)``, symmetrized, with the
    solver's one-sided stencils in the normal direction.

    Returns:
        Array of shape ``(*face_shape, n-1, n-1)``.
    """
    if ginv is None:
        ginv = metric_inverse(g)
    if gamma is None:
        gamma = christoffel(g, grid, ginv)
    ups = outward_unit_normal(g, face, ginv)
    cov = gradient(ups, grid) + np.einsum("...kbm,...m->...bk", gamma, ups)
    II = np.einsum("...ak,...bk->...ab", g, cov)
    m = grid.n - 1
    return symmetrize(grid.face(II, face)[..., :m, :m])


def mean_curvature(g: np.ndarray, grid: ChartGrid, face: str, II: np.ndarray | None = None) -> np.ndarray:
    """``(n-1)^{-1} g_tan^{ab} II_ab`` with the inverse of the induced metric."""
    if II is None:
        II = second_fundamental_form(g, grid, face)
    m = grid.n - 1
    gt = grid.face(g, face)[..., :m, :m]
    return np.einsum("...ab,...ab->...", np.linalg.inv(gt), II) / m


def shape_eigenvalues(g: np.ndarray, grid: ChartGrid, face: str, II: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of ``II`` relative to the induced metric (principal curvatures)."""
    if II is None:
        II = second_fundamental_form(g, grid, face)
    m = grid.n - 1
    gt = grid.face(g, face)[..., :m, :m]
    L = np.linalg.cholesky(gt)
    Li = np.linalg.inv(L)
    return np.linalg.eigvalsh(Li @ II @ np.swapaxes(Li, -1, -2))


# ---------------------------------------------------------- background

class Background:
    """Fixed reference metric with its connection and face geometry."""

    def __init__(self, ghat: np.ndarray, grid: ChartGrid, adapted_tol: float = 1e-12):
        ghat = symmetrize(np.asarray(ghat, dtype=float))
        self.grid = grid
        self.g = ghat
        self.ginv = metric_inverse(ghat)
        scale = float(np.max(np.abs(ghat)))
        for face in FACES:
            mixed = np.max(np.abs(grid.face(ghat, face)[..., :-1, -1]), initial=0.0)
            if mixed > adapted_tol * scale:
                raise AdaptedChartViolation(
                    f"mixed components {mixed:.3e} on the {face} face", face=face, value=mixed)
        self.gamma = christoffel(ghat, grid, self.ginv)
        self.dgamma = christoffel_gradient(ghat, grid, self.ginv)
        self.II = {f: second_fundamental_form(ghat, grid, f, self.ginv, self.gamma) for f in FACES}
        self.H_mean = {f: mean_curvature(ghat, grid, f, self.II[f]) for f in FACES}
        self.margin = float(spd_margin(ghat).min())

    def face(self, arr, face):
        return self.grid.face(arr, face)


@dataclass
class RdtState:
    gbar: np.ndarray
    background: Background
    t: float = 0.0


# ---------------------------------------------------------- DeTurck terms

def _deturck_terms(g, dg, ginv, bg, ddg=None):
    """``P_j`` and the parts of ``dP[..., i, j] = d_i P_j``.

    ``P_j = gbar^{kl} Gamma_{j,kl} - gbar_{jm} V^m`` with
    ``V^m = gbar^{kl} Gammahat^m_kl``. Returns ``(P, dP_first, dP_second)``;
    ``dP_second`` is ``None`` without ``ddg``.
    """
    low = christoffel_first_kind(dg)
    V = np.einsum("...kl,...mkl->...m", ginv, bg.gamma)
    P = np.einsum("...kl,...jkl->...j", ginv, low) - np.einsum("...jm,...m->...j", g, V)
    dginv = inverse_gradient(ginv, dg)
    dV = (np.einsum("...ikl,...mkl->...im", dginv, bg.gamma)
          + np.einsum("...kl,...imkl->...im", ginv, bg.dgamma))
    dP_first = (np.einsum("...ikl,...jkl->...ij", dginv, low)
                - np.einsum("...ijm,...m->...ij", dg, V)
                - np.einsum("...jm,...im->...ij", g, dV))
    dP_second = None
    if ddg is not None:
        # d_i Gamma_{j,kl} = 1/2 (d_i d_k g_jl + d_i d_l g_jk - d_i d_j g_kl)
        dlow = 0.5 * (np.einsum("...ikjl->...ijkl", ddg)
                      + np.einsum("...iljk->...ijkl", ddg)
                      - ddg)
        dP_second = np.einsum("...kl,...ijkl->...ij", ginv, dlow)
    return P, dP_first, dP_second


def rdt_first_order(g, dg, ginv, bg) -> np.ndarray:
    """First-order part of ``-2 Ric + Q``; the flow is ``gbar^{ab} d_a d_b gbar`` plus this."""
    P, dP1, _ = _deturck_terms(g, dg, ginv, bg)
    gam = np.einsum("...kl,...lij->...kij", ginv, christoffel_first_kind(dg))
    Q1 = dP1 + np.swapaxes(dP1, -1, -2) - 2.0 * np.einsum("...pij,...p->...ij", gam, P)
    return symmetrize(-2.0 * ricci_first_order(dg, ginv) + Q1)


def rdt_second_order(ddg, ginv, g, dg, bg) -> np.ndarray:
    """Second-derivative part of ``-2 Ric + Q`` assembled term by term."""
    _, _, dP2 = _deturck_terms(g, dg, ginv, bg, ddg)
    return symmetrize(-2.0 * ricci_second_order(ddg, ginv) + dP2 + np.swapaxes(dP2, -1, -2))


def deturck_covector(gbar: np.ndarray, bg: Background, ginv: np.ndarray | None = None) -> np.ndarray:
    """``P_i = gbar_ij gbar^kl (Gamma^j_kl - Gammahat^j_kl)``."""
    if ginv is None:
        ginv = metric_inverse(gbar)
    gam = christoffel(gbar, bg.grid, ginv)
    diff = gam - bg.gamma
    return np.einsum("...ij,...kl,...jkl->...i", gbar, ginv, diff)


def deturck_correction(gbar: np.ndarray, P: np.ndarray, grid: ChartGrid,
                       ginv: np.ndarray | None = None) -> np.ndarray:
    """``Q_ij = (nabla_i P)_j + (nabla_j P)_i`` for a given covector field."""
    if ginv is None:
        ginv = metric_inverse(gbar)
    gam = christoffel(gbar, grid, ginv)
    nP = gradient(P, grid) - np.einsum("...pij,...p->...ij", gam, P)
    return nP + np.swapaxes(nP, -1, -2)


def rdt_rhs_direct(gbar: np.ndarray, bg: Background) -> np.ndarray:
    """``-2 Ric(gbar) + Q(gbar)``.

    ``d_i P_j`` is expanded with the product rule so that second
    derivatives of ``gbar`` use the compact stencils throughout.
    """
    grid = bg.grid
    ginv = metric_inverse(gbar)
    dg, ddg = gradient(gbar, grid), hessian(gbar, grid)
    return rdt_second_order(ddg, ginv, gbar, dg, bg) + rdt_first_order(gbar, dg, ginv, bg)


def rdt_principal(gbar: np.ndarray, bg: Background) -> np.ndarray:
    """``gbar^{ij} nablahat_i nablahat_j gbar``."""
    ginv = metric_inverse(gbar)
    nn = second_covariant_sym2(gbar, bg.gamma, bg.grid, bg.dgamma)
    return symmetrize(np.einsum("...ij,...ijkl->...kl", ginv, nn))


def rdt_lower_order(g, dg, ddg, bg) -> np.ndarray:
    """``R = (-2 Ric + Q) - gbar^{ij} nablahat_i nablahat_j gbar``, node-wise.

    Takes the value and partial derivatives of ``gbar`` as independent
    inputs, so its dependence on each can be probed separately.
    """
    ginv = metric_inverse(g)
    direct = rdt_second_order(ddg, ginv, g, dg, bg) + rdt_first_order(g, dg, ginv, bg)
    nn = second_covariant_sym2(g, bg.gamma, None, bg.dgamma, dT=dg, ddT=ddg)
    return direct - symmetrize(np.einsum("...ij,...ijkl->...kl", ginv, nn))


def rdt_rhs_parabolic(gbar: np.ndarray, bg: Background) -> np.ndarray:
    """Principal part plus the lower-order map R."""
    grid = bg.grid
    R = rdt_lower_order(gbar, gradient(gbar, grid), hessian(gbar, grid), bg)
    return rdt_principal(gbar, bg) + R


# ---------------------------------------------------------- boundary maps

def _face_blocks(gbar_face, bg, face, variant):
    if variant not in ZETA_VARIANTS:
        raise ValueError(f"variant must be one of {ZETA_VARIANTS}")
    m = bg.grid.n - 1
    gh = bg.face(bg.g, face)
    ghinv = bg.face(bg.ginv, face)[..., :m, :m]
    Ihat = bg.II[face]
    gt = gbar_face[..., :m, :m]
    gnn = gbar_face[..., -1, -1]
    S = np.einsum("...ac,...cs,...sb->...ab", gt, ghinv, Ihat)
    S = S + np.swapaxes(S, -1, -2)
    if variant == "derived":
        ratio = gh[..., -1, -1] / gnn
        tinv = np.linalg.inv(gt)
    else:
        full = np.linalg.inv(gbar_face)
        ratio = gh[..., -1, -1] * full[..., -1, -1]
        tinv = full[..., :m, :m]
    return dict(gh_nn=gh[..., -1, -1], gnn=gnn, S=S, Ihat=Ihat, ratio=ratio,
                tr_hat=np.einsum("...ab,...ab->...", ghinv, Ihat),
                tr_bar=np.einsum("...ab,...ab->...", tinv, Ihat))


def _assemble(gbar_face, tangential, nn):
    out = np.zeros_like(gbar_face)
    m = gbar_face.shape[-1] - 1
    out[..., :m, :m] = tangential
    out[..., -1, -1] = nn
    return out


def zeta_map(gbar_face: np.ndarray, bg: Background, face: str, mu_t: float,
             variant: str = "derived") -> np.ndarray:
    """Right-hand side of the mean-curvature boundary condition on ``face``.

    ``variant="derived"`` evaluates the normal factors as ``1/gbar_nn`` and
    the inverse of the induced metric; ``"verbatim"`` uses the components of
    the full inverse metric. The two coincide when the mixed components
    vanish. Mixed components of the result are zero.
    """
    b = _face_blocks(gbar_face, bg, face, variant)
    r = b["ratio"][..., None, None]
    tang = -mu_t * np.sqrt(r) * b["S"] + r * b["S"]
    if variant == "derived":
        nn = (2.0 * b["gnn"] * b["tr_bar"]
              - 2.0 * mu_t * np.sqrt(b["gh_nn"] * b["gnn"]) * b["tr_hat"])
    else:
        nn = -2.0 * b["gnn"] * (mu_t * np.sqrt(b["ratio"]) * b["tr_hat"] - b["tr_bar"])
    return _assemble(gbar_face, tang, nn)


def chi_map(gbar_face: np.ndarray, bg: Background, face: str, variant: str = "derived") -> np.ndarray:
    """Right-hand side of the fixed-second-fundamental-form boundary condition."""
    b = _face_blocks(gbar_face, bg, face, variant)
    r = b["ratio"][..., None, None]
    tang = -2.0 * np.sqrt(r) * b["Ihat"] + r * b["S"]
    nn = -2.0 * (np.sqrt(b["gh_nn"] * b["gnn"]) - b["gnn"]) * b["tr_bar"]
    return _assemble(gbar_face, tang, nn)


def boundary_flux_data(gbar_face: np.ndarray, bg: Background, face: str, t: float,
                       mode: str, mu: MuFunction | None = None,
                       variant: str = "derived") -> np.ndarray:
    """Conormal flux ``sign * gbar^{nj} d_j gbar`` implied by the boundary condition.

    With ``A_jk = Gammahat^p_nj gbar_pk + Gammahat^p_nk gbar_jp`` the
    condition ``-sign sqrt(ghat_nn) gbar^{nn} nablahat_n gbar = rhs`` reads
    ``sign gbar^{nn} d_n gbar = -rhs / sqrt(ghat_nn) + sign gbar^{nn} A``.
    """
    if mode == "mean_curvature":
        rhs = zeta_map(gbar_face, bg, face, (mu or MuFunction.constant())(t), variant)
    elif mode == "convexity":
        rhs = chi_map(gbar_face, bg, face, variant)
    else:
        raise ValueError(f"mode must be one of {MODES}")
    s = FACE_SIGN[face]
    gam_n = bg.face(bg.gamma, face)[..., :, -1, :]          # [p, j] = Gammahat^p_nj
    A = np.einsum("...pj,...pk->...jk", gam_n, gbar_face)
    A = A + np.swapaxes(A, -1, -2)
    ginv_nn = np.linalg.inv(gbar_face)[..., -1, -1]
    gh_nn = bg.face(bg.g, face)[..., -1, -1]
    return (-rhs / np.sqrt(gh_nn)[..., None, None]
            + s * ginv_nn[..., None, None] * A)


# ------------------------------------------------------------ problem

def rdt_problem_spec(ghat: np.ndarray, grid: ChartGrid, mode: str = "mean_curvature",
                     mu: MuFunction | None = None, variant: str = "derived",
                     xi_fraction: float = 0.05, background: Background | None = None,
                     name: str = "rdt") -> ProblemSpec:
    """Ricci-DeTurck flow from ``ghat`` as a :class:`ProblemSpec`.

    The fiber is the packed symmetric tensor (:func:`sym_pack` order): the
    ``n-1`` mixed components form the Dirichlet block on both faces.

    Raises:
        AdaptedChartViolation: if ``ghat`` has mixed components on a face.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    bg = background if background is not None else Background(ghat, grid)
    n = grid.n
    d = n * (n + 1) // 2
    split = SubbundleSplit(d, n - 1)
    mu = mu or MuFunction.constant()
    floor = xi_fraction * bg.margin

    def H(eta, t, x):
        return metric_inverse(sym_unpack(eta, n))

    def F(eta, theta, t, x):
        g = sym_unpack(eta, n)
        return sym_pack(rdt_first_order(g, sym_unpack(theta, n), metric_inverse(g), bg))

    def Psi(eta, t, x, face):
        flux = boundary_flux_data(sym_unpack(eta, n), bg, face, t, mode, mu, variant)
        return split.project_wperp(sym_pack(flux), face)

    def admissible(eta, x):
        return spd_margin(sym_unpack(eta, n)) >= floor

    spec = ProblemSpec(grid, H, F, Psi, split, sym_pack(bg.g), admissible, name=name)
    spec.background = bg
    spec.mode, spec.mu, spec.variant = mode, mu, variant
    return spec


def rdt_monitor(bg: Background, mode: str, mu: MuFunction | None, store: list | None = None):
    """Per-step geometric diagnostics of a packed metric trace."""
    grid, n = bg.grid, bg.grid.n
    mu = mu or MuFunction.constant()

    def monitor(eta, t):
        g = sym_unpack(eta, n)
        ginv = metric_inverse(g)
        gamma = christoffel(g, grid, ginv)
        P = deturck_covector(g, bg, ginv)
        Pv = np.einsum("...ij,...j->...i", ginv, P)
        if store is not None:
            store.append(Pv)
        out = dict(p_tangency_res=max(float(np.max(np.abs(grid.face(Pv, f)[..., -1])))
                                      for f in FACES),
                   spd_margin=float(spd_margin(g).min()))
        err = 0.0
        for f in FACES:
            II = second_fundamental_form(g, grid, f, ginv, gamma)
            out[f"min_II_eig_{f}"] = float(shape_eigenvalues(g, grid, f, II).min())
            if mode == "mean_curvature":
                Hm = mean_curvature(g, grid, f, II)
                err = max(err, float(np.max(np.abs(Hm - mu(t) * bg.H_mean[f]))))
        out["mean_curv_err"] = err if mode == "mean_curvature" else float("nan")
        return out

    return monitor


def evolve_rdt(ghat: np.ndarray, grid: ChartGrid, config: SolverConfig,
               mode: str = "mean_curvature", mu: MuFunction | None = None,
               variant: str = "derived", spec: ProblemSpec | None = None):
    """Run the flow; the trace carries ``extras["P_vector"]`` per stored step.

    Fields in the trace are packed; use :func:`sym_unpack` to recover
    ``gbar``.
    """
    if spec is None:
        spec = rdt_problem_spec(ghat, grid, mode, mu, variant)
    store = []
    monitor = rdt_monitor(spec.background, mode, mu, store)
    try:
        trace = evolve(spec, config, monitor=monitor, compat_threshold=1e-10)
    except Exception as exc:
        if getattr(exc, "trace", None) is not None:
            exc.trace.extras["P_vector"] = store[:len(exc.trace.times)]
        raise
    trace.extras["P_vector"] = store
    trace.extras["background"] = spec.background
    return trace
