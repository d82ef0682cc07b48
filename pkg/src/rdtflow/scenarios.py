"""Named problem instances with their reference oracles.

Every scenario is checked for parabolicity and compatibility when it is
built; the measured residuals are kept on the :class:`Scenario`.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ManufactureInconsistent, UnknownScenario
from .grid import FACE_SIGN, FACES, ChartGrid
from .parabolic_bundle import (ProblemSpec, SolverConfig, SubbundleSplit, check_compatibility,
                               check_parabolicity, conormal_flux, evolve)
from .ricci_deturck import MuFunction, evolve_rdt, rdt_problem_spec
from .tensor_core import gradient, sym_pack

log = logging.getLogger(__name__)


@dataclass
class ExactSection:
    """Closed-form section with its derivatives.

    Each callback takes node coordinates ``x (..., n)`` and time ``t``:
    ``value -> (..., d)``, ``dx -> (..., n, d)``, ``dxx -> (..., n, n, d)``,
    ``dt -> (..., d)``.
    """

    value: Callable
    dx: Callable
    dxx: Callable
    dt: Callable


@dataclass
class Scenario:
    name: str
    grid: ChartGrid
    spec: ProblemSpec
    kind: str = "parabolic"
    reference: Callable | None = None
    orders: tuple = (2.0, 1.0)
    dt: float = 1e-3
    t_end: float = 0.01
    mode: str | None = None
    mu: MuFunction | None = None
    variant: str = "derived"
    params: dict = field(default_factory=dict)
    compat_residuals: tuple = (0.0, 0.0)
    c1: float = 0.0

    @property
    def is_rdt(self) -> bool:
        return self.kind == "rdt"

    def config(self, dt=None, t_end=None, **kw) -> SolverConfig:
        return SolverConfig(dt=dt or self.dt, t_end=t_end or self.t_end, **kw)

    def solve(self, config: SolverConfig):
        if self.is_rdt:
            return evolve_rdt(None, self.grid, config, self.mode, self.mu, self.variant,
                              spec=self.spec)
        return evolve(self.spec, config, compat_threshold=self.params.get("compat_threshold", 1e-8))

    def reference_field(self, t: float):
        if self.reference is None:
            return None
        return self.reference(self.grid.coords(), t)


# ----------------------------------------------------------- manufacture

def manufacture(u_exact: ExactSection, skeleton: ProblemSpec) -> ProblemSpec:
    """Add forcing and boundary data so that ``u_exact`` solves the problem.

    The interior forcing uses the closed-form derivatives. The boundary
    data uses the discrete conormal flux of the sampled exact section, so
    the initial data are compatible to round-off.

    Raises:
        ManufactureInconsistent: if the Dirichlet block of ``u_exact`` is
            nonzero on a face.
    """
    grid, split = skeleton.grid, skeleton.split
    x = grid.coords()
    for t in (0.0, 0.37, 1.0):
        u = u_exact.value(x, t)
        for f in FACES:
            bad = float(np.max(np.abs(split.project_w(grid.face(u, f), f)), initial=0.0))
            if bad > 1e-12:
                raise ManufactureInconsistent(
                    f"exact section has Dirichlet block {bad:.3e} on the {f} face at t={t}",
                    face=f, t=t)
    H, F, Psi = skeleton.H, skeleton.F, skeleton.Psi

    @functools.lru_cache(maxsize=4)
    def forcing(t):
        u = u_exact.value(x, t)
        du = u_exact.dx(x, t)
        Hu = H(u, t, x)
        return (u_exact.dt(x, t) - np.einsum("...ij,...ijc->...c", Hu, u_exact.dxx(x, t))
                - F(u, du, t, x))

    def F_m(eta, theta, t, x_):
        return F(eta, theta, t, x_) + forcing(t)

    @functools.lru_cache(maxsize=8)
    def flux_data(t, face):
        u = u_exact.value(x, t)
        du = gradient(u, grid)
        flux = conormal_flux(H(u, t, x), du, grid, face)
        uf = grid.face(u, face)
        return split.project_wperp(flux - Psi(uf, t, grid.face(x, face), face), face)

    def Psi_m(eta, t, x_, face):
        return Psi(eta, t, x_, face) + flux_data(t, face)

    u0 = u_exact.value(x, 0.0)
    return ProblemSpec(grid, H, F_m, Psi_m, split, u0, skeleton.admissible,
                       name=skeleton.name or "manufactured")


# -------------------------------------------------------------- builders

def _zero_F(eta, theta, t, x):
    return np.zeros_like(eta)


def _zero_Psi(eta, t, x, face):
    return np.zeros_like(eta)


def _identity_H(eta, t, x):
    n = x.shape[-1]
    return np.broadcast_to(np.eye(n), eta.shape[:-1] + (n, n)).copy()


def _heat_dirichlet(sizes=(128,), diffusivity=1.0, offset=0.0, **_):
    """``u_t = k u_xx`` with ``u = 0`` at both ends.

    A negative ``diffusivity`` or a nonzero ``offset`` of the initial data
    plants a construction failure.
    """
    grid = ChartGrid(tuple(sizes))
    x = grid.coords()[..., 0]
    k = float(diffusivity)

    def H(eta, t, x_):
        return k * _identity_H(eta, t, x_)

    spec = ProblemSpec(grid, H, _zero_F, _zero_Psi, SubbundleSplit(1, 1),
                       (np.sin(np.pi * x) + offset)[..., None], name="heat_dirichlet")

    def reference(xc, t):
        return (np.exp(-k * np.pi**2 * t) * np.sin(np.pi * xc[..., 0]))[..., None]

    return dict(grid=grid, spec=spec, reference=reference, dt=5e-5, t_end=0.01)


def neumann_exact() -> ExactSection:
    """``e^{-t} (cos 2 pi x1 cos pi x2 + 1/2 sin 2 pi x1 x2^2)``; x2 is transverse."""
    k = 2 * np.pi

    def parts(x):
        a, b = x[..., 0], x[..., 1]
        return a, b

    def value(x, t):
        a, b = parts(x)
        return (np.exp(-t) * (np.cos(k * a) * np.cos(np.pi * b) + 0.5 * np.sin(k * a) * b**2))[..., None]

    def dx(x, t):
        a, b = parts(x)
        e = np.exp(-t)
        d0 = e * (-k * np.sin(k * a) * np.cos(np.pi * b) + 0.5 * k * np.cos(k * a) * b**2)
        d1 = e * (-np.pi * np.cos(k * a) * np.sin(np.pi * b) + np.sin(k * a) * b)
        return np.stack([d0, d1], axis=-1)[..., None]

    def dxx(x, t):
        a, b = parts(x)
        e = np.exp(-t)
        d00 = e * (-k**2 * np.cos(k * a) * np.cos(np.pi * b) - 0.5 * k**2 * np.sin(k * a) * b**2)
        d01 = e * (k * np.pi * np.sin(k * a) * np.sin(np.pi * b) + k * np.cos(k * a) * b)
        d11 = e * (-np.pi**2 * np.cos(k * a) * np.cos(np.pi * b) + np.sin(k * a))
        out = np.stack([np.stack([d00, d01], -1), np.stack([d01, d11], -1)], -2)
        return out[..., None]

    return ExactSection(value, dx, dxx, lambda x, t: -value(x, t))


def _heat_neumann_manufactured(sizes=(64, 64), **_):
    grid = ChartGrid(tuple(sizes))

    def H(eta, t, x):
        a = 1.0 + 0.25 * eta[..., 0] ** 2
        return a[..., None, None] * np.eye(2)

    exact = neumann_exact()
    skeleton = ProblemSpec(grid, H, _zero_F, _zero_Psi, SubbundleSplit(1, 0),
                           np.zeros(grid.shape + (1,)), name="heat_neumann_manufactured")
    spec = manufacture(exact, skeleton)
    return dict(grid=grid, spec=spec, reference=exact.value, dt=1e-4, t_end=0.05,
                params=dict(compat_threshold=5 * grid.h**2))


COUPLED_COEFF = np.array([[1.0, 0.2], [0.2, 1.0]])


def coupled_sizes(level: int, base=(16, 9)) -> tuple:
    """Nested grids: periodic ``m 2^k``, transverse ``(N-1) 2^k + 1``."""
    return (base[0] * 2**level, (base[1] - 1) * 2**level + 1)


def _coupled_mixed_bc(sizes=None, level=1, kappa=0.5, **_):
    grid = ChartGrid(tuple(sizes) if sizes is not None else coupled_sizes(level))
    x = grid.coords()
    a, b = x[..., 0], x[..., 1]
    u0 = np.stack([0.5 * np.sin(np.pi * b) * (1.0 + 0.5 * np.cos(2 * np.pi * a)),
                   0.3 + 0.4 * np.cos(2 * np.pi * a) * np.cos(np.pi * b)
                   + 0.2 * np.sin(2 * np.pi * a) * b**2], axis=-1)
    split = SubbundleSplit(2, 1)

    def H(eta, t, x_):
        c = 1.0 + 0.25 * np.sin(eta[..., 0]) ** 2
        return c[..., None, None] * COUPLED_COEFF

    def F(eta, theta, t, x_):
        f0 = 0.3 * eta[..., 1] * theta[..., 0, 0] - 0.5 * eta[..., 0]
        f1 = 2.0 * eta[..., 1] + 0.5 * eta[..., 0] * theta[..., 1, 1]
        return np.stack([f0, f1], axis=-1)

    du0 = gradient(u0, grid)
    H0 = H(u0, 0.0, x)
    base_flux = {f: split.project_wperp(conormal_flux(H0, du0, grid, f), f) for f in FACES}
    u0_face = {f: grid.face(u0, f) for f in FACES}

    def Psi(eta, t, x_, face):
        out = np.zeros_like(eta)
        out[..., 1] = kappa * (np.sin(eta[..., 1]) - np.sin(u0_face[face][..., 1]))
        return out + base_flux[face]

    spec = ProblemSpec(grid, H, F, Psi, split, u0, name="coupled_mixed_bc")
    return dict(grid=grid, spec=spec, dt=1e-3, t_end=0.05, params=dict(level=level))


def flat_metric(grid: ChartGrid) -> np.ndarray:
    return np.broadcast_to(np.eye(grid.n), grid.shape + (grid.n, grid.n)).copy()


def s3_band_metric(grid: ChartGrid, a: float = 0.2) -> np.ndarray:
    """Round metric in Hopf coordinates, ``theta = pi/4 - a + 2 a x3``, ``phi_k = 2 pi x_k``."""
    theta = np.pi / 4 - a + 2 * a * grid.coords()[..., -1]
    g = np.zeros(grid.shape + (3, 3))
    g[..., 0, 0] = (2 * np.pi * np.cos(theta)) ** 2
    g[..., 1, 1] = (2 * np.pi * np.sin(theta)) ** 2
    g[..., 2, 2] = (2 * a) ** 2
    return g


def warp(r):
    return 1.0 + 0.3 * (r - 0.5) ** 2


def warped_bowl_metric(grid: ChartGrid) -> np.ndarray:
    """``dr^2 + f(r)^2 (d phi1^2 + d phi2^2)`` with ``phi_k = 2 pi x_k``, ``r = x3``."""
    f = warp(grid.coords()[..., -1])
    g = np.zeros(grid.shape + (3, 3))
    g[..., 0, 0] = g[..., 1, 1] = (2 * np.pi * f) ** 2
    g[..., 2, 2] = 1.0
    return g


def _mu_from(name):
    if isinstance(name, MuFunction):
        return name
    table = {"constant": MuFunction.constant, "shrinking": MuFunction.shrinking,
             "linear": MuFunction.linear}
    if name not in table:
        raise ValueError(f"unknown mu profile {name!r}")
    return table[name]()


def _rdt(name, grid, ghat, mode, mu, variant, **extra):
    spec = rdt_problem_spec(ghat, grid, mode, mu, variant, name=name)
    return dict(grid=grid, spec=spec, kind="rdt", mode=mode, mu=mu, variant=variant, **extra)


def _rdt_flat(sizes=(16, 16, 16), variant="derived", mu="constant", **_):
    grid = ChartGrid(tuple(sizes))
    ghat = flat_metric(grid)
    packed = sym_pack(ghat)
    return _rdt("rdt_flat", grid, ghat, "mean_curvature", _mu_from(mu), variant,
                reference=lambda x, t: packed, dt=1e-4, t_end=0.01)


def _s3_band(sizes=(16, 16, 32), a=0.2, mu="shrinking", variant="derived", **_):
    grid = ChartGrid(tuple(sizes))
    ghat = s3_band_metric(grid, a)
    packed = sym_pack(ghat)
    mu_f = _mu_from(mu)
    reference = (lambda x, t: (1.0 - 4.0 * t) * packed) if mu_f.label.startswith("shrinking") else None
    return _rdt("s3_band", grid, ghat, "mean_curvature", mu_f, variant,
                reference=reference, dt=2e-4, t_end=0.02, params=dict(a=a))


def _warped_bowl(sizes=(16, 16, 32), variant="derived", **_):
    grid = ChartGrid(tuple(sizes))
    return _rdt("warped_bowl", grid, warped_bowl_metric(grid), "convexity", None, variant,
                dt=5e-4, t_end=0.02)


REGISTRY = {
    "heat_dirichlet": _heat_dirichlet,
    "heat_neumann_manufactured": _heat_neumann_manufactured,
    "coupled_mixed_bc": _coupled_mixed_bc,
    "rdt_flat": _rdt_flat,
    "s3_band": _s3_band,
    "warped_bowl": _warped_bowl,
}


def list_scenarios() -> list:
    return sorted(REGISTRY)


def build(name: str, params: dict | None = None) -> Scenario:
    """Assemble a registered scenario and run its construction-time checks.

    Raises:
        UnknownScenario: if ``name`` is not registered.
    """
    if name not in REGISTRY:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {list_scenarios()}",
                              name=name)
    params = dict(params or {})
    parts = REGISTRY[name](**params)
    extra = parts.pop("params", {})
    sc = Scenario(name=name, params={**params, **extra}, **parts)
    sc.c1 = check_parabolicity(sc.spec.H, [sc.spec.u0], [0.0], sc.grid)
    threshold = 1e-10 if sc.is_rdt else sc.params.get("compat_threshold", 1e-8)
    sc.compat_residuals = check_compatibility(sc.spec, threshold)
    return sc
