"""Quasilinear parabolic systems with mixed subbundle boundary conditions.

Solves, for a section ``u`` with fiber ``R^d`` on a :class:`ChartGrid`::

    du/dt - H^{ij}(u, t) D_i D_j u = F(u, Du, t)        interior nodes
    Pr_W u = 0                                          boundary faces
    Pr_{W-perp}(H^{ij}(u, t) nu_i D_j u) = Psi(u, t)    boundary faces
    u(., 0) = u0

with backward Euler in time and, per step, the frozen-coefficient
fixed-point map: the principal part is frozen at ``H0`` and the remainder
is moved to the right-hand side, evaluated at the previous iterate.

The connection on the fiber is the flat one of the chart trivialization
and ``nu = sign * dx_n`` is the unit conormal of the flat chart metric.

Callback conventions (all vectorized over leading node axes):

* ``H(eta, t, x) -> (..., n, n)``; must act node-wise.
* ``F(eta, theta, t, x) -> (..., d)`` with ``theta[..., j, c] = D_j u^c``;
  always called with whole-grid arrays.
* ``Psi(eta, t, x, face) -> (..., d)``; called with face arrays.
* ``admissible(eta, x) -> bool mask`` describing the open set Xi.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (IncompatibleData, LeftAdmissibleSet, LinearSolveFailure,
                     NoContraction, NotParabolic, SolverError)
from .grid import FACE_SIGN, FACES, ChartGrid, stencils
from .tensor_core import gradient, hessian

log = logging.getLogger(__name__)

FREEZE_MODES = ("lagged", "initial")


@dataclass(frozen=True)
class SubbundleSplit:
    """Coordinate split ``W + W-perp`` of the fiber over each face.

    ``W`` is spanned by the first ``d_prime`` fiber coordinates; a single
    integer applies to both faces.
    """

    # TODO(per-node split): W varying along a face needs per-node projection matrices.

    d: int
    d_prime: tuple = (0, 0)

    def __post_init__(self):
        dp = self.d_prime
        if np.isscalar(dp):
            dp = (int(dp), int(dp))
        dp = tuple(int(v) for v in dp)
        if len(dp) != 2 or not all(0 <= v <= self.d for v in dp):
            raise ValueError(f"d_prime must lie in [0, {self.d}], got {self.d_prime}")
        object.__setattr__(self, "d_prime", dp)

    def dirichlet_count(self, face: str) -> int:
        return self.d_prime[FACES.index(face)]

    def project_w(self, eta: np.ndarray, face: str) -> np.ndarray:
        out = np.zeros_like(eta)
        k = self.dirichlet_count(face)
        out[..., :k] = eta[..., :k]
        return out

    def project_wperp(self, eta: np.ndarray, face: str) -> np.ndarray:
        out = np.array(eta, dtype=float, copy=True)
        out[..., :self.dirichlet_count(face)] = 0.0
        return out


@dataclass
class ProblemSpec:
    grid: ChartGrid
    H: Callable
    F: Callable
    Psi: Callable
    split: SubbundleSplit
    u0: np.ndarray
    admissible: Callable | None = None
    name: str = ""

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        expected = self.grid.shape + (self.split.d,)
        if self.u0.shape != expected:
            raise ValueError(f"u0 has shape {self.u0.shape}, expected {expected}")


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    lin_tol: float = 1e-12
    freeze_mode: str = "lagged"

    def __post_init__(self):
        if not self.dt > 0 or not self.t_end > 0:
            raise ValueError("dt and t_end must be positive")
        if not (self.picard_tol > 0 and self.lin_tol > 0) or self.picard_max < 1:
            raise ValueError("tolerances must be positive and picard_max >= 1")
        if self.freeze_mode not in FREEZE_MODES:
            raise ValueError(f"freeze_mode must be one of {FREEZE_MODES}")

    @property
    def num_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class LinearProblem:
    """Frozen-coefficient problem of one implicit step.

    ``K`` is the symmetric principal coefficient ``(..., n, n)``, ``G`` the
    interior right-hand side ``(..., d)`` and ``p[face]`` the W-perp
    Neumann data on each face.
    """

    grid: ChartGrid
    K: np.ndarray
    G: np.ndarray
    p: dict
    split: SubbundleSplit

    def conormal(self, face: str) -> np.ndarray:
        nu = np.zeros(self.grid.n)
        nu[-1] = FACE_SIGN[face]
        return nu


@dataclass
class FlowTrace:
    """Accepted time levels with per-step diagnostics (row 0 is t = 0)."""

    grid: ChartGrid
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def accepted_steps(self) -> int:
        return max(0, len(self.times) - 1)

    def append(self, t, u, diag):
        self.times.append(float(t))
        self.fields.append(np.array(u, copy=True))
        self.diagnostics.append(dict(diag, t=float(t)))

    def column(self, name):
        return np.array([d.get(name, np.nan) for d in self.diagnostics], dtype=float)


# ---------------------------------------------------------------- helpers

def conormal_flux(K: np.ndarray, du: np.ndarray, grid: ChartGrid, face: str) -> np.ndarray:
    """``K^{ij} nu_i D_j u`` on a face; ``K`` and ``du`` are whole-grid arrays."""
    Kf = grid.face(K, face)
    duf = grid.face(du, face)
    return FACE_SIGN[face] * np.einsum("...j,...jc->...c", Kf[..., -1, :], duf)


def _contract_hessian(K, ddu):
    return np.einsum("...ij,...ijc->...c", K, ddu)


def _face_norm(f, grid):
    w = float(np.prod(grid.spacings[:-1])) if grid.n > 1 else 1.0
    return float(np.sqrt(w * np.sum(np.asarray(f) ** 2)))


def _l2(f, grid):
    w = grid.cell_weights()
    f = np.asarray(f).reshape(grid.shape + (-1,))
    return float(np.sqrt(np.sum(w[..., None] * f**2)))


def _first_bad_node(mask):
    bad = np.argwhere(~np.asarray(mask, dtype=bool))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


# ----------------------------------------------------------------- checks

def check_parabolicity(H: Callable, sample_sections, sample_times, grid: ChartGrid) -> float:
    """Smallest value of ``H^{ij} xi_i xi_j`` over unit covectors and samples.

    The minimum over covectors is the smallest eigenvalue of ``H``.

    Raises:
        NotParabolic: at the first node and time where it is not positive.
    """
    x = grid.coords()
    c1 = np.inf
    for u in sample_sections:
        for t in sample_times:
            Hv = np.asarray(H(u, t, x), dtype=float)
            lam = np.linalg.eigvalsh(0.5 * (Hv + np.swapaxes(Hv, -1, -2)))[..., 0]
            if not np.all(lam > 0):
                node = _first_bad_node(lam > 0)
                raise NotParabolic(f"H not positive definite at node {node}, t={t}",
                                   node=node, t=t)
            c1 = min(c1, float(lam.min()))
    return c1


def boundary_residuals(spec: ProblemSpec, u: np.ndarray, t: float) -> tuple:
    """Sup residuals of the Dirichlet and Neumann boundary conditions."""
    grid = spec.grid
    x = grid.coords()
    du = gradient(u, grid)
    Hu = spec.H(u, t, x)
    dres = nres = 0.0
    for face in FACES:
        uf = grid.face(u, face)
        dres = max(dres, float(np.max(np.abs(spec.split.project_w(uf, face)), initial=0.0)))
        flux = spec.split.project_wperp(conormal_flux(Hu, du, grid, face), face)
        psi = spec.split.project_wperp(spec.Psi(uf, t, grid.face(x, face), face), face)
        nres = max(nres, float(np.max(np.abs(flux - psi), initial=0.0)))
    return dres, nres


def check_compatibility(spec: ProblemSpec, threshold: float = 1e-8) -> tuple:
    """Residuals of the zeroth-order compatibility condition at t = 0.

    Raises:
        IncompatibleData: if either residual exceeds ``threshold``.
    """
    dres, nres = boundary_residuals(spec, spec.u0, 0.0)
    if dres > threshold or nres > threshold:
        raise IncompatibleData(
            f"initial data incompatible with boundary conditions "
            f"(dirichlet {dres:.3e}, neumann {nres:.3e}, threshold {threshold:.1e})",
            dirichlet=dres, neumann=nres)
    return dres, nres


# ----------------------------------------------------------- linear step

def relative_residual(A, x, b, A_norm=None) -> np.ndarray:
    """Normwise backward error ``|b - A x| / (|A| |x| + |b|)`` in the max norm, per column."""
    if A_norm is None:
        A_norm = float(abs(A).sum(axis=1).max())
    x2 = x.reshape(x.shape[0], -1)
    b2 = b.reshape(b.shape[0], -1)
    r = np.max(np.abs(b2 - A @ x2), axis=0)
    scale = A_norm * np.max(np.abs(x2), axis=0) + np.max(np.abs(b2), axis=0)
    out = np.where(scale > 0, r / np.where(scale > 0, scale, 1.0), 0.0)
    return out if x.ndim > 1 else out[0]


def krylov_solve(A, b, x0=None, tol=1e-12, maxiter=500):
    """GMRES with an incomplete-LU preconditioner; returns ``(x, rel_residual)``."""
    A = sp.csc_matrix(A)
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError:
        M = None
    x, _ = spla.gmres(A, b, x0=x0, rtol=tol * 0.1, atol=0.0, restart=100,
                      maxiter=maxiter, M=M)
    return x, float(relative_residual(A, x, b))


class _AssemblyPattern:
    """Union sparsity pattern of all stencils of a grid.

    Every operator the solver assembles is a sum of row-scaled stencils, so
    a matrix is built by accumulating scaled stencil entries into one data
    array.
    """

    def __init__(self, grid: ChartGrid):
        st = stencils(grid)
        n, N = grid.n, grid.num_nodes
        ops = {("I",): sp.identity(N, format="csr")}
        for a in range(n):
            ops[("d1", a)] = st.d1[a]
            for b in range(a, n):
                ops[("d2", a, b)] = st.d2[a][b]
        union = sum(abs(op) for op in ops.values()).tocsr()
        union.sort_indices()
        self.indptr, self.indices = union.indptr, union.indices
        self.N = N
        keys = np.repeat(np.arange(N), np.diff(self.indptr)) * N + self.indices
        self.maps = {}
        for name, op in ops.items():
            coo = op.tocoo()
            pos = np.searchsorted(keys, coo.row.astype(np.int64) * N + coo.col)
            self.maps[name] = (pos, coo.row, coo.data)

    def build(self, coeffs: dict):
        data = np.zeros(len(self.indices))
        for name, c in coeffs.items():
            pos, rows, vals = self.maps[name]
            data[pos] += np.asarray(c)[rows] * vals
        return sp.csc_matrix(sp.csr_matrix((data, self.indices, self.indptr),
                                           shape=(self.N, self.N)))


@functools.lru_cache(maxsize=16)
def _assembly_pattern(grid: ChartGrid) -> _AssemblyPattern:
    return _AssemblyPattern(grid)


class ImplicitOperator:
    """Assembled backward-Euler system for a frozen ``K``.

    Fiber components decouple because ``K`` acts as a scalar operator on the
    fiber, so one sparse matrix is built per distinct boundary pattern (each
    face Dirichlet or Neumann for that component).

    Without ``preconditioner`` every matrix is factorized directly. With it,
    the factors of that earlier operator precondition GMRES and a direct
    factorization is made only if GMRES misses ``lin_tol``;
    ``refactorized`` records whether that happened.
    """

    def __init__(self, grid: ChartGrid, K: np.ndarray, split: SubbundleSplit, dt: float,
                 lin_tol: float = 1e-12, preconditioner: "ImplicitOperator | None" = None):
        self.grid, self.split, self.dt, self.lin_tol = grid, split, dt, lin_tol
        n, N = grid.n, grid.num_nodes
        Kf = np.asarray(K, dtype=float).reshape(N, n, n)
        pattern = _assembly_pattern(grid)
        self.face_nodes = {f: np.flatnonzero(grid.boundary_mask(f)) for f in FACES}
        self.interior = ~grid.boundary_mask().ravel()
        inner = self.interior.astype(float)
        masks = {f: grid.boundary_mask(f).ravel().astype(float) for f in FACES}
        self.patterns = {}
        for c in range(split.d):
            key = tuple(c < split.dirichlet_count(f) for f in FACES)
            self.patterns.setdefault(key, []).append(c)
        self.matrices, self.factors = {}, {}
        for key in self.patterns:
            coeffs = {("I",): inner / dt}
            for a in range(n):
                for b in range(a, n):
                    coeffs[("d2", a, b)] = -(1.0 if a == b else 2.0) * inner * Kf[:, a, b]
            flux_row = np.zeros(N)
            for f, is_dir in zip(FACES, key):
                if is_dir:
                    coeffs[("I",)] = coeffs[("I",)] + masks[f]
                else:
                    flux_row += FACE_SIGN[f] * masks[f]
            for j in range(n):
                coeffs[("d1", j)] = flux_row * Kf[:, n - 1, j]
            self.matrices[key] = pattern.build(coeffs)
        self.norms = {key: float(abs(A).sum(axis=1).max()) for key, A in self.matrices.items()}
        ref = preconditioner
        if ref is not None and (ref.grid != grid or ref.dt != dt
                                or set(ref.patterns) != set(self.patterns)):
            ref = None
        self.reference = ref
        self.refactorized = False
        if ref is None:
            for key in self.patterns:
                self._factorize(key)

    def _factorize(self, key):
        try:
            self.factors[key] = spla.splu(self.matrices[key])
        except RuntimeError as exc:
            log.warning("sparse LU failed (%s); using Krylov iteration", exc)
            self.factors[key] = None
        self.refactorized = True

    def _direct(self, key, B):
        A, lu, An = self.matrices[key], self.factors[key], self.norms[key]
        if lu is None:
            return np.zeros_like(B), np.full(B.shape[1], np.inf)
        X = lu.solve(B)
        for _ in range(3):
            if np.all(relative_residual(A, X, B, An) <= self.lin_tol):
                break
            X = X + lu.solve(B - A @ X)
        return X, relative_residual(A, X, B, An)

    def _preconditioned(self, key, B):
        A = self.matrices[key]
        lu = self.reference.factors.get(key)
        if lu is None:
            return np.zeros_like(B), np.full(B.shape[1], np.inf)
        M = spla.LinearOperator(A.shape, lu.solve)
        X = np.asarray(lu.solve(B))
        An = self.norms[key]
        rel = relative_residual(A, X, B, An)
        for j in np.flatnonzero(rel > self.lin_tol):
            X[:, j], _ = spla.gmres(A, B[:, j], x0=X[:, j], M=M, rtol=0.1 * self.lin_tol,
                                    atol=0.0, restart=40, maxiter=2)
            rel[j] = relative_residual(A, X[:, j], B[:, j], An)
        return X, rel

    def solve(self, G, v_prev, p):
        """Return ``(v, max relative residual)``."""
        b = self.rhs(G, v_prev, p)
        x = np.zeros_like(b)
        worst = 0.0
        for key, comps in self.patterns.items():
            B = b[:, comps]
            if key in self.factors:
                X, rel = self._direct(key, B)
            else:
                X, rel = self._preconditioned(key, B)
                if np.any(rel > self.lin_tol):
                    self._factorize(key)
                    X, rel = self._direct(key, B)
            for j in np.flatnonzero(rel > self.lin_tol):
                X[:, j], rel[j] = krylov_solve(self.matrices[key], B[:, j], X[:, j], self.lin_tol)
            if np.any(rel > self.lin_tol):
                raise LinearSolveFailure(
                    f"linear residual {rel.max():.3e} above lin_tol {self.lin_tol:.1e}",
                    residual=float(rel.max()))
            x[:, comps] = X
            worst = max(worst, float(rel.max(initial=0.0)))
        for f in FACES:
            x[self.face_nodes[f], :self.split.dirichlet_count(f)] = 0.0
        return x.reshape(self.grid.shape + (self.split.d,)), worst

    def rhs(self, G, v_prev, p):
        N, d = self.grid.num_nodes, self.split.d
        b = np.zeros((N, d))
        b[self.interior] = (G + v_prev / self.dt).reshape(N, d)[self.interior]
        for f in FACES:
            k = self.split.dirichlet_count(f)
            pf = np.asarray(p[f], dtype=float).reshape(-1, d)
            b[self.face_nodes[f], k:] = pf[:, k:]
        return b


def ellipticity_constant(K: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (K + np.swapaxes(K, -1, -2)))[..., 0].min())


def is_elliptic(K: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(0.5 * (K + np.swapaxes(K, -1, -2)))
    except np.linalg.LinAlgError:
        return False
    return True


def solve_linear_step(lp: LinearProblem, v_prev: np.ndarray, dt: float,
                      lin_tol: float = 1e-12, operator: ImplicitOperator | None = None):
    """One backward-Euler step of the frozen-coefficient problem.

    Solves ``(v - v_prev)/dt - K^{ij} D_i D_j v = G`` at interior nodes with
    ``Pr_W v = 0`` and ``Pr_{W-perp}(K^{ij} nu_i D_j v) = p`` on the faces.

    Returns:
        ``(v, relative_residual)``.

    Raises:
        NotParabolic: if ``K`` is not uniformly elliptic.
        LinearSolveFailure: if the residual target is missed.
    """
    if operator is None:
        c2 = ellipticity_constant(lp.K)
        if not c2 > 0:
            raise NotParabolic(f"frozen coefficient not elliptic (c2={c2:.3e})", c2=c2)
        operator = ImplicitOperator(lp.grid, lp.K, lp.split, dt, lin_tol)
    return operator.solve(lp.G, v_prev, lp.p)


def stability_ratio(lp: LinearProblem, v: np.ndarray, v_prev: np.ndarray, dt: float) -> float:
    """Discrete analogue of the constant in the a-priori estimate of a step.

    The step is rewritten for the increment ``v - v_prev`` (zero initial
    data); the ratio is its discrete W^{2,1}_2 size over the size of the
    data that drives it; zero data gives 0.
    """
    grid = lp.grid
    delta = v - v_prev
    st = stencils(grid)
    num = _l2(delta, grid) + _l2(delta / dt, grid)
    for a in range(grid.n):
        for b in range(grid.n):
            num += _l2(st.apply(st.d2[a][b], delta), grid)
    if num == 0.0:
        return 0.0
    G_inc = lp.G + _contract_hessian(lp.K, hessian(v_prev, grid))
    den = _l2(G_inc, grid)
    dv = gradient(v_prev, grid)
    for f in FACES:
        p_inc = lp.p[f] - conormal_flux(lp.K, dv, grid, f)
        den += _face_norm(lp.split.project_wperp(p_inc, f), grid)
    if den == 0.0:
        return 0.0
    return float(num / den)


# ------------------------------------------------------------ fixed point

def frozen_principal_part(spec: ProblemSpec, w: np.ndarray, t: float, freeze_mode: str):
    x = spec.grid.coords()
    if freeze_mode == "initial":
        return spec.H(spec.u0, 0.0, x)
    if freeze_mode == "lagged":
        return spec.H(w, t, x)
    raise ValueError(f"unknown freeze_mode {freeze_mode!r}")


def assemble_picard_problem(spec: ProblemSpec, w: np.ndarray, t: float, H0: np.ndarray) -> LinearProblem:
    """Linear problem whose solution is the fixed-point map applied to ``w``."""
    grid = spec.grid
    x = grid.coords()
    Hw = spec.H(w, t, x)
    dw = gradient(w, grid)
    dH = Hw - H0
    G = spec.F(w, dw, t, x)
    if np.any(dH != 0.0):
        G = G + _contract_hessian(dH, hessian(w, grid))
    p = {}
    for f in FACES:
        psi = spec.Psi(grid.face(w, f), t, grid.face(x, f), f)
        corr = conormal_flux(dH, dw, grid, f)
        p[f] = spec.split.project_wperp(psi - corr, f)
    return LinearProblem(grid, H0, G, p, spec.split)


def picard_operator(spec: ProblemSpec, u_t: np.ndarray, w: np.ndarray, t: float, dt: float,
                    freeze_mode: str = "lagged", lin_tol: float = 1e-12) -> np.ndarray:
    """Apply the frozen-coefficient fixed-point map to ``w``.

    ``u_t`` is the accepted value at the previous time level and ``t`` the
    new time level.

    Raises:
        LeftAdmissibleSet: if ``w`` lies outside the admissible set.
    """
    _require_admissible(spec, w)
    H0 = frozen_principal_part(spec, w, t, freeze_mode)
    lp = assemble_picard_problem(spec, w, t, H0)
    v, _ = solve_linear_step(lp, u_t, dt, lin_tol)
    return v


def _require_admissible(spec, w):
    if spec.admissible is None:
        return
    mask = spec.admissible(w, spec.grid.coords())
    if not np.all(mask):
        node = _first_bad_node(mask)
        raise LeftAdmissibleSet(f"iterate left the admissible set at node {node}", node=node)


# --------------------------------------------------------------- time loop

def evolve(spec: ProblemSpec, config: SolverConfig, monitor: Callable | None = None,
           compat_threshold: float = 1e-8, check: bool = True) -> FlowTrace:
    """Backward-Euler time loop with a Picard iteration per step.

    ``monitor(u, t)`` may return extra per-step diagnostics. Solver errors
    are re-raised with the trace up to the failure attached as ``.trace``.
    """
    grid = spec.grid
    x = grid.coords()
    if check:
        check_parabolicity(spec.H, [spec.u0], [0.0], grid)
        check_compatibility(spec, compat_threshold)

    trace = FlowTrace(grid)
    u = spec.u0.copy()
    dres, nres = boundary_residuals(spec, u, 0.0)
    diag0 = dict(step=0, picard_iters=0, picard_residuals=[], lin_residual=0.0,
                 stability_ratio=0.0, bc_dirichlet_res=dres, bc_neumann_res=nres)
    if monitor is not None:
        diag0.update(monitor(u, 0.0))
    trace.append(0.0, u, diag0)

    dt = config.dt
    initial_op = ref_op = u_prev = None
    if config.freeze_mode == "initial":
        H0_initial = spec.H(spec.u0, 0.0, x)
        initial_op = ImplicitOperator(grid, H0_initial, spec.split, dt, config.lin_tol)

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(1, config.num_steps + 1):
                t = step * dt
                # linear extrapolation in time as the first Picard iterate
                w = u if u_prev is None else 2.0 * u - u_prev
                residuals = []
                for it in range(1, config.picard_max + 1):
                    _require_admissible(spec, w)
                    if initial_op is not None:
                        op = initial_op
                        lp = assemble_picard_problem(spec, w, t, H0_initial)
                    else:
                        H0 = spec.H(w, t, x)
                        if not is_elliptic(H0):
                            c2 = ellipticity_constant(H0)
                            raise NotParabolic(f"frozen coefficient not elliptic at t={t} (c2={c2:.3e})",
                                               t=t, c2=c2)
                        op = ImplicitOperator(grid, H0, spec.split, dt, config.lin_tol,
                                              preconditioner=ref_op)
                        lp = assemble_picard_problem(spec, w, t, H0)
                    v, lin_res = op.solve(lp.G, u, lp.p)
                    if op.refactorized:
                        ref_op = op
                    res = float(np.max(np.abs(v - w)))
                    residuals.append(res)
                    if not np.isfinite(res) or not np.all(np.isfinite(v)):
                        raise NoContraction(f"Picard iteration diverged at t={t}", t=t,
                                            residuals=residuals)
                    w = v
                    if res <= config.picard_tol:
                        break
                else:
                    raise NoContraction(
                        f"Picard iteration did not reach {config.picard_tol:.1e} in "
                        f"{config.picard_max} iterations at t={t} (last residual {res:.3e})",
                        t=t, residuals=residuals)
                _require_admissible(spec, w)
                ratio = stability_ratio(lp, w, u, dt)
                u_prev, u = u, w
                dres, nres = boundary_residuals(spec, u, t)
                diag = dict(step=step, picard_iters=it, picard_residuals=residuals,
                            lin_residual=lin_res, stability_ratio=ratio,
                            bc_dirichlet_res=dres, bc_neumann_res=nres)
                if monitor is not None:
                    diag.update(monitor(u, t))
                trace.append(t, u, diag)
                log.debug("t=%.6g picard=%d res=%.3e", t, it, res)
    except SolverError as exc:
        exc.trace = trace
        raise
    return trace


def shift_to_zero_initial(spec: ProblemSpec) -> ProblemSpec:
    """Rewrite the problem for ``u - u0`` so that the initial section is zero.

    The discrete derivatives of ``u0`` are the solver's own stencils, so the
    shifted problem is the same discrete problem in new unknowns.
    """
    u0 = spec.u0
    if not np.any(u0):
        return spec
    grid = spec.grid
    du0 = gradient(u0, grid)
    ddu0 = hessian(u0, grid)
    split = spec.split
    H, F, Psi = spec.H, spec.F, spec.Psi

    def H_s(eta, t, x):
        return H(eta + _match(u0, eta, x, grid), t, x)

    def F_s(eta, theta, t, x):
        shifted = eta + u0
        return F(shifted, theta + du0, t, x) + _contract_hessian(H(shifted, t, x), ddu0)

    def Psi_s(eta, t, x, face):
        u0f = grid.face(u0, face)
        Hf = H(eta + u0f, t, x)
        flux = FACE_SIGN[face] * np.einsum("...j,...jc->...c", Hf[..., -1, :],
                                           grid.face(du0, face))
        return Psi(eta + u0f, t, x, face) - split.project_wperp(flux, face)

    admissible = None
    if spec.admissible is not None:
        def admissible(eta, x):
            return spec.admissible(eta + u0, x)

    return replace(spec, H=H_s, F=F_s, Psi=Psi_s, u0=np.zeros_like(u0),
                   admissible=admissible, name=f"{spec.name}[shifted]")


def _match(u0, eta, x, grid):
    # H may be evaluated on whole fields or on face restrictions
    if eta.shape == u0.shape:
        return u0
    r = np.asarray(x)[..., -1]
    for f in FACES:
        uf = grid.face(u0, f)
        if uf.shape == eta.shape and np.allclose(r, grid.axis_nodes(grid.n - 1)[grid.face_index(f)]):
            return uf
    raise ValueError("cannot align shifted section with argument shape")
