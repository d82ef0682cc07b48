"""Single boundary-adapted coordinate chart ``[0, L_n] x T^(n-1)``.

The last axis is the transverse coordinate ``x_n``; its two end layers are
the boundary faces. All other axes are periodic. Fields are plain numpy
arrays whose leading axes are the node axes (``grid.shape``) and whose
trailing axes hold tensor components.

Difference operators are stored once per grid as sparse matrices acting on
the flattened (C-order) node index, so array-level derivatives and the
implicit system assembled by the solver use exactly the same stencils.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

FACES = ("lower", "upper")
# outward orientation of each transverse face
FACE_SIGN = {"lower": -1.0, "upper": 1.0}


@dataclass(frozen=True)
class ChartGrid:
    """Tensor-product grid with periodic tangential axes.

    Args:
        sizes: node counts per axis; the last axis is transverse.
        lengths: chart extent per axis (default 1 for every axis).
    """

    sizes: tuple
    lengths: tuple = field(default=None)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(sizes)
        lengths = tuple(float(L) for L in lengths)
        if len(sizes) < 1 or len(lengths) != len(sizes):
            raise ValueError("sizes and lengths must have equal, nonzero length")
        if min(sizes) < 4:
            raise ValueError(f"every axis needs at least 4 nodes, got {sizes}")
        if min(lengths) <= 0:
            raise ValueError("chart lengths must be positive")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple:
        return self.sizes

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def transverse_axis(self) -> int:
        return self.n - 1

    @property
    def periodic(self) -> tuple:
        return tuple(a != self.transverse_axis for a in range(self.n))

    @property
    def spacings(self) -> tuple:
        return tuple(
            L / (N if p else N - 1)
            for N, L, p in zip(self.sizes, self.lengths, self.periodic)
        )

    @property
    def h(self) -> float:
        """Largest grid step, used for O(h^2) tolerances."""
        return max(self.spacings)

    @property
    def face_shape(self) -> tuple:
        return self.sizes[:-1]

    def axis_nodes(self, axis: int) -> np.ndarray:
        return np.arange(self.sizes[axis]) * self.spacings[axis]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        axes = [self.axis_nodes(a) for a in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def face_index(self, face: str) -> int:
        return 0 if face == "lower" else self.sizes[-1] - 1

    def face(self, f: np.ndarray, face: str) -> np.ndarray:
        """Restriction of a node field to a boundary face."""
        return f[(slice(None),) * (self.n - 1) + (self.face_index(face),)]

    def boundary_mask(self, face: str | None = None) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        faces = FACES if face is None else (face,)
        for fc in faces:
            mask[(slice(None),) * (self.n - 1) + (self.face_index(fc),)] = True
        return mask

    def cell_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights per node (sum = chart volume)."""
        w = np.full(self.shape, float(np.prod(self.spacings)))
        w[(slice(None),) * (self.n - 1) + (0,)] *= 0.5
        w[(slice(None),) * (self.n - 1) + (-1,)] *= 0.5
        return w


def _d1_periodic(N, h):
    e = np.ones(N)
    D = sp.diags([-e[:-1], e[:-1]], [-1, 1], shape=(N, N), format="lil")
    D[0, N - 1] = -1.0
    D[N - 1, 0] = 1.0
    return (D.tocsr() / (2.0 * h))


def _d2_periodic(N, h):
    e = np.ones(N)
    D = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(N, N), format="lil")
    D[0, N - 1] = 1.0
    D[N - 1, 0] = 1.0
    return D.tocsr() / h**2


def _d1_bounded(N, h):
    e = np.ones(N)
    D = sp.diags([-e[:-1], e[:-1]], [-1, 1], shape=(N, N), format="lil")
    D[0, :4] = np.array([-11.0, 18.0, -9.0, 2.0]) / 3.0
    D[N - 1, N - 4:] = np.array([-2.0, 9.0, -18.0, 11.0]) / 3.0
    return D.tocsr() / (2.0 * h)


def _d2_bounded(N, h):
    e = np.ones(N)
    D = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(N, N), format="lil")
    if N >= 5:
        row = np.array([35.0, -104.0, 114.0, -56.0, 11.0]) / 12.0
    else:
        row = np.array([2.0, -5.0, 4.0, -1.0])
    D[0, :len(row)] = row
    D[N - 1, N - len(row):] = row[::-1]
    return D.tocsr() / h**2


def _embed(grid, axis, op1d):
    mats = [sp.identity(N, format="csr") for N in grid.sizes]
    mats[axis] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


class Stencils:
    """Sparse first- and second-derivative operators of one grid.

    ``d1[a]`` is the second-order first derivative along axis ``a``
    (central on periodic axes and in the transverse interior, four-point
    third-order one-sided on the two boundary layers). ``d2[a][b]`` is the
    compact three-point second derivative when ``a == b`` (five-point
    third-order one-sided on boundary layers, four-point on a 4-node axis)
    and ``d1[a] @ d1[b]`` otherwise; ``d2[a][b]`` and ``d2[b][a]`` are the
    same object.
    """

    def __init__(self, grid: ChartGrid):
        self.grid = grid
        d1_1d, d2_1d = [], []
        for N, h, p in zip(grid.sizes, grid.spacings, grid.periodic):
            d1_1d.append(_d1_periodic(N, h) if p else _d1_bounded(N, h))
            d2_1d.append(_d2_periodic(N, h) if p else _d2_bounded(N, h))
        n = grid.n
        self.d1 = [_embed(grid, a, d1_1d[a]) for a in range(n)]
        self.d2 = [[None] * n for _ in range(n)]
        for a in range(n):
            self.d2[a][a] = _embed(grid, a, d2_1d[a])
            for b in range(a + 1, n):
                mixed = (self.d1[a] @ self.d1[b]).tocsr()
                self.d2[a][b] = self.d2[b][a] = mixed

    def apply(self, op, f: np.ndarray) -> np.ndarray:
        flat = np.asarray(f, dtype=float).reshape(self.grid.num_nodes, -1)
        return np.asarray(op @ flat).reshape(np.shape(f))


@functools.lru_cache(maxsize=32)
def stencils(grid: ChartGrid) -> Stencils:
    return Stencils(grid)
