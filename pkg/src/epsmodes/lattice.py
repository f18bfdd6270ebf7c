"""Periodic staggered lattice and mimetic difference operators.

The grid is a periodic box of ``nx * ny * nz`` cubic cells with spacing
``s`` (natural units: c = eps0 = mu0 = hbar = 1).  Scalars live at cell
centers, vector fields either on edges (E/A-like quantities) or faces
(B-like quantities):

* cell center ``(i, j, k)`` sits at ``(i, j, k) * s``,
* the edge sample of component ``a`` is shifted by ``s/2`` along ``a``,
* the face sample of component ``a`` is shifted by ``s/2`` along the two
  transverse axes.

``grad`` uses forward differences, ``div`` backward differences, and the
two curls are exact adjoints of one another, so the chain identities
``curl(grad(.)) = 0`` and ``div(curl_t(.)) = 0`` hold to rounding error
and ``<grad phi, V> = -<phi, div V>`` holds exactly in exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, PlacementError

CELL_CENTER = "cell-center"
EDGE = "edge"
FACE = "face"

_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


@dataclass(frozen=True)
class Grid:
    """Periodic cubic-cell lattice geometry."""

    dims: tuple[int, int, int]
    spacing: float = 1.0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValueError(f"dims must be three integers >= 1, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if not (self.spacing > 0.0 and np.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive and finite, got {self.spacing}")

    @property
    def ncells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def volume(self) -> float:
        return self.ncells * self.cell_volume

    @property
    def lengths(self) -> tuple[float, float, float]:
        return tuple(n * self.spacing for n in self.dims)

    def component_offsets(self, placement: str) -> np.ndarray:
        """Half-cell offsets (units of spacing) of each vector component."""
        if placement == EDGE:
            return 0.5 * np.eye(3)
        if placement == FACE:
            return 0.5 * (np.ones((3, 3)) - np.eye(3))
        if placement == CELL_CENTER:
            return np.zeros((3, 3))
        raise PlacementError(f"unknown placement {placement!r}")

    def component_positions(self, placement: str, comp: int) -> np.ndarray:
        """Sample coordinates of one component, shape (nx, ny, nz, 3)."""
        off = self.component_offsets(placement)[comp]
        axes = [
            (np.arange(n) + off[a]) * self.spacing for a, n in enumerate(self.dims)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)


def _check_values(values: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{what} values must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} values contain non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    """Cell-centered scalar samples over a grid."""

    grid: Grid
    values: np.ndarray
    placement: str = CELL_CENTER

    def __post_init__(self):
        if self.placement != CELL_CENTER:
            raise PlacementError(f"scalar fields are cell-centered, got {self.placement!r}")
        object.__setattr__(self, "values", _check_values(self.values, self.grid.dims, "scalar"))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.dims))


@dataclass(frozen=True)
class VectorField:
    """Staggered vector samples, three components per cell."""

    grid: Grid
    placement: str
    values: np.ndarray

    def __post_init__(self):
        if self.placement not in (EDGE, FACE):
            raise PlacementError(f"vector placement must be edge or face, got {self.placement!r}")
        object.__setattr__(
            self, "values", _check_values(self.values, (3,) + self.grid.dims, "vector")
        )

    @classmethod
    def zeros(cls, grid: Grid, placement: str) -> "VectorField":
        return cls(grid, placement, np.zeros((3,) + grid.dims))


def _require_placement(field, placement: str, op: str):
    if field.placement != placement:
        raise PlacementError(f"{op} requires {placement} placement, got {field.placement!r}")


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


# Raw array kernels.  Scalars are (nx, ny, nz, ...), vectors (3, nx, ny, nz, ...);
# trailing axes are broadcast batches.  Used directly by the solvers.


def dplus(arr: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return (np.roll(arr, -1, axis=axis) - arr) / spacing


def dminus(arr: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return (arr - np.roll(arr, 1, axis=axis)) / spacing


def grad_raw(phi: np.ndarray, spacing: float) -> np.ndarray:
    return np.stack([dplus(phi, a, spacing) for a in range(3)])


def div_raw(v: np.ndarray, spacing: float) -> np.ndarray:
    return sum(dminus(v[a], a, spacing) for a in range(3))


def curl_raw(v: np.ndarray, spacing: float) -> np.ndarray:
    return np.stack(
        [dplus(v[c], b, spacing) - dplus(v[b], c, spacing) for _, b, c in _CYCLIC]
    )


def curl_t_raw(w: np.ndarray, spacing: float) -> np.ndarray:
    return np.stack(
        [dminus(w[c], b, spacing) - dminus(w[b], c, spacing) for _, b, c in _CYCLIC]
    )


# Field-level operators.


def grad(phi: ScalarField) -> VectorField:
    """Forward-difference gradient, cell centers to edges."""
    return VectorField(phi.grid, EDGE, grad_raw(phi.values, phi.grid.spacing))


def div(v: VectorField) -> ScalarField:
    """Backward-difference divergence, edges to cell centers.

    Exact negative adjoint of :func:`grad` under the volume-weighted
    inner product.
    """
    _require_placement(v, EDGE, "div")
    return ScalarField(v.grid, div_raw(v.values, v.grid.spacing))


def curl(v: VectorField) -> VectorField:
    """Mimetic curl taking edge fields to face fields."""
    _require_placement(v, EDGE, "curl")
    return VectorField(v.grid, FACE, curl_raw(v.values, v.grid.spacing))


def curl_t(w: VectorField) -> VectorField:
    """Adjoint curl taking face fields back to edge fields."""
    _require_placement(w, FACE, "curl_t")
    return VectorField(w.grid, EDGE, curl_t_raw(w.values, w.grid.spacing))


def inner(u, v) -> float:
    """Volume-weighted inner product of two fields of equal placement."""
    _require_same_grid(u, v)
    if u.placement != v.placement:
        raise PlacementError(f"placements differ: {u.placement!r} vs {v.placement!r}")
    return float(np.vdot(u.values, v.values)) * u.grid.cell_volume


def norm(u) -> float:
    return float(np.sqrt(inner(u, u)))
