"""Discrete calculus on the periodic lattice (Z/LZ)^d.

Site fields are stored as d-dimensional arrays of shape ``(L,)*d`` with axis
``i`` running over coordinate ``i``; edge fields carry one scalar per
(site, direction) pair and have shape ``(d,) + (L,)*d`` (direction-major).
The forward difference ``grad`` and its adjoint ``div_adj`` are exact integer
shifts, so ``<grad f, F> = <f, div_adj F>`` holds to machine precision; the
spectral helpers diagonalise the same operators on the discrete Fourier
modes and are used as preconditioners and oracles throughout the package.

Serialisation: ``to_bytes`` writes float64 in C order, i.e. row-major site
order for site fields and direction-major (direction slowest) for edge
fields.  See the repository README for the layout contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, GridMismatchError

__all__ = [
    "TorusGrid",
    "SiteField",
    "EdgeField",
    "ConductanceField",
    "grad",
    "div_adj",
    "laplacian",
    "apply_operator",
    "site_dot",
    "edge_dot",
    "poisson_solve",
    "helmholtz_project",
]


@dataclass(frozen=True)
class TorusGrid:
    """Periodic cubic lattice with ``L**d`` sites and ``d * L**d`` edges."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"dimension must be >= 1, got {self.d}")
        if self.L < 4 or self.L % 2 != 0:
            raise DomainError(f"side length must be an even integer >= 4, got {self.L}")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def n_edges(self) -> int:
        return self.d * self.L**self.d

    @property
    def site_shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def edge_shape(self) -> tuple[int, ...]:
        return (self.d,) + self.site_shape

    def site_index(self, x) -> int:
        """Flat row-major index of a site given by its coordinate tuple."""
        x = np.mod(np.asarray(x, dtype=int), self.L)
        return int(np.ravel_multi_index(tuple(x), self.site_shape))

    def edge_index(self, x, i: int) -> int:
        """Flat index of the edge (x, x + e_i); direction-major layout."""
        if not 0 <= i < self.d:
            raise DomainError(f"direction {i} outside 0..{self.d - 1}")
        return i * self.n_sites + self.site_index(x)

    def neighbors(self, x) -> list[tuple[int, ...]]:
        """The 2d lattice neighbours of a site under periodic wraparound."""
        x = np.mod(np.asarray(x, dtype=int), self.L)
        out = []
        for i in range(self.d):
            for s in (+1, -1):
                y = x.copy()
                y[i] = (y[i] + s) % self.L
                out.append(tuple(int(v) for v in y))
        return out


def _freeze(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SiteField:
    """One real value per site; immutable after construction."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size != self.grid.n_sites:
            raise GridMismatchError(
                f"site field has {arr.size} values, grid holds {self.grid.n_sites} sites"
            )
        object.__setattr__(self, "values", _freeze(arr.reshape(self.grid.site_shape)))

    def to_bytes(self) -> bytes:
        return self.values.tobytes(order="C")

    @classmethod
    def from_bytes(cls, grid: TorusGrid, raw: bytes) -> "SiteField":
        return cls(grid, np.frombuffer(raw, dtype=np.float64).reshape(grid.site_shape))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float = 0.0) -> "SiteField":
        return cls(grid, np.full(grid.site_shape, float(value)))


@dataclass(frozen=True)
class EdgeField:
    """One real value per (site, direction) pair, direction-major."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size != self.grid.n_edges:
            raise GridMismatchError(
                f"edge field has {arr.size} values, grid holds {self.grid.n_edges} edges"
            )
        object.__setattr__(self, "values", _freeze(arr.reshape(self.grid.edge_shape)))

    def to_bytes(self) -> bytes:
        return self.values.tobytes(order="C")

    @classmethod
    def from_bytes(cls, grid: TorusGrid, raw: bytes) -> "EdgeField":
        return cls(grid, np.frombuffer(raw, dtype=np.float64).reshape(grid.edge_shape))

    @classmethod
    def constant_vector(cls, grid: TorusGrid, eta) -> "EdgeField":
        """Edge field of a constant vector: component i equals eta_i everywhere."""
        eta = np.asarray(eta, dtype=np.float64)
        if eta.shape != (grid.d,):
            raise GridMismatchError(f"direction vector must have length {grid.d}")
        vals = np.broadcast_to(eta.reshape((grid.d,) + (1,) * grid.d), grid.edge_shape)
        return cls(grid, vals.copy())


@dataclass(frozen=True)
class ConductanceField:
    """Per-edge conductances a(e) = 1 + tau * b(zeta_e), uniformly elliptic.

    ``zeta`` is the underlying Gaussian driver and ``b_values`` the profile
    applied to it; both are retained so that series expansions can reuse the
    disorder without dividing by tau.
    """

    grid: TorusGrid
    values: np.ndarray
    zeta: np.ndarray
    b_values: np.ndarray
    tau: float
    profile: str = "tanh"

    def __post_init__(self):
        for name in ("values", "zeta", "b_values"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size != self.grid.n_edges:
                raise GridMismatchError(f"{name} does not match the grid edge count")
            object.__setattr__(self, name, _freeze(arr.reshape(self.grid.edge_shape)))
        lo, hi = 1.0 - self.tau, 1.0 + self.tau
        if self.values.min() < lo - 1e-12 or self.values.max() > hi + 1e-12:
            raise DomainError("conductances leave the interval [1 - tau, 1 + tau]")


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


# Raw-array kernels; the public wrappers below add the field types.

def grad_raw(f: np.ndarray) -> np.ndarray:
    return np.stack([np.roll(f, -1, axis=i) - f for i in range(f.ndim)])


def div_adj_raw(F: np.ndarray) -> np.ndarray:
    out = np.zeros(F.shape[1:], dtype=np.float64)
    for i in range(F.shape[0]):
        out += np.roll(F[i], 1, axis=i) - F[i]
    return out


def grad(f: SiteField) -> EdgeField:
    """Forward difference: (grad f)(x, i) = f(x + e_i) - f(x), periodic."""
    return EdgeField(f.grid, grad_raw(f.values))


def div_adj(F: EdgeField) -> SiteField:
    """Adjoint of grad: (div_adj F)(x) = sum_i [F_i(x - e_i) - F_i(x)]."""
    return SiteField(F.grid, div_adj_raw(F.values))


def laplacian(f: SiteField) -> SiteField:
    """div_adj(grad f), i.e. minus the discrete Laplacian."""
    return SiteField(f.grid, div_adj_raw(grad_raw(f.values)))


def apply_operator(a: ConductanceField, f: SiteField) -> SiteField:
    """u -> div_adj(a * grad u), the heterogeneous divergence-form operator."""
    _check_same_grid(a, f)
    return SiteField(f.grid, div_adj_raw(a.values * grad_raw(f.values)))


def site_dot(f: SiteField, g: SiteField) -> float:
    _check_same_grid(f, g)
    return float(np.vdot(f.values, g.values))


def edge_dot(F: EdgeField, G: EdgeField) -> float:
    _check_same_grid(F, G)
    return float(np.vdot(F.values, G.values))


@lru_cache(maxsize=32)
def _sin2_symbol(d: int, L: int) -> np.ndarray:
    """Symbol of div_adj(grad .): sum_i 4 sin^2(pi k_i / L), shape (L,)*d."""
    s1 = 4.0 * np.sin(np.pi * np.fft.fftfreq(L)) ** 2
    sym = np.zeros((L,) * d)
    for i in range(d):
        sym = sym + s1.reshape((1,) * i + (L,) + (1,) * (d - 1 - i))
    return sym


@lru_cache(maxsize=32)
def _grad_symbol(d: int, L: int) -> tuple[np.ndarray, ...]:
    """Per-direction symbols m_i(k) = exp(2 pi i k_i / L) - 1 of grad."""
    m1 = np.exp(2j * np.pi * np.fft.fftfreq(L)) - 1.0
    out = []
    for i in range(d):
        out.append(m1.reshape((1,) * i + (L,) + (1,) * (d - 1 - i)))
    return tuple(out)


def poisson_solve_raw(rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve (lam + div_adj grad) u = rhs spectrally.

    For lam = 0 the zero mode of rhs is discarded and u has exact zero mean,
    which is the mean-zero inverse on the torus.
    """
    d, L = rhs.ndim, rhs.shape[0]
    sym = lam + _sin2_symbol(d, L)
    rhat = np.fft.fftn(rhs)
    if lam == 0.0:
        sym = sym.copy()
        sym[(0,) * d] = 1.0
        rhat[(0,) * d] = 0.0
    return np.real(np.fft.ifftn(rhat / sym))


def helmholtz_project_raw(F: np.ndarray, lam: float) -> np.ndarray:
    """grad (lam + div_adj grad)^{-1} div_adj F on raw arrays."""
    return grad_raw(poisson_solve_raw(div_adj_raw(F), lam))


def poisson_solve(rhs: SiteField, lam: float = 0.0) -> SiteField:
    if lam < 0:
        raise DomainError(f"mass must be >= 0, got {lam}")
    return SiteField(rhs.grid, poisson_solve_raw(rhs.values, lam))


def helmholtz_project(F: EdgeField, lam: float = 0.0) -> EdgeField:
    """Projection of an edge field onto gradients through (lam - Laplace)^{-1}."""
    if lam < 0:
        raise DomainError(f"mass must be >= 0, got {lam}")
    return EdgeField(F.grid, helmholtz_project_raw(F.values, lam))
