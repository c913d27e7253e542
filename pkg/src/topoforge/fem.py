"""Plane-stress finite elements on a regular grid of unit square elements.

Node and DOF numbering
----------------------
Nodes live on the ``(nx+1) x (ny+1)`` grid of element corners.  Node
``(i, j)``, with ``i`` along x (``0..nx``) and ``j`` along y (``0..ny``),
gets the index

    node = i * (ny + 1) + j

and carries DOFs ``(2*node, 2*node + 1)`` for its x and y displacement.
Element ``(ex, ey)`` covers the unit square with corners
``(ex, ey) .. (ex+1, ey+1)``; element fields such as densities are stored
as ``(ny, nx)`` arrays indexed ``[ey, ex]`` with flat element index
``e = ey * nx + ex``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-8


class ParameterError(ValueError):
    """Invalid argument to a structural computation."""


class SingularSystemError(RuntimeError):
    """A reduced stiffness system could not be solved reliably."""


@dataclass(frozen=True)
class DesignDomain:
    """Regular nx-by-ny grid of unit square elements."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ParameterError(f"domain must have nx, ny >= 1, got {self.nx}x{self.ny}")

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node_index(self, i: int, j: int) -> int:
        if not (0 <= i <= self.nx and 0 <= j <= self.ny):
            raise ParameterError(f"node ({i},{j}) outside grid {self.nx}x{self.ny}")
        return i * (self.ny + 1) + j

    def element_dofs(self) -> np.ndarray:
        """Per-element DOF indices, shape (n_elements, 8).

        Corner order (ex,ey), (ex+1,ey), (ex+1,ey+1), (ex,ey+1), matching
        the row/column layout of the unit element stiffness matrix.
        """
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ex = ex.ravel()
        ey = ey.ravel()
        n1 = (self.ny + 1) * ex + ey
        n2 = (self.ny + 1) * (ex + 1) + ey
        return np.column_stack(
            [2 * n1, 2 * n1 + 1, 2 * n2, 2 * n2 + 1, 2 * n2 + 2, 2 * n2 + 3, 2 * n1 + 2, 2 * n1 + 3]
        )


@dataclass(frozen=True)
class DensityField:
    """Per-element material densities, shape (ny, nx), in [x_min, 1]."""

    values: np.ndarray
    x_min: float = 1e-3

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ParameterError(f"density field must be 2-D, got shape {values.shape}")
        if self.x_min <= 0:
            raise ParameterError(f"x_min must be positive, got {self.x_min}")
        if np.any(values < self.x_min - 1e-12) or np.any(values > 1.0 + 1e-12):
            raise ParameterError(
                f"densities must lie in [{self.x_min}, 1], got range "
                f"[{values.min()}, {values.max()}]"
            )
        values = np.clip(values, self.x_min, 1.0)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, domain: DesignDomain, value: float, x_min: float = 1e-3) -> "DensityField":
        return cls(np.full((domain.ny, domain.nx), value), x_min=x_min)

    @property
    def volume_fraction(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class ElementStiffness:
    """Unit square bilinear quadrilateral stiffness, 8x8 symmetric."""

    k0: np.ndarray

    def __post_init__(self):
        k0 = np.asarray(self.k0, dtype=float)
        if k0.shape != (8, 8):
            raise ParameterError(f"element stiffness must be 8x8, got {k0.shape}")
        k0.flags.writeable = False
        object.__setattr__(self, "k0", k0)


@dataclass(frozen=True)
class LinearSystem:
    """Assembled global system with encastre constraints at fixed_dofs."""

    K: sp.spmatrix
    F: np.ndarray
    fixed_dofs: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=int))
        if self.K.shape[0] != self.K.shape[1]:
            raise ParameterError(f"stiffness matrix must be square, got {self.K.shape}")
        if F.shape != (self.K.shape[0],):
            raise ParameterError(f"load vector shape {F.shape} does not match K {self.K.shape}")
        if fixed.size and (fixed.min() < 0 or fixed.max() >= F.size):
            raise ParameterError("fixed DOF index outside system")
        F.flags.writeable = False
        fixed.flags.writeable = False
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "fixed_dofs", fixed)


def element_stiffness(young: float = 1.0, poisson: float = 0.3) -> ElementStiffness:
    """Analytically integrated plane-stress Q4 stiffness for a unit square.

    The eight independent coefficients come from exact integration of the
    bilinear shape functions; the full matrix is their standard symmetric
    arrangement, scaled by young / (1 - poisson^2).
    """
    if young <= 0:
        raise ParameterError(f"Young's modulus must be positive, got {young}")
    if not (0 <= poisson < 0.5):
        raise ParameterError(f"Poisson's ratio must lie in [0, 0.5), got {poisson}")
    nu = poisson
    k = np.array(
        [
            1 / 2 - nu / 6,
            1 / 8 + nu / 8,
            -1 / 4 - nu / 12,
            -1 / 8 + 3 * nu / 8,
            -1 / 4 + nu / 12,
            -1 / 8 - nu / 8,
            nu / 6,
            1 / 8 - 3 * nu / 8,
        ]
    )
    idx = np.array(
        [
            [0, 1, 2, 3, 4, 5, 6, 7],
            [1, 0, 7, 6, 5, 4, 3, 2],
            [2, 7, 0, 5, 6, 3, 4, 1],
            [3, 6, 5, 0, 7, 2, 1, 4],
            [4, 5, 6, 7, 0, 1, 2, 3],
            [5, 4, 3, 2, 1, 0, 7, 6],
            [6, 3, 4, 1, 2, 7, 0, 5],
            [7, 2, 1, 4, 3, 6, 5, 0],
        ]
    )
    return ElementStiffness(young / (1 - nu**2) * k[idx])


def assemble_global(
    domain: DesignDomain,
    density: DensityField,
    penal: float,
    k0: ElementStiffness,
) -> sp.csc_matrix:
    """Assemble K = sum_e x_e^penal * scatter(k0) as a sparse CSC matrix."""
    if density.values.shape != (domain.ny, domain.nx):
        raise ParameterError(
            f"density shape {density.values.shape} does not match domain "
            f"({domain.ny}, {domain.nx})"
        )
    if penal < 1:
        raise ParameterError(f"penalization exponent must be >= 1, got {penal}")
    edofs = domain.element_dofs()
    scale = density.values.ravel() ** penal
    data = (k0.k0[None, :, :] * scale[:, None, None]).ravel()
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    n = domain.n_dofs
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()


AUTO_CG_DOFS = 200_000


def solve_equilibrium(
    system: LinearSystem,
    method: str = "direct",
    cg_tol: float = 1e-10,
) -> np.ndarray:
    """Solve K U = F with fixed DOFs eliminated; U = 0 at fixed DOFs.

    method "direct" factorizes the reduced system; "cg" runs a
    diagonally-preconditioned conjugate gradient, useful on large grids;
    "auto" picks CG above AUTO_CG_DOFS unknowns.
    """
    if system.fixed_dofs.size == 0:
        raise ParameterError("equilibrium solve requires at least one fixed DOF")
    if not np.all(np.isfinite(system.F)):
        raise ParameterError("load vector contains non-finite entries")
    n = system.F.size
    free = np.setdiff1d(np.arange(n), system.fixed_dofs, assume_unique=False)
    U = np.zeros(n)
    if free.size == 0:
        return U
    K_free = system.K.tocsc()[free][:, free]
    F_free = system.F[free]
    if method == "auto":
        method = "cg" if free.size > AUTO_CG_DOFS else "direct"

    if method == "direct":
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                u_free = spla.spsolve(K_free, F_free)
            except (spla.MatrixRankWarning, RuntimeError) as exc:
                raise SingularSystemError(
                    "equilibrium solve: reduced stiffness matrix is singular "
                    "(unsupported load path)"
                ) from exc
    elif method == "cg":
        diag = K_free.diagonal()
        if np.any(diag <= 0):
            raise SingularSystemError(
                "equilibrium solve: non-positive diagonal in reduced stiffness matrix"
            )
        precond = sp.diags(1.0 / diag)
        u_free, info = spla.cg(K_free, F_free, rtol=cg_tol, atol=0.0, M=precond)
        if info != 0:
            raise SingularSystemError(
                f"equilibrium solve: conjugate gradient failed (info={info})"
            )
    else:
        raise ParameterError(f"unknown solve method {method!r}")

    if not np.all(np.isfinite(u_free)):
        raise SingularSystemError(
            "equilibrium solve: non-finite displacements (unsupported load path)"
        )
    ref = max(float(np.linalg.norm(F_free)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(K_free @ u_free - F_free)) / ref
    if residual > RESIDUAL_TOL:
        raise SingularSystemError(
            f"equilibrium solve: residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e} "
            "(near-singular reduced system)"
        )
    U[free] = u_free
    return U


def compliance(U: np.ndarray, F: np.ndarray) -> float:
    """External work F . U, equal to U^T K U at equilibrium."""
    U = np.asarray(U, dtype=float)
    F = np.asarray(F, dtype=float)
    if U.shape != F.shape:
        raise ParameterError(f"displacement shape {U.shape} does not match load {F.shape}")
    return float(F @ U)


def element_strain_energies(
    domain: DesignDomain,
    U: np.ndarray,
    k0: ElementStiffness,
) -> np.ndarray:
    """Per-element u_e^T k0 u_e, shape (ny, nx); density scaling not applied."""
    ue = np.asarray(U, dtype=float)[domain.element_dofs()]
    ce = np.einsum("ni,ij,nj->n", ue, k0.k0, ue)
    return ce.reshape(domain.ny, domain.nx)


def elemental_compliance(
    domain: DesignDomain,
    density: DensityField,
    penal: float,
    k0: ElementStiffness,
    U: np.ndarray,
) -> float:
    """Compliance recomputed element-wise: sum_e x_e^p u_e^T k0 u_e."""
    ce = element_strain_energies(domain, U, k0)
    return float(np.sum(density.values**penal * ce))
