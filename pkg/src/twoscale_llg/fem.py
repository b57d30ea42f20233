"""P1 assembly on :class:`~twoscale_llg.mesh.StructuredMesh`.

Variable coefficients are sampled once per element at the centroid. Load
vectors use the same one-point rule, so cell averages computed with
:func:`integrate_elementwise` are exactly consistent with assembled sources.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import StructuredMesh


class CoefficientError(ValueError):
    """Coefficient sample that is not symmetric positive definite."""


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """CSR matrix plus the structural flags the solvers rely on."""

    matrix: sp.csr_matrix
    symmetric: bool = False
    constant_nullspace: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def diagonal(self):
        return self.matrix.diagonal()


# 3-point (2D) / 4-point (3D) degree-2 rules in barycentric coordinates
_A3 = 0.5854101966249685
_B3 = 0.1381966011250105
QUADRATURE = {
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    3: (np.array([[_A3, _B3, _B3, _B3], [_B3, _A3, _B3, _B3],
                  [_B3, _B3, _A3, _B3], [_B3, _B3, _B3, _A3]]),
        np.full(4, 1 / 4)),
}


def quadrature_points(mesh: StructuredMesh):
    """Physical quadrature points ``(n_elem, n_q, dim)`` and barycentric weights."""
    lam, w = QUADRATURE[mesh.dim]
    X = mesh.points[mesh.elements]
    return np.einsum("qk,ekd->eqd", lam, X), lam, w


def _coefficient_matrices(coeff, x, dim):
    if coeff is None:
        return None
    if np.isscalar(coeff):
        a = np.broadcast_to(float(coeff) * np.eye(dim), (len(x), dim, dim))
    else:
        a = np.asarray(coeff(x), dtype=float)
        if a.ndim == 1:
            a = a[:, None, None] * np.eye(dim)
    if a.shape != (len(x), dim, dim):
        raise CoefficientError(f"coefficient returned shape {a.shape}")
    if np.abs(a - a.transpose(0, 2, 1)).max() > 1e-12 * max(np.abs(a).max(), 1.0):
        raise CoefficientError("coefficient is not symmetric")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise CoefficientError("coefficient is not positive definite")
    return a


def _scatter(mesh: StructuredMesh, local: np.ndarray) -> sp.csr_matrix:
    dofs = mesh.elements_dof
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_dof, mesh.n_dof))
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_stiffness(mesh: StructuredMesh, coeff=None) -> SparseOperator:
    """Stiffness matrix ``A[i, j] = sum_T |T| a(x_T) grad(phi_j) . grad(phi_i)``.

    ``coeff`` is ``None`` (identity), a scalar, or a callable mapping points
    ``(P, dim)`` to matrices ``(P, dim, dim)`` or scalars ``(P,)``.
    """
    G = mesh.grads
    a = _coefficient_matrices(coeff, mesh.centroids, mesh.dim)
    if a is None:
        local = np.einsum("ekd,eld->ekl", G, G)
    else:
        local = np.einsum("ekd,edf,elf->ekl", G, a, G)
    local *= mesh.volumes[:, None, None]
    A = _scatter(mesh, local)
    # exact symmetrization removes round-off asymmetry from the reduction
    A = ((A + A.T) * 0.5).tocsr()
    return SparseOperator(A, symmetric=True, constant_nullspace=True)


def assemble_mass(mesh: StructuredMesh, lumped: bool = True) -> SparseOperator:
    """Consistent or row-sum lumped P1 mass matrix."""
    n1 = mesh.dim + 1
    if lumped:
        diag = np.zeros(mesh.n_dof)
        np.add.at(diag, mesh.elements_dof.ravel(), np.repeat(mesh.volumes / n1, n1))
        return SparseOperator(sp.diags(diag).tocsr(), symmetric=True)
    ref = (np.ones((n1, n1)) + np.eye(n1)) / ((n1) * (n1 + 1))
    local = mesh.volumes[:, None, None] * ref
    return SparseOperator(_scatter(mesh, local), symmetric=True)


def lumped_mass(mesh: StructuredMesh) -> np.ndarray:
    return assemble_mass(mesh, lumped=True).diagonal()


def integrate_elementwise(mesh: StructuredMesh, values: np.ndarray) -> np.ndarray:
    """One-point integral of per-element values (trailing axes preserved).

    Sums pairwise along a contiguous axis; a BLAS dot accumulates enough
    round-off on large cells to register as a spurious nonzero mean.
    """
    v = np.asarray(values, dtype=float)
    weighted = v * mesh.volumes.reshape((-1,) + (1,) * (v.ndim - 1))
    return np.ascontiguousarray(np.moveaxis(weighted, 0, -1)).sum(axis=-1)


def load_vector(mesh: StructuredMesh, elem_values: np.ndarray) -> np.ndarray:
    """``b_i = sum_T f_T |T| / (dim+1)`` for element-constant ``f``."""
    n1 = mesh.dim + 1
    b = np.zeros(mesh.n_dof)
    np.add.at(b, mesh.elements_dof.ravel(), np.repeat(elem_values * mesh.volumes / n1, n1))
    return b


def divergence_load(mesh: StructuredMesh, elem_flux: np.ndarray) -> np.ndarray:
    """``b_i = sum_T |T| q_T . grad(phi_i)`` for element-constant vectors ``q``."""
    contrib = np.einsum("ekd,ed->ek", mesh.grads, elem_flux) * mesh.volumes[:, None]
    b = np.zeros(mesh.n_dof)
    np.add.at(b, mesh.elements_dof.ravel(), contrib.ravel())
    return b


def element_gradient(mesh: StructuredMesh, values: np.ndarray) -> np.ndarray:
    """Per-element gradients of a P1 field.

    ``values`` has shape ``(n_dof,)`` or ``(n_dof, c)``; the result has shape
    ``(n_elem, dim)`` or ``(n_elem, c, dim)``.
    """
    v = np.asarray(values)[mesh.elements_dof]
    if v.ndim == 2:
        return np.einsum("ek,ekd->ed", v, mesh.grads)
    return np.einsum("ekc,ekd->ecd", v, mesh.grads)


def _recovery_operator(mesh: StructuredMesh) -> sp.csr_matrix:
    cached = getattr(mesh, "_recovery", None)
    if cached is not None:
        return cached
    n1 = mesh.dim + 1
    rows = mesh.elements_dof.ravel()
    cols = np.repeat(np.arange(mesh.n_elements), n1)
    w = np.repeat(mesh.volumes, n1)
    R = sp.coo_matrix((w, (rows, cols)), shape=(mesh.n_dof, mesh.n_elements)).tocsr()
    R.sum_duplicates()
    R = sp.diags(1.0 / np.asarray(R.sum(axis=1)).ravel()) @ R
    object.__setattr__(mesh, "_recovery", R.tocsr())
    return mesh._recovery


def recover_gradient(mesh: StructuredMesh, values: np.ndarray) -> np.ndarray:
    """Nodal gradient as the volume-weighted mean of adjacent element gradients.

    Returns ``(n_dof, dim)`` for scalar input and ``(n_dof, c, dim)`` for
    ``(n_dof, c)`` input.
    """
    g = element_gradient(mesh, values)
    R = _recovery_operator(mesh)
    flat = g.reshape(mesh.n_elements, -1)
    return np.asarray(R @ flat).reshape((mesh.n_dof,) + g.shape[1:])


def interpolate(mesh: StructuredMesh, values: np.ndarray, targets, periodic_wrap=False):
    """Evaluate a P1 field at arbitrary points."""
    elem, lam = mesh.locate(targets, periodic_wrap=periodic_wrap)
    v = np.asarray(values)[mesh.elements_dof[elem]]
    if v.ndim == 2:
        return np.einsum("pk,pk->p", lam, v)
    return np.einsum("pk,pk...->p...", lam, v)
