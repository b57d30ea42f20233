"""Correctors and the truncated two-scale reconstruction.

Cell fields are evaluated at ``x / eps`` by periodic-wrap interpolation from
the cell mesh. Derivatives of the homogenized field come from gradient
recovery (applied twice for second derivatives).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .cell import CellSolutions, HomogenizedCoefficients
from .coefficients import PeriodicCoefficientSet
from .fields import NodalVectorField
from .linalg import solve_linear
from .mesh import StructuredMesh

E3 = np.array([0.0, 0.0, 1.0])


class ConfigurationError(ValueError):
    """Inputs required by the requested operation are missing or inconsistent."""


@dataclass(frozen=True, eq=False)
class NeumannCorrector:
    """``phi[i]`` holds dof values of the corrector component ``Phi_i``.

    ``shift[i]`` is the constant added after the zero-mean solve so that the
    lumped-mass mean of ``Phi_i - x_i`` vanishes.
    """

    mesh: StructuredMesh
    eps: float
    phi: np.ndarray
    shift: np.ndarray

    @property
    def displacement(self) -> np.ndarray:
        """``Phi - x`` at the dofs, shape ``(n_dof, dim)``."""
        return self.phi.T - self.mesh.dof_points


class CellSampler:
    """Locates ``x / eps`` in the cell mesh once and reuses it for every field."""

    def __init__(self, cell_mesh: StructuredMesh, points: np.ndarray, eps: float):
        self.cell_mesh = cell_mesh
        self.elem, self.lam = cell_mesh.locate(np.asarray(points) / eps, periodic_wrap=True)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Values at the sample points; leading axes of ``values`` are kept."""
        v = np.asarray(values)
        local = v[..., self.cell_mesh.elements_dof[self.elem]]     # (..., P, k)
        return np.einsum("...pk,pk->...p", local, self.lam)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Cell-variable gradient ``grad_y`` at the sample points, ``(..., P, dim)``."""
        v = np.asarray(values)
        local = v[..., self.cell_mesh.elements_dof[self.elem]]
        return np.einsum("...pk,pkd->...pd", local, self.cell_mesh.grads[self.elem])


def neumann_corrector(mesh: StructuredMesh, coeffs: PeriodicCoefficientSet,
                      homog: HomogenizedCoefficients, eps: float) -> NeumannCorrector:
    """Solve ``(a(x/eps) grad Phi_i, grad v) = (a0 e_i, grad v)`` for all ``v``."""
    if mesh.periodic:
        raise ConfigurationError("the Neumann corrector needs a non-periodic mesh")
    if mesh.dim != coeffs.dim:
        raise ConfigurationError("mesh and coefficient dimensions differ")
    A = fem.assemble_stiffness(mesh, coeffs.scaled(eps))
    ML = fem.lumped_mass(mesh)
    a0 = 0.5 * (homog.a0 + homog.a0.T)
    n = mesh.dim
    phi = np.empty((n, mesh.n_dof))
    shift = np.empty(n)
    for i in range(n):
        flux = np.broadcast_to(a0[:, i], (mesh.n_elements, n))
        b = fem.divergence_load(mesh, flux)
        w = solve_linear(A, b, tol=1e-10, zero_mean_constraint=True,
                         rhs_scale=np.abs(b).sum())
        shift[i] = ML @ (mesh.dof_points[:, i] - w) / ML.sum()
        phi[i] = w + shift[i]
    return NeumannCorrector(mesh=mesh, eps=eps, phi=phi, shift=shift)


def _values(m):
    return m.values if isinstance(m, NodalVectorField) else np.asarray(m, dtype=float)


def _chi_of(cells):
    if isinstance(cells, CellSolutions):
        return cells.chi, cells.mesh
    raise ConfigurationError("first-order correction needs CellSolutions")


def first_order(m0, cells: CellSolutions, eps: float) -> NodalVectorField:
    """``m1(x) = sum_j chi_j(x/eps) d_j m0(x)`` at the dofs of ``m0``."""
    mesh = m0.mesh
    chi, cell_mesh = _chi_of(cells)
    G = fem.recover_gradient(mesh, _values(m0))                  # (n_dof, 3, dim)
    chi_x = CellSampler(cell_mesh, mesh.dof_points, eps)(chi)    # (dim, n_dof)
    return NodalVectorField(mesh, np.einsum("jp,pcj->pc", chi_x, G))


def neumann_first_order(m0, corrector: NeumannCorrector) -> NodalVectorField:
    """``(Phi - x) . grad m0``; the boundary-adapted replacement of ``eps * m1``."""
    mesh = m0.mesh
    if corrector.mesh is not mesh:
        raise ConfigurationError("corrector and field live on different meshes")
    G = fem.recover_gradient(mesh, _values(m0))
    return NodalVectorField(mesh, np.einsum("pj,pcj->pc", corrector.displacement, G))


def recovered_hessian(mesh: StructuredMesh, values: np.ndarray) -> np.ndarray:
    """Symmetrized second derivatives by recovering the recovered gradient.

    Returns ``(n_dof, c, dim, dim)``.
    """
    G = fem.recover_gradient(mesh, values)                       # (n_dof, c, d)
    n_dof, c, d = G.shape
    GG = fem.recover_gradient(mesh, G.reshape(n_dof, c * d)).reshape(n_dof, c, d, d)
    return 0.5 * (GG + GG.transpose(0, 1, 3, 2))


def second_order(m0, cells: CellSolutions, eps: float, terms=("exchange",),
                 easy_axis=None, h_a=None, drop_U0: bool = True) -> NodalVectorField:
    """Second-order corrector compatible with the unit-sphere constraint.

    ``m2 = sum theta_ij d_i d_j m0 + {sum (theta_ij - chi_i chi_j / 2)(d_i m0 . d_j m0)} m0
    + (I - m0 m0^T) T_low``. The scalar factor is chosen so that
    ``m0 . m2 = -|m1|^2 / 2`` holds whenever ``|m0| = 1``.

    ``T_low`` collects ``-kappa (m0.u) u`` (anisotropy), ``beta (m0.e3) e3``
    (2D stray), ``m0 . Lambda`` and ``U* h_a`` (Zeeman). The term involving
    the macroscopic stray potential needs a whole-space solve that is not
    provided; ``drop_U0=False`` therefore raises.
    """
    if not drop_U0:
        raise ConfigurationError("the macroscopic stray potential term is not implemented")
    if cells is None or not cells.has_second_order:
        raise ConfigurationError("second-order cell solutions are required")
    terms = set(terms)
    mesh = m0.mesh
    m = _values(m0)
    n = mesh.dim
    sample = CellSampler(cells.mesh, mesh.dof_points, eps)
    theta = sample(cells.theta)                                  # (n, n, P)
    chi = sample(cells.chi)                                      # (n, P)
    G = fem.recover_gradient(mesh, m)                            # (P, 3, n)
    Hm = recovered_hessian(mesh, m)                              # (P, 3, n, n)

    out = np.einsum("ijp,pcij->pc", theta, Hm)
    gram = np.einsum("pci,pcj->pij", G, G)                       # d_i m0 . d_j m0
    weight = theta.transpose(2, 0, 1) - 0.5 * np.einsum("ip,jp->pij", chi, chi)
    out += np.einsum("pij,pij->p", weight, gram)[:, None] * m

    T = np.zeros_like(m)
    if "anisotropy" in terms and cells.kappa is not None:
        u = np.asarray(easy_axis if easy_axis is not None else cells.coeffs.easy_axis, float)
        T -= (sample(cells.kappa) * (m @ u))[:, None] * u
    if "stray2d" in terms and cells.beta is not None:
        T += (sample(cells.beta) * m[:, 2])[:, None] * E3
    if cells.Lam is not None:
        lam = sample(cells.Lam)                                  # (n, n, P)
        T[:, :n] += np.einsum("pi,ijp->pj", m[:, :n], lam)
    if "zeeman" in terms:
        ha = np.asarray(h_a if h_a is not None else cells.coeffs.h_a, float)
        T += sample(cells.ustar)[:, None] * ha
    T -= np.einsum("pc,pc->p", m, T)[:, None] * m
    return NodalVectorField(mesh, out + T)


def assemble(m0, m1=None, m2=None, eps: float = 0.0, order: int = 2) -> NodalVectorField:
    """Truncated sum ``m0 + eps m1 + eps^2 m2`` up to ``order``."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    out = _values(m0).copy()
    if order >= 1:
        if m1 is None:
            raise ConfigurationError("order >= 1 needs m1")
        out += eps * _values(m1)
    if order == 2:
        if m2 is None:
            raise ConfigurationError("order 2 needs m2")
        out += eps**2 * _values(m2)
    return NodalVectorField(m0.mesh, out)
