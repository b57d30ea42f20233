"""First- and second-order cell problems on the periodic unit cell.

Every cell field is found from a scalar periodic problem ``div(a grad w) = f``
with ``f`` of zero mean, solved in weak form with the zero-mean normalization.
Sources that contain derivatives of cell solutions are integrated by parts so
only first derivatives of P1 functions appear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .coefficients import PeriodicCoefficientSet
from .linalg import CompatibilityError, solve_linear
from .mesh import StructuredMesh, build_mesh

DEFAULT_CELL_N = {2: 128, 3: 32}
CELL_TOL = 1e-10


class SolvabilityError(CompatibilityError):
    """A cell right-hand side failed the zero-mean (Fredholm) check."""


@dataclass(eq=False)
class CellSolutions:
    """Cell fields as dof arrays on a periodic cell mesh.

    ``chi`` has shape ``(n, n_dof)``; ``theta`` and ``Lam`` have shape
    ``(n, n, n_dof)``; the remaining fields are ``(n_dof,)``. ``beta`` is
    only computed in 2D.
    """

    mesh: StructuredMesh
    coeffs: PeriodicCoefficientSet
    chi: np.ndarray
    ustar: np.ndarray
    theta: np.ndarray | None = None
    rho: np.ndarray | None = None
    Lam: np.ndarray | None = None
    kappa: np.ndarray | None = None
    beta: np.ndarray | None = None
    rhs_means: dict = field(default_factory=dict)

    @property
    def has_second_order(self) -> bool:
        return self.theta is not None


@dataclass(frozen=True)
class HomogenizedCoefficients:
    a0: np.ndarray
    mu0: float
    K0: float
    M0: float
    Mt0: float
    Hd0: np.ndarray

    def as_dict(self) -> dict:
        n = self.a0.shape[0]
        out = {}
        for i in range(n):
            for j in range(n):
                out[f"a0_{i + 1}{j + 1}"] = float(self.a0[i, j])
        out.update(mu0=self.mu0, K0=self.K0, M0=self.M0, Mt0=self.Mt0)
        for i in range(n):
            for j in range(n):
                out[f"Hd0_{i + 1}{j + 1}"] = float(self.Hd0[i, j])
        return out

    @classmethod
    def constant(cls, a: float, dim: int, mu=1.0, K=0.0, Ms=1.0):
        return cls(a0=a * np.eye(dim), mu0=mu, K0=K, M0=Ms, Mt0=mu * Ms,
                   Hd0=np.zeros((dim, dim)))


def _div_magnitude(mesh, flux):
    """Norm of the divergence load with every element term taken in absolute value.

    The signed load of a flux that is divergence free (e.g. a laminate
    across the direction it varies in) is pure round-off, so its own norm
    is no yardstick for the compatibility check.
    """
    contrib = np.abs(np.einsum("ekd,ed->ek", mesh.grads, flux)) * mesh.volumes[:, None]
    out = np.zeros(mesh.n_dof)
    np.add.at(out, mesh.elements_dof.ravel(), contrib.ravel())
    return float(np.linalg.norm(out))


class _Cell:
    """Cell mesh with stiffness and centroid samples of the coefficients."""

    def __init__(self, coeffs: PeriodicCoefficientSet, cell_N: int | None = None,
                 mesh: StructuredMesh | None = None):
        n = coeffs.dim
        if mesh is None:
            mesh = build_mesh(n, cell_N or DEFAULT_CELL_N[n], "periodic")
        if not mesh.periodic or mesh.dim != n:
            raise ValueError("cell problems need a periodic mesh of the coefficient dimension")
        self.mesh = mesh
        self.coeffs = coeffs
        yc = mesh.centroids
        self.a = np.asarray(coeffs.a(yc))
        self.mu = coeffs.mu(yc)
        self.K = coeffs.K(yc)
        self.Ms = coeffs.Ms(yc)
        self.grad_mu = coeffs.grad_mu(yc)
        self.A = fem.assemble_stiffness(mesh, coeffs.a)

    def mean(self, elem_values):
        # divide by the summed volume so that sources minus their mean sum to zero
        return fem.integrate_elementwise(self.mesh, elem_values) / self.mesh.volumes.sum()

    def solve(self, parts, label, means, operator=None, magnitude=0.0):
        """Solve ``A w = sum(parts)``; ``parts`` sizes (plus ``magnitude``) set the round-off floor."""
        # div(a grad w) = f  <=>  A w = b with b = -(f, v)
        b = np.sum(parts, axis=0)
        scale = float(sum(np.linalg.norm(p) for p in parts)) + magnitude
        nb = max(np.linalg.norm(b), 1e-6 * scale)
        means[label] = float(abs(b.sum()) / (np.sqrt(b.size) * nb)) if nb > 0 else 0.0
        try:
            return solve_linear(operator or self.A, b, tol=CELL_TOL,
                                zero_mean_constraint=True, rhs_scale=scale)
        except CompatibilityError as exc:
            raise SolvabilityError(f"cell problem {label}: {exc}") from exc


def solve_chi(coeffs: PeriodicCoefficientSet, cell_N: int | None = None,
              _cell_ctx: _Cell | None = None) -> np.ndarray:
    """First-order correctors ``chi_j``, shape ``(n, n_dof)``.

    Weak form: ``int a (grad chi_j + e_j) . grad v = 0`` for periodic ``v``.
    """
    c = _cell_ctx or _Cell(coeffs, cell_N)
    means = {}
    chi = np.empty((coeffs.dim, c.mesh.n_dof))
    for j in range(coeffs.dim):
        b = -fem.divergence_load(c.mesh, c.a[:, :, j])
        chi[j] = c.solve([b], f"chi_{j + 1}", means,
                         magnitude=_div_magnitude(c.mesh, c.a[:, :, j]))
    return chi


def solve_ustar(coeffs: PeriodicCoefficientSet, cell_N: int | None = None,
                _cell_ctx: _Cell | None = None) -> np.ndarray:
    """Potential with ``Laplace(U*) = M0 - Ms``, zero mean."""
    c = _cell_ctx or _Cell(coeffs, cell_N)
    lap = fem.assemble_stiffness(c.mesh)
    M0 = c.mean(c.Ms)
    parts = [fem.load_vector(c.mesh, c.Ms), -fem.load_vector(c.mesh, np.full_like(c.Ms, M0))]
    return c.solve(parts, "U*", {}, operator=lap)


def homogenize(coeffs: PeriodicCoefficientSet, cells: CellSolutions,
               _cell_ctx: _Cell | None = None) -> HomogenizedCoefficients:
    """Cell averages defining the homogenized equation."""
    if cells.coeffs is not coeffs:
        raise ValueError("cell solutions were computed for a different coefficient set")
    c = _cell_ctx or _Cell(coeffs, mesh=cells.mesh)
    if c.mesh is not cells.mesh:
        raise ValueError("cell context mesh does not match the cell solutions")
    n = coeffs.dim
    dchi = fem.element_gradient(c.mesh, cells.chi.T)          # (E, n_j, n_k)
    flux = c.a + np.einsum("eik,ejk->eij", c.a, dchi)        # a_ik (d_kj + d_k chi_j)
    a0 = c.mean(flux)
    dU = fem.element_gradient(c.mesh, cells.ustar)            # (E, n)
    Hd0 = -c.mean(np.einsum("ei,ej->eij", c.grad_mu, dU))
    return HomogenizedCoefficients(
        a0=a0, mu0=float(c.mean(c.mu)), K0=float(c.mean(c.K)),
        M0=float(c.mean(c.Ms)), Mt0=float(c.mean(c.mu * c.Ms)), Hd0=Hd0,
    )


def solve_second_order(coeffs: PeriodicCoefficientSet, cells: CellSolutions,
                       homog: HomogenizedCoefficients,
                       _cell_ctx: _Cell | None = None) -> CellSolutions:
    """Fill ``theta, rho, Lam, kappa`` (and ``beta`` in 2D) into ``cells``.

    Raises :class:`SolvabilityError` when a right-hand side has a constant
    component above ``1e-8``, which signals inconsistent ``homog``.
    """
    if homog is None:
        raise ValueError("homogenized coefficients are required")
    c = _cell_ctx or _Cell(coeffs, mesh=cells.mesh)
    mesh = c.mesh
    n = coeffs.dim
    means = cells.rhs_means
    nd = mesh.n_dof

    dchi = fem.element_gradient(mesh, cells.chi.T)            # (E, j, k)
    q = c.a + np.einsum("eik,ejk->eij", c.a, dchi)
    chi_bar = cells.chi.T[mesh.elements_dof].mean(axis=1)     # (E, j)
    theta = np.empty((n, n, nd))
    for i in range(n):
        for j in range(n):
            parts = [-fem.load_vector(mesh, np.full(mesh.n_elements, homog.a0[i, j])),
                     fem.load_vector(mesh, q[:, i, j]),
                     -fem.divergence_load(mesh, c.a[:, i, :] * chi_bar[:, j:j + 1])]
            mag = _div_magnitude(mesh, c.a[:, i, :] * chi_bar[:, j:j + 1])
            theta[i, j] = c.solve(parts, f"theta_{i + 1}{j + 1}", means, magnitude=mag)

    def averaged(f, f0):
        return [-fem.load_vector(mesh, f), fem.load_vector(mesh, np.full_like(f, f0))]

    rho = c.solve(averaged(c.mu, homog.mu0), "rho", means)
    kappa = c.solve(averaged(c.K, homog.K0), "kappa", means)

    dU = fem.element_gradient(mesh, cells.ustar)
    Lam = np.empty((n, n, nd))
    for i in range(n):
        for j in range(n):
            flux = np.zeros((mesh.n_elements, n))
            flux[:, i] = c.mu * dU[:, j]
            parts = [fem.load_vector(mesh, dU[:, j] * c.grad_mu[:, i]),
                     fem.load_vector(mesh, np.full(mesh.n_elements, homog.Hd0[i, j])),
                     fem.divergence_load(mesh, flux)]
            Lam[i, j] = c.solve(parts, f"Lambda_{i + 1}{j + 1}", means,
                                magnitude=_div_magnitude(mesh, flux))

    beta = None
    if n == 2:
        beta = c.solve(averaged(c.mu * c.Ms, homog.Mt0), "beta", means)

    cells.theta, cells.rho, cells.Lam, cells.kappa, cells.beta = theta, rho, Lam, kappa, beta
    return cells


def solve_cell_problems(coeffs: PeriodicCoefficientSet, cell_N: int | None = None,
                        second_order: bool = True):
    """Solve every cell problem once; returns ``(CellSolutions, HomogenizedCoefficients)``."""
    c = _Cell(coeffs, cell_N)
    chi = solve_chi(coeffs, _cell_ctx=c)
    ustar = solve_ustar(coeffs, _cell_ctx=c)
    cells = CellSolutions(mesh=c.mesh, coeffs=coeffs, chi=chi, ustar=ustar)
    homog = homogenize(coeffs, cells, _cell_ctx=c)
    if second_order:
        solve_second_order(coeffs, cells, homog, _cell_ctx=c)
    return cells, homog


def energy_a0(cells: CellSolutions) -> np.ndarray:
    """``int a (grad chi_j + e_j) . (grad chi_i + e_i)``, the variational form of ``a0``."""
    mesh = cells.mesh
    a = np.asarray(cells.coeffs.a(mesh.centroids))
    n = mesh.dim
    g = fem.element_gradient(mesh, cells.chi.T) + np.eye(n)   # (E, j, k)
    return fem.integrate_elementwise(mesh, np.einsum("eik,ejl,ekl->eij", g, g, a))
