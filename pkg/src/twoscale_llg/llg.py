"""Effective field, energy and the implicit midpoint integrator.

Vector unknowns are stored as ``(n_dof, 3)`` arrays; flattened they use the
node-interleaved ordering ``3 * i + component``. With the lumped inner product
every term of the discrete equation is nodal, so the weak form divides through
by the lumped mass and the field reads ``h = -L m + B m + g`` with
``L = M_L^{-1} A``, ``B`` a block-diagonal 3x3 operator and ``g`` constant.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .cell import HomogenizedCoefficients
from .coefficients import PeriodicCoefficientSet
from .fields import NodalVectorField
from .linalg import SolverError, solve_linear, solve_nonsymmetric
from .mesh import StructuredMesh
from .reconstruct import ConfigurationError

TERMS = frozenset({"exchange", "anisotropy", "zeeman", "stray2d"})
E3 = np.array([0.0, 0.0, 1.0])
INNER_TOL = 1e-10


class StabilityWarning(UserWarning):
    """Time step beyond the solvability bound of the original iteration."""


class NonConvergenceError(RuntimeError):
    """Inner iteration hit ``max_iter``; carries the step index and stats."""

    def __init__(self, message, step_index=None, stats=None):
        super().__init__(message)
        self.step_index = step_index
        self.stats = stats


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Physical model on a fixed mesh.

    ``scale="multiscale"`` samples ``coeffs`` at ``x * n_periods``;
    ``scale="homogenized"`` uses ``homog`` and takes the easy axis and
    applied field from ``coeffs`` when given.
    """

    mesh: StructuredMesh
    scale: str = "homogenized"
    terms: frozenset = frozenset({"exchange"})
    alpha: float = 1.0
    coeffs: PeriodicCoefficientSet | None = None
    homog: HomogenizedCoefficients | None = None
    n_periods: int | None = None
    easy_axis: tuple | None = None
    h_a: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", frozenset(self.terms))
        unknown = self.terms - TERMS
        if unknown:
            raise ConfigurationError(f"unknown terms {sorted(unknown)}")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if "stray2d" in self.terms and self.mesh.dim != 2:
            raise ConfigurationError("stray2d is only defined for two-dimensional meshes")
        if self.scale == "multiscale":
            if self.coeffs is None:
                raise ConfigurationError("multiscale model needs a coefficient set")
            if self.n_periods is None or int(self.n_periods) != self.n_periods or self.n_periods < 1:
                raise ConfigurationError("multiscale model needs an integer n_periods >= 1")
            if self.coeffs.dim != self.mesh.dim:
                raise ConfigurationError("coefficient and mesh dimensions differ")
        elif self.scale == "homogenized":
            if self.homog is None:
                raise ConfigurationError("homogenized model needs homogenized coefficients")
            if self.homog.a0.shape != (self.mesh.dim, self.mesh.dim):
                raise ConfigurationError("a0 has the wrong dimension for the mesh")
        else:
            raise ConfigurationError(f"unknown scale {self.scale!r}")

    @property
    def eps(self) -> float | None:
        return 1.0 / self.n_periods if self.scale == "multiscale" else None

    @property
    def u(self) -> np.ndarray:
        if self.easy_axis is not None:
            u = np.asarray(self.easy_axis, float)
        elif self.coeffs is not None:
            u = np.asarray(self.coeffs.easy_axis, float)
        else:
            u = E3
        return u / np.linalg.norm(u)

    @property
    def applied(self) -> np.ndarray:
        if self.h_a is not None:
            return np.asarray(self.h_a, float)
        if self.coeffs is not None:
            return np.asarray(self.coeffs.h_a, float)
        return np.zeros(3)

    @cached_property
    def ops(self) -> "_Operators":
        return _Operators(self)


class _Operators:
    """Assembled matrices and nodal coefficient samples for a model."""

    def __init__(self, model: ModelSpec):
        mesh = model.mesh
        n_dof = mesh.n_dof
        self.mesh = mesh
        if model.scale == "multiscale":
            coeff = model.coeffs.scaled(model.eps)
            y = mesh.dof_points / model.eps
            c = model.coeffs
            K, Ms, mu = c.K(y), c.Ms(y), c.mu(y)
            stray = mu * Ms
        else:
            h = model.homog
            a0 = 0.5 * (h.a0 + h.a0.T)
            coeff = lambda x: np.broadcast_to(a0, (len(x),) + a0.shape).copy()  # noqa: E731
            K = np.full(n_dof, h.K0)
            Ms = np.full(n_dof, h.M0)
            stray = np.full(n_dof, h.Mt0)
        terms = model.terms
        if "exchange" in terms:
            self.A = fem.assemble_stiffness(mesh, coeff).matrix
        else:
            self.A = sp.csr_matrix((n_dof, n_dof))
        self.ML = fem.lumped_mass(mesh)
        self.L = (sp.diags(1.0 / self.ML) @ self.A).tocsr()
        self.L_diag = self.L.diagonal()

        B = np.zeros((n_dof, 3, 3))
        if "anisotropy" in terms:
            u = model.u
            B -= K[:, None, None] * np.outer(u, u)
        if "stray2d" in terms:
            B += stray[:, None, None] * np.outer(E3, E3)
        self.B = B
        self.has_B = bool(np.any(B))
        H3 = -sp.kron(self.L, sp.identity(3), format="csr")
        if self.has_B:
            H3 = H3 + _block_diag(B)
        self.H3 = H3.tocsr()
        g = np.zeros((n_dof, 3))
        if "zeeman" in terms:
            g += Ms[:, None] * model.applied
        self.g = g
        # energy weights
        self.aniso_K = K if "anisotropy" in terms else None
        self.stray_w = stray if "stray2d" in terms else None

    def H(self, m: np.ndarray) -> np.ndarray:
        """Linear part of the field, ``-L m + B m``."""
        out = -(self.L @ m)
        if self.has_B:
            out += np.einsum("pab,pb->pa", self.B, m)
        return out

    def field(self, m: np.ndarray) -> np.ndarray:
        return self.H(m) + self.g


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    n = len(blocks)
    base = 3 * np.arange(n)
    rows = (base[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
    cols = (base[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 3 * n))


def _arr(m) -> np.ndarray:
    return m.values if isinstance(m, NodalVectorField) else np.asarray(m, dtype=float)


def effective_field(m, model: ModelSpec) -> NodalVectorField:
    """Nodal effective field ``-M_L^{-1} A m`` plus the nodal lower-order terms."""
    v = _arr(m)
    if v.shape != (model.mesh.n_dof, 3):
        raise ConfigurationError("field does not live on the model mesh")
    return NodalVectorField(model.mesh, model.ops.field(v))


def discrete_energy(m, model: ModelSpec) -> float:
    """``1/2 (a grad m, grad m) + 1/2 (K (m.u)^2) - 1/2 (mu Ms (m.e3)^2) - (M h_a, m)``.

    The exchange part is exact for P1; lower-order terms use the vertex
    (lumped) rule, which makes ``-M_L^{-1} dE/dm`` equal the nodal field.
    """
    ops = model.ops
    v = _arr(m)
    E = 0.5 * float(np.einsum("pc,pc->", v, ops.A @ v))
    if ops.aniso_K is not None:
        E += 0.5 * float(ops.ML @ (ops.aniso_K * (v @ model.u) ** 2))
    if ops.stray_w is not None:
        E -= 0.5 * float(ops.ML @ (ops.stray_w * v[:, 2] ** 2))
    E -= float(ops.ML @ np.einsum("pc,pc->p", ops.g, v))
    return E


@dataclass
class IterationStats:
    step: int
    iters: int
    residual: float
    wall_ms: float
    converged: bool
    history: list = field(default_factory=list)


@dataclass
class RunResult:
    snapshots: list                  # (step, NodalVectorField)
    stats: list                      # IterationStats per step
    energies: list = field(default_factory=list)
    last: NodalVectorField | None = None

    @property
    def final(self) -> NodalVectorField:
        """State after the last completed step, stored or not."""
        return self.last if self.last is not None else self.snapshots[-1][1]

    @property
    def mean_iters(self) -> float:
        return float(np.mean([s.iters for s in self.stats])) if self.stats else 0.0

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stats)

    @property
    def wall_ms(self) -> float:
        return float(sum(s.wall_ms for s in self.stats))


def cross_matrix(v: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal matrix of ``x -> v x x`` in node-interleaved ordering."""
    n = len(v)
    i = 3 * np.arange(n)
    rows = np.concatenate([i, i, i + 1, i + 1, i + 2, i + 2])
    cols = np.concatenate([i + 1, i + 2, i, i + 2, i, i + 1])
    vals = np.concatenate([-v[:, 2], v[:, 1], v[:, 2], -v[:, 0], -v[:, 1], v[:, 0]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, 3 * n))


class InnerSolver:
    """BiCGStab for the inner systems with an incomplete-LU fallback.

    Jacobi preconditioning suffices for small steps. When it stalls, an ILU
    factorization of the current matrix is built and kept; later systems
    in the same run differ only slightly and reuse it until it, too, stalls.
    """

    JACOBI_MAXITER = 300
    ILU_MAXITER = 100

    def __init__(self, tol: float = INNER_TOL):
        self.tol = tol
        self.ilu = None
        self.ilu_builds = 0

    def _build(self, M):
        for drop in (1e-4, 1e-5, 1e-6):
            try:
                self.ilu = spla.spilu(M.tocsc(), drop_tol=drop, fill_factor=20)
                self.ilu_builds += 1
                return
            except RuntimeError:
                continue
        raise SolverError("incomplete LU factorization failed")

    def solve(self, M, b, x0):
        if self.ilu is not None:
            try:
                return solve_nonsymmetric(M, b, tol=self.tol, x0=x0, maxiter=self.ILU_MAXITER,
                                          preconditioner=self.ilu.solve, retry=False)
            except SolverError:
                pass
        else:
            try:
                return solve_nonsymmetric(M, b, tol=self.tol, x0=x0,
                                          maxiter=self.JACOBI_MAXITER, retry=False)
            except SolverError:
                pass
        self._build(M)
        return solve_nonsymmetric(M, b, tol=self.tol, x0=x0, maxiter=self.ILU_MAXITER,
                                  preconditioner=self.ilu.solve)


def _lumped_norm(ML, d):
    return float(np.sqrt(ML @ np.einsum("pc,pc->p", d, d)))


def original_bound(model: ModelSpec) -> float:
    return model.mesh.h ** 2 / (10.0 * (1.0 + model.alpha ** 2))


def step(m_j, dt: float, model: ModelSpec, scheme: str = "improved",
         threshold: float = 1e-8, max_iter: int = 100, step_index: int = 0,
         solver: InnerSolver | None = None):
    """Advance one implicit midpoint step by inner fixed-point iteration.

    Both schemes solve one nonsymmetric sparse system per inner iterate. In
    ``"original"`` the field of the previous iterate enters through a cross
    product with the unknown; in ``"improved"`` the exchange operator acts on
    the unknown, which removes the step-size restriction.

    Returns ``(m_next, IterationStats)``; on non-convergence the last iterate
    is returned with ``converged=False``. ``iters`` counts linear solves.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in ("original", "improved"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "original" and dt > original_bound(model):
        warnings.warn(f"dt={dt:g} exceeds h^2/(10(1+alpha^2))={original_bound(model):.3g}; "
                      "the original iteration may not converge", StabilityWarning, stacklevel=2)
    t0 = time.perf_counter()
    solver = solver or InnerSolver()
    ops = model.ops
    mj = _arr(m_j)
    alpha = model.alpha
    c = (1.0 + alpha ** 2) / 4.0
    hj = ops.field(mj)
    base = (sp.identity(3 * len(mj), format="csr") / dt
            - (alpha / dt) * cross_matrix(mj) - c * cross_matrix(hj))
    rhs_base = mj / dt - c * np.cross(mj, hj)
    if scheme == "original":
        base = (base + c * (cross_matrix(mj) @ ops.H3)).tocsr()

    m_prev = mj.copy()
    history = []
    converged = False
    residual = np.inf
    it = 0
    while it < max_iter:
        if scheme == "improved":
            w = m_prev + mj
            M = base + c * (cross_matrix(w) @ ops.H3)
            b = rhs_base - c * np.cross(w, ops.g)
        else:
            M = base - c * cross_matrix(ops.field(m_prev))
            b = rhs_base - c * np.cross(mj, ops.g)
        it += 1
        try:
            x = solver.solve(M.tocsr(), b.ravel(), m_prev.ravel())
        except SolverError:
            residual = np.inf
            history.append(residual)
            break
        m_new = x.reshape(mj.shape)
        residual = _lumped_norm(ops.ML, m_new - m_prev)
        history.append(residual)
        m_prev = m_new
        if not np.isfinite(residual) or residual > 1e6:
            break
        if residual <= threshold:
            converged = True
            break
    stats = IterationStats(step=step_index, iters=it, residual=float(residual),
                           wall_ms=1e3 * (time.perf_counter() - t0), converged=converged,
                           history=history)
    return NodalVectorField(model.mesh, m_prev), stats


def run(m_init, model: ModelSpec, scheme: str = "improved", dt: float = 1e-6,
        steps: int = 10, snapshot_stride: int | None = None, threshold: float = 1e-8,
        max_iter: int = 100, checkpoints=None, track_energy: bool = False,
        raise_on_failure: bool = True) -> RunResult:
    """Time loop; snapshots at multiples of ``snapshot_stride`` and at ``checkpoints``.

    Step 0 (the initial field) is always stored. Non-convergence raises
    :class:`NonConvergenceError` with the failing step index unless
    ``raise_on_failure`` is false, in which case the loop stops there.
    """
    m = m_init if isinstance(m_init, NodalVectorField) else NodalVectorField(model.mesh, m_init)
    wanted = set(checkpoints or ())
    snaps = [(0, m.copy())]
    stats = []
    energies = [discrete_energy(m, model)] if track_energy else []
    solver = InnerSolver()
    for j in range(1, steps + 1):
        m, st = step(m, dt, model, scheme=scheme, threshold=threshold,
                     max_iter=max_iter, step_index=j, solver=solver)
        stats.append(st)
        if track_energy:
            energies.append(discrete_energy(m, model))
        if not st.converged:
            if raise_on_failure:
                raise NonConvergenceError(
                    f"step {j}: inner iteration did not converge "
                    f"(residual {st.residual:.3e} after {st.iters} iterations)",
                    step_index=j, stats=stats)
            break
        if (snapshot_stride and j % snapshot_stride == 0) or j in wanted:
            snaps.append((j, m.copy()))
    return RunResult(snapshots=snaps, stats=stats, energies=energies, last=m.copy())


# -- reference dynamics ------------------------------------------------------

def macrospin_reference(m0, h, alpha: float, t_end: float, rtol: float = 1e-12):
    """Single-spin LLG ``m' = -m x h - alpha m x (m x h)`` integrated by DOP853."""
    from scipy.integrate import solve_ivp

    h = np.asarray(h, float)

    def rhs(_, m):
        mxh = np.cross(m, h)
        return -mxh - alpha * np.cross(m, mxh)

    sol = solve_ivp(rhs, (0.0, t_end), np.asarray(m0, float), method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2)
    return sol.y[:, -1]


# -- initial data -----------------------------------------------------------

def bubble_profile(x: np.ndarray) -> np.ndarray:
    """Unit-length bubble centred at the domain midpoint, ``(0,0,-1)`` outside radius 1/2."""
    x = np.atleast_2d(np.asarray(x, float))
    xt = x[:, :2] - 0.5
    r2 = np.einsum("pd,pd->p", xt, xt)
    r = np.sqrt(r2)
    A = np.clip(1.0 - 2.0 * r, 0.0, None) ** 4
    den = A ** 2 + r2
    out = np.tile([0.0, 0.0, -1.0], (len(x), 1))
    inside = (r < 0.5) & (den > 0)
    out[inside, 0] = 2.0 * xt[inside, 0] * A[inside] / den[inside]
    out[inside, 1] = 2.0 * xt[inside, 1] * A[inside] / den[inside]
    out[inside, 2] = (A[inside] ** 2 - r2[inside]) / den[inside]
    # renormalize away the last ulp of rounding
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def bubble_initial(mesh: StructuredMesh) -> NodalVectorField:
    return NodalVectorField(mesh, bubble_profile(mesh.dof_points))


def initial_expansion(m0_init, correctors, bc: str, eps: float | None = None,
                      tangent: bool = True) -> NodalVectorField:
    """Multiscale initial data ``m0 + correction`` without renormalization.

    ``bc="periodic"``: correction ``eps chi(x/eps) . grad m0`` with
    ``correctors`` a :class:`~twoscale_llg.cell.CellSolutions`.
    ``bc="neumann"``: correction ``(Phi - x) . grad m0`` with ``correctors`` a
    :class:`~twoscale_llg.reconstruct.NeumannCorrector`.

    With ``tangent`` the correction is projected nodewise onto the tangent
    plane of ``m0``; recovered gradients are only approximately tangent, and
    the projection restores ``|m|^2 = 1 + |correction|^2`` exactly.
    """
    from . import reconstruct

    if correctors is None:
        raise ConfigurationError("expansion initial data needs correctors")
    if bc == "periodic":
        if eps is None:
            raise ConfigurationError("periodic expansion needs eps")
        corr = eps * reconstruct.first_order(m0_init, correctors, eps).values
    elif bc == "neumann":
        if not isinstance(correctors, reconstruct.NeumannCorrector):
            raise ConfigurationError("Neumann expansion needs a NeumannCorrector")
        corr = reconstruct.neumann_first_order(m0_init, correctors).values
    else:
        raise ConfigurationError(f"unknown boundary condition {bc!r}")
    m0 = _arr(m0_init)
    if tangent:
        corr = corr - np.einsum("pc,pc->p", corr, m0)[:, None] * m0
    return NodalVectorField(m0_init.mesh, m0 + corr)


@dataclass
class ProjectionResult:
    field: NodalVectorField
    iterations: int
    increments: list
    converged: bool


def _normalize(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def initial_projection(m0_init, coeffs: PeriodicCoefficientSet, homog: HomogenizedCoefficients,
                       eps: float, initial_guess=None, tol: float = 1e-8,
                       max_iter: int = 200) -> ProjectionResult:
    """Sphere-valued multiscale initial data by Picard iteration.

    Each iterate solves
    ``(a^eps grad m_new, grad v) = -(F, v) + ((m.F) m, v) + (rho(m) m, v)``
    with ``F`` the lumped weak form of ``div(a0 grad m0)`` and
    ``rho_i = M_ii^{-1} sum_j (-A_ij) |m_j - m_i|^2 / 2``, the discrete
    counterpart of ``a grad m : grad m``. The singular systems are solved
    in the zero-mean complement after removing the constant part of the
    load; the mean of the previous iterate is restored, then every node
    is renormalized. Increments are measured in the discrete H1 norm.
    """
    mesh = m0_init.mesh
    m0 = _arr(m0_init)
    Aeps = fem.assemble_stiffness(mesh, coeffs.scaled(eps))
    a0 = 0.5 * (homog.a0 + homog.a0.T)
    A0 = fem.assemble_stiffness(mesh, lambda x: np.broadcast_to(a0, (len(x),) + a0.shape).copy())
    lap = fem.assemble_stiffness(mesh).matrix
    ML = fem.lumped_mass(mesh)
    F = -(A0.matrix @ m0) / ML[:, None]
    Am = Aeps.matrix.tocoo()
    off = Am.row != Am.col
    rows, cols, vals = Am.row[off], Am.col[off], Am.data[off]

    m = _normalize(_arr(initial_guess) if initial_guess is not None else m0.copy())
    increments = []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        d2 = np.einsum("pc,pc->p", m[rows] - m[cols], m[rows] - m[cols])
        rho = np.zeros(len(m))
        np.add.at(rho, rows, -0.5 * vals * d2)
        rho /= ML
        rhs = ML[:, None] * (-F + (np.einsum("pc,pc->p", m, F) + rho)[:, None] * m)
        new = np.empty_like(m)
        for c in range(3):
            b = rhs[:, c] - rhs[:, c].mean()
            w = solve_linear(Aeps, b, tol=1e-10, zero_mean_constraint=True,
                             rhs_scale=np.abs(rhs[:, c]).sum())
            new[:, c] = w + m[:, c].mean()
        new = _normalize(new)
        d = new - m
        inc = float(np.sqrt(np.einsum("pc,pc->", d, lap @ d) + ML @ np.einsum("pc,pc->p", d, d)))
        increments.append(inc)
        m = new
        if inc <= tol:
            converged = True
            break
        if not np.isfinite(inc):
            break
    return ProjectionResult(NodalVectorField(mesh, m), k, increments, converged)


def boundary_flux_residual(m, coeff) -> float:
    """``|| nu . a grad m ||`` on the boundary, elementwise gradients, facet quadrature."""
    from .mesh import facet_measures

    mesh = m.mesh
    if mesh.periodic:
        return 0.0
    G = fem.element_gradient(mesh, _arr(m))                     # (E, 3, d)
    el = mesh.facet_elements
    a = fem._coefficient_matrices(coeff, mesh.centroids[el], mesh.dim)
    flux = np.einsum("fd,fde,fce->fc", mesh.facet_normals, a, G[el])
    return float(np.sqrt(facet_measures(mesh) @ np.einsum("fc,fc->f", flux, flux)))
