"""Sparse iterative solvers.

Symmetric systems go through a Jacobi-preconditioned conjugate gradient that
can project iterates onto the zero-mean subspace, which is how singular
periodic and pure-Neumann problems are solved. Nonsymmetric systems use
BiCGStab with the same diagonal preconditioner.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SparseOperator


class SolverError(RuntimeError):
    """Iterative solve did not reach the requested tolerance."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class CompatibilityError(ValueError):
    """Right-hand side not orthogonal to the nullspace of a singular system."""


def _unwrap(A):
    if isinstance(A, SparseOperator):
        return A.matrix, A.symmetric, A.constant_nullspace
    A = sp.csr_matrix(A)
    return A, False, False


def check_compatible(b: np.ndarray, tol: float = 1e-8, scale: float | None = None) -> float:
    """Return ``|<b, 1>| / (|1| max(|b|, eps*scale))`` and raise if it exceeds ``tol``.

    ``scale`` is the size of the terms that were summed to form ``b``; when
    they cancel to round-off the ratio is measured against ``1e-6 * scale``.
    """
    nb = np.linalg.norm(b)
    if scale is not None:
        nb = max(nb, 1e-6 * scale)
    if nb == 0.0:
        return 0.0
    ratio = abs(b.sum()) / (np.sqrt(b.size) * nb)
    if ratio > tol:
        raise CompatibilityError(
            f"right-hand side has a constant component (relative {ratio:.3e} > {tol:g})"
        )
    return ratio


def solve_linear(A, b, tol: float = 1e-10, zero_mean_constraint: bool = False,
                 maxiter: int | None = None, x0=None,
                 rhs_scale: float | None = None) -> np.ndarray:
    """Solve ``A x = b`` to relative residual ``tol``.

    Parameters
    ----------
    A : SparseOperator or sparse matrix
        Symmetric operators use projected CG, others BiCGStab.
    b : ndarray
    tol : float
        Relative residual ``|Ax - b| / |b|``.
    zero_mean_constraint : bool
        Required when ``A`` annihilates constants; the returned ``x`` then
        has zero arithmetic mean.
    rhs_scale : float, optional
        Magnitude of the terms that formed ``b``. A ``b`` below ``1e-12``
        times this is treated as zero (sources that cancel exactly).

    Raises
    ------
    CompatibilityError
        ``b`` has a constant component on a singular system.
    SolverError
        Not converged after ``maxiter`` iterations.
    """
    M, symmetric, nullspace = _unwrap(A)
    b = np.asarray(b, dtype=float)
    if nullspace and not zero_mean_constraint:
        raise CompatibilityError("singular operator requires zero_mean_constraint=True")
    if zero_mean_constraint:
        check_compatible(b, scale=rhs_scale)
        b = b - b.mean()
    if not np.any(b) or (rhs_scale is not None and np.linalg.norm(b) <= 1e-12 * rhs_scale):
        return np.zeros_like(b)
    if maxiter is None:
        maxiter = max(10 * b.size, 1000)
    if symmetric:
        return _pcg(M, b, tol, maxiter, zero_mean_constraint, x0)
    return _bicgstab(M, b, tol, maxiter, x0)


def _pcg(A, b, tol, maxiter, project, x0):
    d = A.diagonal().copy()
    d[d == 0] = 1.0
    dinv = 1.0 / d

    def P(v):
        return v - v.mean() if project else v

    x = np.zeros_like(b) if x0 is None else P(np.array(x0, dtype=float))
    r = P(b - A @ x)
    nb = np.linalg.norm(b)
    history = [np.linalg.norm(r) / nb]
    if history[-1] <= tol:
        return P(x)
    z = P(dinv * r)
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = P(A @ p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / nb
        history.append(res)
        if res <= tol:
            # confirm with the true residual
            true = np.linalg.norm(P(b - A @ x)) / nb
            if true <= tol * 10:
                x = P(x)
                return x
            r = P(b - A @ x)
        z = P(dinv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations "
                      f"(residual {history[-1]:.3e})", history)


def _bicgstab(A, b, tol, maxiter, x0):
    return solve_nonsymmetric(A, b, A.diagonal(), tol=tol, maxiter=maxiter, x0=x0)


def solve_nonsymmetric(A, b, diagonal=None, tol: float = 1e-10, maxiter: int | None = None,
                       x0=None, preconditioner=None, retry: bool = True) -> np.ndarray:
    """BiCGStab for a sparse matrix or ``LinearOperator``.

    The preconditioner is ``preconditioner`` (a callable applying an
    approximate inverse) when given, otherwise Jacobi built from
    ``diagonal`` (default: ``A.diagonal()``). Raises :class:`SolverError`
    with the residual history on failure.
    """
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    if maxiter is None:
        maxiter = max(10 * b.size, 1000)
    n = b.size
    if preconditioner is None:
        d = np.array(A.diagonal() if diagonal is None else diagonal, dtype=float)
        d[d == 0] = 1.0
        Minv = spla.LinearOperator((n, n), matvec=lambda v: v / d, dtype=float)
    else:
        Minv = spla.LinearOperator((n, n), matvec=preconditioner, dtype=float)
    history = []

    def cb(xk):
        history.append(np.linalg.norm(b - A @ xk) / nb)

    x, info = spla.bicgstab(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=Minv)
    res = np.linalg.norm(b - A @ x) / nb
    if (info != 0 or not np.isfinite(res) or res > 10 * tol) and retry:
        # one more pass from the last iterate, recording the history
        x, info = spla.bicgstab(A, b, x0=x if np.all(np.isfinite(x)) else None,
                                rtol=tol, atol=0.0, maxiter=maxiter, M=Minv, callback=cb)
        res = np.linalg.norm(b - A @ x) / nb
    if info != 0 or not np.isfinite(res) or res > 10 * tol:
        history.append(res)
        raise SolverError(f"BiCGStab failed (info={info}, residual {res:.3e})", history)
    return x
