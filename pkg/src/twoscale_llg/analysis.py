"""Error norms between multiscale and reconstructed fields, and order fits.

All norms integrate with the degree-2 rule (3 points per triangle, 4 per
tetrahedron). Vector fields use the Frobenius convention: squared
components (and squared gradient entries) are summed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import fem
from .cell import CellSolutions
from .fields import NodalVectorField, format_value
from .mesh import StructuredMesh
from .reconstruct import CellSampler, NeumannCorrector


class ComparisonError(ValueError):
    """Fields cannot be compared (different domains or shapes)."""


class FitError(ValueError):
    """Degenerate data for a log-log fit."""


def transfer(field: NodalVectorField, target: StructuredMesh) -> NodalVectorField:
    """P1 interpolation of ``field`` at the dofs of ``target``."""
    src = field.mesh
    if src is target:
        return field
    if src.dim != target.dim:
        raise ComparisonError("meshes of different dimension")
    vals = fem.interpolate(src, field.values, target.dof_points, periodic_wrap=src.periodic)
    return NodalVectorField(target, vals)


def _on_mesh(field, mesh):
    if field.mesh is mesh:
        return field.values
    if field.mesh.dim != mesh.dim:
        raise ComparisonError("fields live on domains of different dimension")
    return transfer(field, mesh).values


def _at_quadrature(mesh, values):
    """P1 values at quadrature points, ``(E, Q, c)``; also returns weights."""
    lam, w = fem.QUADRATURE[mesh.dim]
    v = np.asarray(values)
    if v.ndim == 1:
        v = v[:, None]
    loc = v[mesh.elements_dof]                                  # (E, k, c)
    return np.einsum("qk,ekc->eqc", lam, loc), w


def _quad_points(mesh):
    lam, _ = fem.QUADRATURE[mesh.dim]
    return np.einsum("qk,ekd->eqd", lam, mesh.points[mesh.elements])


def l2_norm(field: NodalVectorField) -> float:
    vq, w = _at_quadrature(field.mesh, field.values)
    return math.sqrt(float(np.einsum("e,q,eqc->", field.mesh.volumes, w, vq ** 2)))


def h1_norm(field: NodalVectorField) -> float:
    g = fem.element_gradient(field.mesh, field.values)
    semi = float(np.tensordot(field.mesh.volumes, g ** 2, axes=(0, 0)).sum())
    return math.sqrt(l2_norm(field) ** 2 + semi)


def error_l2(ref: NodalVectorField, approx: NodalVectorField) -> float:
    """``||ref - approx||_{L2}``; ``approx`` is interpolated onto ``ref``'s mesh if needed."""
    mesh = ref.mesh
    a = _on_mesh(approx, mesh)
    if a.shape != ref.values.shape:
        raise ComparisonError("fields have different component counts")
    return l2_norm(NodalVectorField(mesh, ref.values - a))


def error_h1_corrected(ref: NodalVectorField, m0: NodalVectorField, corrector_kind: str | None,
                       corrector=None, eps: float | None = None,
                       include_hessian: bool = True) -> float:
    """Full H1 norm of ``ref - m0 - K . grad m0``.

    ``corrector_kind="chi"``: ``K = eps chi(x/eps)`` with ``corrector`` a
    :class:`CellSolutions`; ``"neumann"``: ``K = Phi - x`` with a
    :class:`NeumannCorrector`; ``None``: no correction. ``grad m0`` is the
    recovered nodal gradient ``G`` and the derivative of the correction is
    taken by the chain rule, ``grad_y chi(x/eps) G + eps chi grad G`` (resp.
    ``(grad Phi - I) G + (Phi - x) grad G``), pointwise at quadrature points.

    ``include_hessian=False`` drops the ``grad G`` part, i.e. treats the
    gradient of ``m0`` as constant on each element. This is a diagnostic
    variant, not the error norm.
    """
    mesh = ref.mesh
    m0v = _on_mesh(m0, mesh)
    d_nodal = ref.values - m0v
    dq, w = _at_quadrature(mesh, d_nodal)                       # (E, Q, 3)
    dgrad = fem.element_gradient(mesh, d_nodal)                 # (E, 3, d)
    dgrad = np.broadcast_to(dgrad[:, None], (mesh.n_elements, len(w)) + dgrad.shape[1:]).copy()

    if corrector_kind is not None:
        G = fem.recover_gradient(mesh, m0v)                     # (P, 3, d)
        P, c, n = G.shape
        Gq, _ = _at_quadrature(mesh, G.reshape(P, c * n))
        Gq = Gq.reshape(mesh.n_elements, len(w), c, n)
        dG = fem.element_gradient(mesh, G.reshape(P, c * n)).reshape(mesh.n_elements, c, n, n)
        if corrector_kind == "chi":
            if not isinstance(corrector, CellSolutions) or eps is None:
                raise ComparisonError("chi correction needs CellSolutions and eps")
            xq = _quad_points(mesh).reshape(-1, n)
            sampler = CellSampler(corrector.mesh, xq, eps)
            K = (eps * sampler(corrector.chi)).T.reshape(mesh.n_elements, len(w), n)
            dK = sampler.gradient(corrector.chi)                # (n_j, EQ, n_k): d chi_j / d y_k
            dK = dK.transpose(1, 0, 2).reshape(mesh.n_elements, len(w), n, n)
        elif corrector_kind == "neumann":
            if not isinstance(corrector, NeumannCorrector) or corrector.mesh is not mesh:
                raise ComparisonError("neumann correction needs a corrector on the reference mesh")
            disp = corrector.displacement                       # (P, n)
            K, _ = _at_quadrature(mesh, disp)
            dK = fem.element_gradient(mesh, disp)               # (E, n_j, n_k)
            dK = np.broadcast_to(dK[:, None], (mesh.n_elements, len(w), n, n))
        else:
            raise ComparisonError(f"unknown corrector kind {corrector_kind!r}")
        corr = np.einsum("eqj,eqcj->eqc", K, Gq)
        # d/dx_k (K_j G_cj) = dK_j/dx_k G_cj + K_j dG_cj/dx_k
        dcorr = np.einsum("eqjk,eqcj->eqck", dK, Gq)
        if include_hessian:
            dcorr = dcorr + np.einsum("eqj,ecjk->eqck", K, dG)
        dq = dq - corr
        dgrad = dgrad - dcorr
    vol = mesh.volumes
    total = np.einsum("e,q,eqc->", vol, w, dq ** 2) + np.einsum("e,q,eqck->", vol, w, dgrad ** 2)
    return math.sqrt(float(total))


def fit_order(records) -> float:
    """Least-squares slope of ``log(err)`` against ``log(eps)``."""
    data = [(float(e), float(r)) for e, r in records]
    eps = np.array([d[0] for d in data])
    err = np.array([d[1] for d in data])
    if len(np.unique(eps)) < 2:
        raise FitError("need at least two distinct eps values")
    if np.any(eps <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise FitError("eps and errors must be positive and finite")
    slope, _ = np.polyfit(np.log(eps), np.log(err), 1)
    return float(slope)


@dataclass
class ErrorRecord:
    n: int
    j: int
    e0: float = math.nan
    re0: float = math.nan
    e1: float = math.nan
    re1: float = math.nan
    e2: float = math.nan
    re2: float = math.nan

    @property
    def eps(self) -> float:
        return 1.0 / self.n


ERROR_COLUMNS = [f.name for f in dc_fields(ErrorRecord)]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_value(float(v))


def write_errors_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_COLUMNS)
        for r in sorted(records, key=lambda r: (r.n, r.j)):
            w.writerow([_fmt(getattr(r, c)) for c in ERROR_COLUMNS])


def read_errors_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ErrorRecord(n=int(row["n"]), j=int(row["j"]),
                                   **{k: float(row[k]) for k in ERROR_COLUMNS[2:]}))
    return out


def fit_orders(records, quantities=("e0", "e1", "e2")) -> list:
    """``(j, quantity, slope)`` for every checkpoint with enough finite data."""
    out = []
    for j in sorted({r.j for r in records}):
        for q in quantities:
            pts = [(r.eps, getattr(r, q)) for r in records
                   if r.j == j and np.isfinite(getattr(r, q))]
            try:
                out.append((j, q, fit_order(pts)))
            except FitError:
                continue
    return out


def write_orders_csv(path, orders) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "quantity", "slope"])
        for j, q, s in orders:
            w.writerow([j, q, format_value(s)])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
