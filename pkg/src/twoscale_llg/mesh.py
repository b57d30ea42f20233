"""Structured simplicial meshes of the unit square and unit cube.

Squares are cut along the lower-left to upper-right diagonal; cubes are cut
into six tetrahedra sharing the main diagonal (Kuhn split). Both splits are
translation invariant, so the mesh is conforming across periodic faces and
point location reduces to sorting local coordinates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh construction or point location request."""


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform simplicial mesh of ``[0, 1]**dim`` with ``N`` cells per side.

    Degrees of freedom are the independent nodes: every grid node for
    ``bc="neumann"``, and the nodes left after identifying opposite faces for
    ``bc="periodic"``. Fields live on dofs; ``elements_dof`` indexes into them.
    """

    dim: int
    N: int
    bc: str
    points: np.ndarray          # (n_nodes, dim) grid node coordinates
    elements: np.ndarray        # (n_elem, dim+1) grid node indices
    node_to_dof: np.ndarray     # (n_nodes,)
    boundary_facets: np.ndarray = field(repr=False)   # (n_facets, dim) node indices
    facet_normals: np.ndarray = field(repr=False)     # (n_facets, dim)
    facet_elements: np.ndarray = field(repr=False)    # (n_facets,)

    def __post_init__(self):
        X = self.points[self.elements]
        J = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(J)
        object.__setattr__(self, "volumes", det / math.factorial(self.dim))
        # rows of inv(J)^T are gradients of barycentric coords 1..dim
        G = np.linalg.inv(J).transpose(0, 2, 1)
        grads = np.concatenate([-G.sum(axis=1, keepdims=True), G], axis=1)
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "centroids", X.mean(axis=1))
        object.__setattr__(self, "elements_dof", self.node_to_dof[self.elements])
        n_dof = int(self.node_to_dof.max()) + 1
        object.__setattr__(self, "n_dof", n_dof)
        # first grid node carrying each dof: the min-corner representative
        first = np.full(n_dof, len(self.points))
        np.minimum.at(first, self.node_to_dof, np.arange(len(self.points)))
        object.__setattr__(self, "dof_points", self.points[first])

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def periodic_map(self):
        """Node to master-node map, or ``None`` for non-periodic meshes."""
        if not self.periodic:
            return None
        return self.node_index(self._grid_index() % self.N)

    def _grid_index(self) -> np.ndarray:
        return np.rint(self.points * self.N).astype(np.int64)

    def node_index(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        stride = (self.N + 1) ** np.arange(self.dim)
        return idx @ stride

    def nodal_values(self, dof_values: np.ndarray) -> np.ndarray:
        """Expand dof values to all grid nodes (duplicates on periodic faces)."""
        return np.asarray(dof_values)[self.node_to_dof]

    # -- point location -------------------------------------------------

    def locate(self, x, periodic_wrap: bool = False):
        """Return ``(element_index, barycentric_coords)`` for each point.

        With ``periodic_wrap`` the points are first mapped into the unit cell
        by their fractional part. Points outside ``[0, 1]**dim`` otherwise
        raise :class:`MeshError`.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise MeshError(f"expected points of dimension {self.dim}")
        if periodic_wrap:
            x = x - np.floor(x)
        tol = 1e-12
        if np.any(x < -tol) or np.any(x > 1 + tol):
            raise MeshError("point outside the unit domain; use periodic_wrap")
        s = np.clip(x, 0.0, 1.0) * self.N
        cell = np.minimum(np.floor(s), self.N - 1).astype(np.int64)
        local = s - cell
        # the simplex containing a point is fixed by the order of its local
        # coordinates (descending); ties fall on shared facets
        order = np.argsort(-local, axis=1, kind="stable")
        perm_id = _perm_lookup(self.dim)[_perm_key(order, self.dim)]
        cell_id = cell @ (self.N ** np.arange(self.dim))
        elem = cell_id * math.factorial(self.dim) + perm_id
        lam = self.barycentric(elem, x)
        return elem, lam

    def barycentric(self, elem, x) -> np.ndarray:
        G = self.grads[elem]
        c = self.centroids[elem]
        return 1.0 / (self.dim + 1) + np.einsum("pkd,pd->pk", G, x - c)


_PERMS: dict[int, list[tuple[int, ...]]] = {}


def _perms(dim: int):
    if dim not in _PERMS:
        _PERMS[dim] = list(itertools.permutations(range(dim)))
    return _PERMS[dim]


def _perm_key(order: np.ndarray, dim: int) -> np.ndarray:
    return order @ (dim ** np.arange(dim))


def _perm_lookup(dim: int) -> np.ndarray:
    table = np.full(dim**dim, -1, dtype=np.int64)
    for k, p in enumerate(_perms(dim)):
        table[np.dot(p, dim ** np.arange(dim))] = k
    return table


def build_mesh(dimension: int, N: int, bc: str = "neumann") -> StructuredMesh:
    """Build the uniform simplicial mesh of the unit square or cube.

    Parameters
    ----------
    dimension : int
        2 or 3.
    N : int
        Cells per side, ``h = 1/N``.
    bc : {"periodic", "neumann"}
        ``"periodic"`` identifies nodes on opposite faces.
    """
    if dimension not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {dimension}")
    if int(N) != N or N < 1:
        raise MeshError(f"N must be a positive integer, got {N}")
    if bc not in ("periodic", "neumann"):
        raise MeshError(f"unknown boundary condition {bc!r}")
    N = int(N)
    d = dimension
    ax = np.arange(N + 1)
    grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
    # x index fastest
    idx = grid.transpose(*range(d - 1, -1, -1), d).reshape(-1, d)
    points = idx / N
    stride = (N + 1) ** np.arange(d)

    cells = np.stack(np.meshgrid(*([np.arange(N)] * d), indexing="ij"), axis=-1)
    cells = cells.transpose(*range(d - 1, -1, -1), d).reshape(-1, d)
    elems = []
    for p in _perms(d):
        verts = [cells.copy()]
        cur = cells.copy()
        for axis in p:
            cur = cur.copy()
            cur[:, axis] += 1
            verts.append(cur)
        elems.append(np.stack([v @ stride for v in verts], axis=1))
    # element id = cell_id * d! + perm_id
    elements = np.stack(elems, axis=1).reshape(-1, d + 1)

    X = points[elements]
    det = np.linalg.det(X[:, 1:, :] - X[:, :1, :])
    neg = det < 0
    elements[neg, -2], elements[neg, -1] = elements[neg, -1].copy(), elements[neg, -2].copy()

    if bc == "periodic":
        node_to_dof_nodes = (idx % N) @ (N ** np.arange(d))
    else:
        node_to_dof_nodes = idx @ stride

    facets, normals, owners = _boundary_facets(points, elements, d)
    return StructuredMesh(
        dim=d, N=N, bc=bc, points=points, elements=elements,
        node_to_dof=node_to_dof_nodes.astype(np.int64),
        boundary_facets=facets, facet_normals=normals, facet_elements=owners,
    )


def _boundary_facets(points, elements, d):
    facets, normals, owners = [], [], []
    for k in range(d + 1):
        f = np.delete(elements, k, axis=1)
        P = points[f]
        for axis in range(d):
            for side in (0.0, 1.0):
                on = np.all(np.abs(P[:, :, axis] - side) < 1e-14, axis=1)
                if not on.any():
                    continue
                facets.append(f[on])
                nrm = np.zeros((on.sum(), d))
                nrm[:, axis] = 1.0 if side == 1.0 else -1.0
                normals.append(nrm)
                owners.append(np.nonzero(on)[0])
    return np.concatenate(facets), np.concatenate(normals), np.concatenate(owners)


def facet_measures(mesh: StructuredMesh) -> np.ndarray:
    """Length (2D) or area (3D) of each boundary facet."""
    P = mesh.points[mesh.boundary_facets]
    if mesh.dim == 2:
        return np.linalg.norm(P[:, 1] - P[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
