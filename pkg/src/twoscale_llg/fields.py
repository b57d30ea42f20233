"""Nodal P1 fields and the plain-text snapshot format.

Snapshot layout::

    dim N bc
    v_1 [v_2 v_3]        # one line per dof, 17 significant digits
    ...
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import StructuredMesh, build_mesh


@dataclass(eq=False)
class NodalVectorField:
    """P1 field with ``component_count`` values per dof."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_dof:
            raise ValueError(f"expected {self.mesh.n_dof} rows, got {v.shape[0]}")
        self.values = v

    @property
    def component_count(self) -> int:
        return self.values.shape[1]

    @property
    def scalar(self) -> np.ndarray:
        return self.values[:, 0]

    def copy(self) -> "NodalVectorField":
        return NodalVectorField(self.mesh, self.values.copy())


def format_value(x: float) -> str:
    return f"{x:.16e}"


def write_snapshot(path, field: NodalVectorField) -> None:
    m = field.mesh
    lines = [f"{m.dim} {m.N} {m.bc}"]
    lines.extend(" ".join(format_value(x) for x in row) for row in field.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path, mesh: StructuredMesh | None = None) -> NodalVectorField:
    text = Path(path).read_text().splitlines()
    dim, N, bc = text[0].split()
    if mesh is None:
        mesh = build_mesh(int(dim), int(N), bc)
    elif (mesh.dim, mesh.N, mesh.bc) != (int(dim), int(N), bc):
        raise ValueError(f"snapshot header {text[0]!r} does not match mesh")
    values = np.array([[float(t) for t in line.split()] for line in text[1:] if line.strip()])
    return NodalVectorField(mesh, values)
