"""Legacy ASCII VTK unstructured-grid output (tetra cell type 10)."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

VTK_TETRA = 10


def write_vtk(mesh: Mesh, path: str, point_vectors=None, cell_vectors=None) -> None:
    """Write the mesh with optional named vector data.

    point_vectors / cell_vectors: dict name -> (N, 3) array.
    """
    point_vectors = point_vectors or {}
    cell_vectors = cell_vectors or {}
    nv, nt = mesh.num_vertices, mesh.num_tets
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("mhdfem mesh\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write(f"CELLS {nt} {5 * nt}\n")
        for t in mesh.tets:
            fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        for _ in range(nt):
            fh.write(f"{VTK_TETRA}\n")
        if point_vectors:
            fh.write(f"POINT_DATA {nv}\n")
            for name, arr in point_vectors.items():
                fh.write(f"VECTORS {name} double\n")
                for v in np.asarray(arr):
                    fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        if cell_vectors:
            fh.write(f"CELL_DATA {nt}\n")
            for name, arr in cell_vectors.items():
                fh.write(f"VECTORS {name} double\n")
                for v in np.asarray(arr):
                    fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")


def read_vtk_point_count(path: str) -> int:
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                return int(line.split()[1])
    raise ValueError("no POINTS section found")
