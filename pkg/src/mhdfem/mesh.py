"""Structured tetrahedral meshes of the unit cube.

Each of the n^3 subcubes is split into six tetrahedra sharing the subcube's
(0,0,0)-(1,1,1) diagonal (Kuhn subdivision).  All entity tuples (edges,
faces, tets) are stored with ascending global vertex indices; incidence
signs follow from that single convention, which makes the composed signed
incidence matrices vanish exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# Local entities of a tet (v0 < v1 < v2 < v3):
# six edges in lexicographic order of local vertex pairs,
# four faces opposite each local vertex.
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])
# Boundary-operator sign of face k of the ascending tet [v0,v1,v2,v3].
FACE_PARITY = np.array([1, -1, 1, -1])
# Local edges of an ascending face (a,b,c): (b,c), (a,c), (a,b) with signs.
FACE_LOCAL_EDGES = np.array([(1, 2), (0, 2), (0, 1)])
FACE_EDGE_PARITY = np.array([1, -1, 1])


@dataclass
class Mesh:
    """Immutable tetrahedral mesh of (0,1)^3 with oriented entity tables."""

    n: int
    vertices: np.ndarray       # (V, 3)
    edges: np.ndarray          # (E, 2) ascending pairs
    faces: np.ndarray          # (F, 3) ascending triples
    tets: np.ndarray           # (T, 4) ascending 4-tuples
    tet_edges: np.ndarray      # (T, 6) global edge index of LOCAL_EDGES
    tet_faces: np.ndarray      # (T, 4) global face index of LOCAL_FACES
    tet_face_signs: np.ndarray  # (T, 4) orientation-corrected +-1
    face_edges: np.ndarray     # (F, 3) global edge index of FACE_LOCAL_EDGES
    face_edge_signs: np.ndarray  # (F, 3)
    boundary_vertices: np.ndarray  # (V,) bool
    boundary_edges: np.ndarray     # (E,) bool
    boundary_faces: np.ndarray     # (F,) bool
    face_tet_count: np.ndarray     # (F,) 1 or 2
    tet_orientations: np.ndarray   # (T,) sign of det under ascending order
    volumes: np.ndarray            # (T,) positive tet volumes
    grad_lambda: np.ndarray        # (T, 4, 3) barycentric gradients

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    @property
    def h(self) -> float:
        return 1.0 / self.n


def _unique_entities(tuples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate ascending entity tuples; return table and inverse map."""
    table, inverse = np.unique(tuples, axis=0, return_inverse=True)
    return table, inverse.reshape(-1)


def build_structured_mesh(n: int) -> Mesh:
    """Kuhn-subdivided structured mesh of the unit cube, n cells per axis."""
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")

    s = n + 1
    grid = np.arange(s)
    k, j, i = np.meshgrid(grid, grid, grid, indexing="ij")
    vertices = np.column_stack([i.ravel(), j.ravel(), k.ravel()]) / float(n)

    def vid(ix, jy, kz):
        return ix + s * (jy + s * kz)

    # Six tets per subcube: staircase paths from corner (0,0,0) to (1,1,1).
    corner_offsets = []
    for perm in itertools.permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        corner_offsets.append(np.array(path))
    corner_offsets = np.array(corner_offsets)  # (6, 4, 3)

    base = np.arange(n)
    ck, cj, ci = np.meshgrid(base, base, base, indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    tets = []
    for path in corner_offsets:
        ids = [vid(ci + o[0], cj + o[1], ck + o[2]) for o in path]
        tets.append(np.column_stack(ids))
    tets = np.vstack(tets)
    tets = np.sort(tets, axis=1)
    tets = tets[np.lexsort(tets.T[::-1])]

    all_edges = tets[:, LOCAL_EDGES].reshape(-1, 2)
    edges, edge_inv = _unique_entities(all_edges)
    tet_edges = edge_inv.reshape(len(tets), 6)

    all_faces = tets[:, LOCAL_FACES].reshape(-1, 3)
    faces, face_inv = _unique_entities(all_faces)
    tet_faces = face_inv.reshape(len(tets), 4)

    face_tet_count = np.bincount(tet_faces.ravel(), minlength=len(faces))
    boundary_faces = face_tet_count == 1

    boundary_edges = np.zeros(len(edges), dtype=bool)
    boundary_vertices = np.zeros(len(vertices), dtype=bool)
    # Edges of each face, looked up in the global edge table.
    fe = faces[:, FACE_LOCAL_EDGES].reshape(-1, 2)
    key_edges = edges[:, 0].astype(np.int64) * len(vertices) + edges[:, 1]
    key_fe = fe[:, 0].astype(np.int64) * len(vertices) + fe[:, 1]
    face_edges = np.searchsorted(key_edges, key_fe).reshape(len(faces), 3)
    face_edge_signs = np.broadcast_to(FACE_EDGE_PARITY, face_edges.shape).copy()

    boundary_edges[face_edges[boundary_faces].ravel()] = True
    boundary_vertices[faces[boundary_faces].ravel()] = True

    # Orientation correction: ascending vertex order may be negatively
    # oriented in space; D rows carry the sign so that D realizes the
    # per-cell divergence integral.
    p = vertices[tets]
    mats = p[:, 1:] - p[:, :1]
    dets = np.linalg.det(mats)
    tet_orientations = np.sign(dets).astype(int)
    volumes = np.abs(dets) / 6.0
    tet_face_signs = tet_orientations[:, None] * FACE_PARITY[None, :]

    # Barycentric gradients: rows of the inverse affine map.
    inv = np.linalg.inv(mats)           # columns are grad lambda_1..3
    gl = np.empty((len(tets), 4, 3))
    gl[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    gl[:, 0, :] = -gl[:, 1:, :].sum(axis=1)

    return Mesh(
        n=n,
        vertices=vertices,
        edges=edges,
        faces=faces,
        tets=tets,
        tet_edges=tet_edges,
        tet_faces=tet_faces,
        tet_face_signs=tet_face_signs,
        face_edges=face_edges,
        face_edge_signs=face_edge_signs,
        boundary_vertices=boundary_vertices,
        boundary_edges=boundary_edges,
        boundary_faces=boundary_faces,
        face_tet_count=face_tet_count,
        tet_orientations=tet_orientations,
        volumes=volumes,
        grad_lambda=gl,
    )


def boundary_entities(mesh: Mesh, dim: int) -> np.ndarray:
    """Indices of boundary entities of the given dimension (0, 1 or 2)."""
    if dim == 0:
        flags = mesh.boundary_vertices
    elif dim == 1:
        flags = mesh.boundary_edges
    elif dim == 2:
        flags = mesh.boundary_faces
    else:
        raise ValueError(f"boundary entities exist for dim 0..2, got {dim}")
    return np.flatnonzero(flags)


def entity_adjacency(mesh: Mesh, tet: int) -> dict:
    """Local-to-global maps with signs for one tet's vertices/edges/faces."""
    if not 0 <= tet < mesh.num_tets:
        raise ValueError(f"tet index {tet} out of range")
    return {
        "vertices": mesh.tets[tet].copy(),
        "edges": mesh.tet_edges[tet].copy(),
        "edge_signs": np.ones(6, dtype=int),
        "faces": mesh.tet_faces[tet].copy(),
        "face_signs": mesh.tet_face_signs[tet].copy(),
    }


def write_vtk_mesh(mesh: Mesh, path: str) -> None:
    """Dump the mesh in legacy ASCII VTK unstructured-grid format."""
    from .vtkio import write_vtk

    write_vtk(mesh, path)
