"""Lowest-order discrete de Rham spaces on tetrahedral meshes.

The four spaces are P1 (vertex DOFs), first-kind Nedelec of order one (edge
tangential moments), Raviart-Thomas of order one (face fluxes) and P0 (cell
averages).  Bases are Whitney forms written in global ascending vertex order,
so every local-to-global sign is +1 and the strong grad/curl/div operators
are exactly the signed incidence matrices acting on coefficient vectors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import FACE_LOCAL_EDGES, LOCAL_EDGES, LOCAL_FACES, Mesh
from .quadrature import QuadratureRule, segment_rule, triangle_rule

# 8-point Gauss-Legendre per edge: keeps the curl of interpolated gradients
# below 1e-12 even on the coarsest meshes (4 points stalls near 1e-4 at n=2).
DEFAULT_EDGE_DEGREE = 15
# degree-20 (121-point) face rule keeps the per-cell divergence of
# interpolated solenoidal trigonometric fields near machine precision even
# on the one-cube mesh; interpolation runs once per simulation, so the
# extra points are cheap
DEFAULT_FACE_DEGREE = 20


class SpaceKind(enum.Enum):
    GRAD = "grad"
    CURL = "curl"
    DIV = "div"
    L2 = "l2"


@dataclass
class FeSpace:
    kind: SpaceKind
    mesh: Mesh
    ndof: int
    free_dofs: np.ndarray
    constrained_dofs: np.ndarray


@dataclass
class FieldVector:
    """Coefficient vector tagged with its space; boundary DOFs pinned to 0."""

    space: FeSpace
    coeffs: np.ndarray

    def copy(self) -> "FieldVector":
        return FieldVector(self.space, self.coeffs.copy())

    def zeros_like(self) -> "FieldVector":
        return FieldVector(self.space, np.zeros_like(self.coeffs))


def make_space(mesh: Mesh, kind: SpaceKind) -> FeSpace:
    if kind is SpaceKind.GRAD:
        flags = mesh.boundary_vertices
        ndof = mesh.num_vertices
    elif kind is SpaceKind.CURL:
        flags = mesh.boundary_edges
        ndof = mesh.num_edges
    elif kind is SpaceKind.DIV:
        flags = mesh.boundary_faces
        ndof = mesh.num_faces
    elif kind is SpaceKind.L2:
        flags = np.zeros(mesh.num_tets, dtype=bool)
        ndof = mesh.num_tets
    else:
        raise ValueError(kind)
    return FeSpace(
        kind=kind,
        mesh=mesh,
        ndof=ndof,
        free_dofs=np.flatnonzero(~flags),
        constrained_dofs=np.flatnonzero(flags),
    )


def zero_field(space: FeSpace) -> FieldVector:
    return FieldVector(space, np.zeros(space.ndof))


def pin_boundary(field: FieldVector) -> FieldVector:
    field.coeffs[field.space.constrained_dofs] = 0.0
    return field


# ---------------------------------------------------------------------------
# Signed incidence (exterior derivative) matrices
# ---------------------------------------------------------------------------

def exterior_derivative_matrix(space: FeSpace) -> sp.csr_matrix:
    """G (edges x vertices), C (faces x edges) or D (cells x faces).

    Entries are in {-1, 0, +1}; grad/curl/div of a coefficient vector in the
    source space are exactly G@p, C@x, D@y in the coefficients of the next
    space (for D, the per-cell divergence integral).  C@G = 0 and D@C = 0
    hold as integer identities.
    """
    mesh = space.mesh
    if space.kind is SpaceKind.GRAD:
        e = np.arange(mesh.num_edges)
        rows = np.repeat(e, 2)
        cols = mesh.edges.ravel()
        vals = np.tile([-1.0, 1.0], mesh.num_edges)
        shape = (mesh.num_edges, mesh.num_vertices)
    elif space.kind is SpaceKind.CURL:
        f = np.arange(mesh.num_faces)
        rows = np.repeat(f, 3)
        cols = mesh.face_edges.ravel()
        vals = mesh.face_edge_signs.ravel().astype(float)
        shape = (mesh.num_faces, mesh.num_edges)
    elif space.kind is SpaceKind.DIV:
        t = np.arange(mesh.num_tets)
        rows = np.repeat(t, 4)
        cols = mesh.tet_faces.ravel()
        vals = mesh.tet_face_signs.ravel().astype(float)
        shape = (mesh.num_tets, mesh.num_faces)
    else:
        raise ValueError("L2 has no exterior derivative")
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


# ---------------------------------------------------------------------------
# Whitney basis evaluation
# ---------------------------------------------------------------------------

def curl_basis_at(mesh: Mesh, lam: np.ndarray, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
    """Nedelec basis values, shape (T, nq, 6, 3).

    lam: (nq, 4) barycentric points.  Basis for local edge (i, j) is
    lambda_i grad(lambda_j) - lambda_j grad(lambda_i).
    """
    gl = mesh.grad_lambda[cells]
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    return (
        lam[None, :, i, None] * gl[:, None, j, :]
        - lam[None, :, j, None] * gl[:, None, i, :]
    )


def div_basis_at(mesh: Mesh, lam: np.ndarray, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
    """Raviart-Thomas basis values, shape (T, nq, 4, 3).

    Basis for local face (i, j, k) is 2 (l_i gl_j x gl_k + l_j gl_k x gl_i
    + l_k gl_i x gl_j); the flux DOF is taken against the right-hand-rule
    normal of the ascending vertex triple.
    """
    gl = mesh.grad_lambda[cells]
    out = np.zeros((gl.shape[0], lam.shape[0], 4, 3))
    for loc, (i, j, k) in enumerate(LOCAL_FACES):
        cjk = np.cross(gl[:, j, :], gl[:, k, :])
        cki = np.cross(gl[:, k, :], gl[:, i, :])
        cij = np.cross(gl[:, i, :], gl[:, j, :])
        out[:, :, loc, :] = 2.0 * (
            lam[None, :, i, None] * cjk[:, None, :]
            + lam[None, :, j, None] * cki[:, None, :]
            + lam[None, :, k, None] * cij[:, None, :]
        )
    return out


def eval_curl_field(field: FieldVector, lam: np.ndarray) -> np.ndarray:
    """Values of a Nedelec field at barycentric points, shape (T, nq, 3)."""
    mesh = field.space.mesh
    xe = field.coeffs[mesh.tet_edges]  # (T, 6)
    gl = mesh.grad_lambda
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    a = np.einsum("te,qe,ted->tqd", xe, lam[:, i], gl[:, j, :], optimize=True)
    b = np.einsum("te,qe,ted->tqd", xe, lam[:, j], gl[:, i, :], optimize=True)
    return a - b


def eval_div_field(field: FieldVector, lam: np.ndarray) -> np.ndarray:
    """Values of a Raviart-Thomas field at barycentric points, (T, nq, 3)."""
    mesh = field.space.mesh
    yf = field.coeffs[mesh.tet_faces]  # (T, 4)
    gl = mesh.grad_lambda
    out = np.zeros((mesh.num_tets, lam.shape[0], 3))
    for loc, (i, j, k) in enumerate(LOCAL_FACES):
        cjk = np.cross(gl[:, j, :], gl[:, k, :])
        cki = np.cross(gl[:, k, :], gl[:, i, :])
        cij = np.cross(gl[:, i, :], gl[:, j, :])
        term = (
            lam[None, :, i, None] * cjk[:, None, :]
            + lam[None, :, j, None] * cki[:, None, :]
            + lam[None, :, k, None] * cij[:, None, :]
        )
        out += 2.0 * yf[:, loc, None, None] * term
    return out


def eval_grad_field(field: FieldVector, lam: np.ndarray) -> np.ndarray:
    """Values of a P1 scalar field at barycentric points, shape (T, nq)."""
    mesh = field.space.mesh
    pv = field.coeffs[mesh.tets]  # (T, 4)
    return np.einsum("tv,qv->tq", pv, lam)


def eval_curl_of_curl_field(field: FieldVector) -> np.ndarray:
    """Cellwise-constant curl of a Nedelec field, shape (T, 3)."""
    mesh = field.space.mesh
    xe = field.coeffs[mesh.tet_edges]
    gl = mesh.grad_lambda
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    cr = 2.0 * np.cross(gl[:, i, :], gl[:, j, :])  # (T, 6, 3)
    return np.einsum("te,ted->td", xe, cr)


def physical_points(mesh: Mesh, lam: np.ndarray) -> np.ndarray:
    """Physical coordinates of barycentric points per cell, (T, nq, 3)."""
    return np.einsum("qv,tvd->tqd", lam, mesh.vertices[mesh.tets])


# ---------------------------------------------------------------------------
# Canonical interpolation
# ---------------------------------------------------------------------------

def canonical_interpolate(
    f,
    space: FeSpace,
    edge_rule: QuadratureRule | None = None,
    face_rule: QuadratureRule | None = None,
    cell_rule: QuadratureRule | None = None,
) -> FieldVector:
    """Interpolate an analytic field by its canonical DOFs.

    f maps an (N, 3) array of points to values: (N,) for GRAD/L2 and (N, 3)
    for CURL/DIV.  Boundary DOFs are pinned to exactly 0 afterwards.
    """
    mesh = space.mesh
    if space.kind is SpaceKind.GRAD:
        coeffs = np.asarray(f(mesh.vertices), dtype=float)
    elif space.kind is SpaceKind.CURL:
        rule = edge_rule or segment_rule(DEFAULT_EDGE_DEGREE)
        p0 = mesh.vertices[mesh.edges[:, 0]]
        p1 = mesh.vertices[mesh.edges[:, 1]]
        tang = p1 - p0  # unnormalized: |e| factor folds into the line measure
        pts = (
            rule.points[None, :, 0, None] * p0[:, None, :]
            + rule.points[None, :, 1, None] * p1[:, None, :]
        )
        vals = np.asarray(f(pts.reshape(-1, 3))).reshape(len(p0), rule.npoints, 3)
        coeffs = np.einsum("q,eqd,ed->e", rule.weights, vals, tang)
    elif space.kind is SpaceKind.DIV:
        rule = face_rule or triangle_rule(DEFAULT_FACE_DEGREE)
        pa = mesh.vertices[mesh.faces[:, 0]]
        pb = mesh.vertices[mesh.faces[:, 1]]
        pc = mesh.vertices[mesh.faces[:, 2]]
        # area-scaled right-hand-rule normal of the ascending triple
        normal = 0.5 * np.cross(pb - pa, pc - pa)
        pts = (
            rule.points[None, :, 0, None] * pa[:, None, :]
            + rule.points[None, :, 1, None] * pb[:, None, :]
            + rule.points[None, :, 2, None] * pc[:, None, :]
        )
        vals = np.asarray(f(pts.reshape(-1, 3))).reshape(len(pa), rule.npoints, 3)
        coeffs = np.einsum("q,fqd,fd->f", rule.weights / rule.ref_measure, vals, normal)
    elif space.kind is SpaceKind.L2:
        from .quadrature import tetrahedron_rule

        rule = cell_rule or tetrahedron_rule(5)
        pts = physical_points(mesh, rule.points)
        vals = np.asarray(f(pts.reshape(-1, 3))).reshape(mesh.num_tets, rule.npoints)
        coeffs = np.einsum("q,tq->t", rule.weights / rule.ref_measure, vals)
    else:
        raise ValueError(space.kind)
    return pin_boundary(FieldVector(space, coeffs))


# ---------------------------------------------------------------------------
# L2 projections and discrete curl / divergence
# ---------------------------------------------------------------------------

def _mass_solve(space: FeSpace, rhs_free: np.ndarray, mass=None, tol: float = 1e-13) -> FieldVector:
    from . import assembly, linalg

    M = mass if mass is not None else assembly.mass_matrix(space)
    free = space.free_dofs
    Mff = M[free][:, free]
    x, report = linalg.cg(
        Mff, rhs_free, tol=tol, maxit=10 * len(rhs_free) + 50,
        precond=linalg.make_preconditioner("jacobi", Mff),
    )
    if not report.converged:
        raise linalg.SolverFailure("mass solve failed to converge")
    out = zero_field(space)
    out.coeffs[free] = x
    return out


def l2_project(f, target: FeSpace, mass=None, tol: float = 1e-13) -> FieldVector:
    """L2-project an analytic field or a FieldVector onto the free DOFs."""
    from . import assembly

    if isinstance(f, FieldVector):
        rhs = assembly.mixed_mass_apply(target, f)
    else:
        rhs = assembly.load_vector(f, target)
    return _mass_solve(target, rhs[target.free_dofs], mass=mass, tol=tol)


def discrete_curl(B: FieldVector, curl_space: FeSpace, operators=None, tol: float = 1e-13) -> FieldVector:
    """Weak curl of a Raviart-Thomas field into the Nedelec space.

    Solves (j, V) = (B, curl V) for all free test fields V.
    """
    from . import assembly

    if B.space.kind is not SpaceKind.DIV:
        raise ValueError("discrete_curl expects a DIV-space field")
    if operators is not None:
        rhs = operators.C.T @ (operators.M_div @ B.coeffs)
        return _mass_solve(curl_space, rhs[curl_space.free_dofs],
                           mass=operators.M_curl, tol=tol)
    C = exterior_derivative_matrix(curl_space)
    M_div = assembly.mass_matrix(make_space(B.space.mesh, SpaceKind.DIV))
    rhs = C.T @ (M_div @ B.coeffs)
    return _mass_solve(curl_space, rhs[curl_space.free_dofs], tol=tol)


def discrete_div(v: FieldVector, grad_space: FeSpace, operators=None, tol: float = 1e-13) -> FieldVector:
    """Weak divergence of a Nedelec field into the P1 space.

    Solves (div_h v, phi) = -(v, grad phi) for all free test functions.
    """
    from . import assembly

    if v.space.kind is not SpaceKind.CURL:
        raise ValueError("discrete_div expects a CURL-space field")
    if operators is not None:
        rhs = -(operators.G.T @ (operators.M_curl @ v.coeffs))
        return _mass_solve(grad_space, rhs[grad_space.free_dofs],
                           mass=operators.M_grad, tol=tol)
    G = exterior_derivative_matrix(grad_space)
    M_curl = assembly.mass_matrix(v.space)
    rhs = -(G.T @ (M_curl @ v.coeffs))
    return _mass_solve(grad_space, rhs[grad_space.free_dofs], tol=tol)


# ---------------------------------------------------------------------------
# CSV dump / load
# ---------------------------------------------------------------------------

def dump_field_csv(field: FieldVector, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("dof_index,value\n")
        for i, v in enumerate(field.coeffs):
            fh.write(f"{i},{v:.17g}\n")


def load_field_csv(space: FeSpace, path: str) -> FieldVector:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    coeffs = np.zeros(space.ndof)
    coeffs[data[:, 0].astype(int)] = data[:, 1]
    return FieldVector(space, coeffs)
