"""Mass matrices, load vectors and the lagged cross-product form vectors.

In lowest-order FEEC every bilinear pairing of the scheme reduces to mass
matrices composed with integer incidence matrices, so this module plus
`feec.exterior_derivative_matrix` is the entire assembly layer.  The
trilinear cross-product terms are assembled as vectors at given coefficient
fields (they are always Picard-lagged, never linearized into matrices).

Quadrature degrees are fixed per term: mass 2 (exact), trilinear 4 (exact:
the integrand has degree 3), analytic sources 5.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import feec
from .feec import FeSpace, FieldVector, SpaceKind
from .mesh import Mesh
from .quadrature import QuadratureRule, tetrahedron_rule

MASS_DEGREE = 2
TRILINEAR_DEGREE = 4
SOURCE_DEGREE = 5


def _cell_basis(space: FeSpace, lam: np.ndarray):
    """Per-cell basis values and the local-to-global DOF table."""
    mesh = space.mesh
    if space.kind is SpaceKind.CURL:
        return feec.curl_basis_at(mesh, lam), mesh.tet_edges
    if space.kind is SpaceKind.DIV:
        return feec.div_basis_at(mesh, lam), mesh.tet_faces
    if space.kind is SpaceKind.GRAD:
        # (T, nq, 4) scalar hats
        vals = np.broadcast_to(lam[None, :, :], (mesh.num_tets,) + lam.shape)
        return vals, mesh.tets
    raise ValueError(space.kind)


def mass_matrix(space: FeSpace, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Galerkin-exact mass matrix; SPD on the free DOFs."""
    mesh = space.mesh
    if space.kind is SpaceKind.L2:
        return sp.diags(mesh.volumes).tocsr()
    rule = quad or tetrahedron_rule(MASS_DEGREE)
    scale = mesh.volumes / rule.ref_measure  # (T,)
    vals, dofs = _cell_basis(space, rule.points)
    if vals.ndim == 4:
        loc = np.einsum("q,tqid,tqjd->tij", rule.weights, vals, vals, optimize=True)
    else:
        loc = np.einsum("q,tqi,tqj->tij", rule.weights, vals, vals, optimize=True)
    loc *= scale[:, None, None]
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    M = sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(space.ndof, space.ndof))
    M.sum_duplicates()
    return M


def mixed_mass_curl_div(mesh: Mesh, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Mixed mass matrix (E x F): (nedelec_e, rt_f)."""
    rule = quad or tetrahedron_rule(MASS_DEGREE)
    scale = mesh.volumes / rule.ref_measure
    cb = feec.curl_basis_at(mesh, rule.points)
    db = feec.div_basis_at(mesh, rule.points)
    loc = np.einsum("q,tqid,tqjd->tij", rule.weights, cb, db, optimize=True)
    loc *= scale[:, None, None]
    rows = np.repeat(mesh.tet_edges, 4, axis=1).ravel()
    cols = np.tile(mesh.tet_faces, (1, 6)).ravel()
    M = sp.csr_matrix((loc.ravel(), (rows, cols)),
                      shape=(mesh.num_edges, mesh.num_faces))
    M.sum_duplicates()
    return M


def mixed_mass_apply(target: FeSpace, f: FieldVector,
                     quad: QuadratureRule | None = None) -> np.ndarray:
    """RHS vector r_k = (f, psi_k) for psi_k in the target space."""
    rule = quad or tetrahedron_rule(MASS_DEGREE)
    mesh = target.mesh
    vals = _eval_field(f, rule.points)
    return _vector_against_basis(target, vals, rule)


def _eval_field(f: FieldVector, lam: np.ndarray) -> np.ndarray:
    if f.space.kind is SpaceKind.CURL:
        return feec.eval_curl_field(f, lam)
    if f.space.kind is SpaceKind.DIV:
        return feec.eval_div_field(f, lam)
    raise ValueError(f"cannot evaluate {f.space.kind} field as a vector field")


def _vector_against_basis(space: FeSpace, vals: np.ndarray,
                          rule: QuadratureRule) -> np.ndarray:
    """r_k = integral vals . psi_k for vector-valued test spaces."""
    mesh = space.mesh
    scale = mesh.volumes / rule.ref_measure
    basis, dofs = _cell_basis(space, rule.points)
    loc = np.einsum("q,tqd,tqid->ti", rule.weights, vals, basis, optimize=True)
    loc *= scale[:, None]
    out = np.zeros(space.ndof)
    np.add.at(out, dofs, loc)
    return out


def load_vector(f, space: FeSpace, t: float | None = None,
                quad: QuadratureRule | None = None) -> np.ndarray:
    """r_k = integral f(x, t) . psi_k dx by cell quadrature (all DOFs)."""
    rule = quad or tetrahedron_rule(SOURCE_DEGREE)
    mesh = space.mesh
    pts = feec.physical_points(mesh, rule.points)
    flat = pts.reshape(-1, 3)
    fv = f(flat) if t is None else f(flat, t)
    fv = np.asarray(fv, dtype=float)
    if space.kind is SpaceKind.GRAD:
        vals = fv.reshape(mesh.num_tets, rule.npoints)
        scale = mesh.volumes / rule.ref_measure
        basis, dofs = _cell_basis(space, rule.points)
        loc = np.einsum("q,tq,tqi->ti", rule.weights, vals, basis, optimize=True)
        loc *= scale[:, None]
        out = np.zeros(space.ndof)
        np.add.at(out, dofs, loc)
        return out
    vals = fv.reshape(mesh.num_tets, rule.npoints, 3)
    return _vector_against_basis(space, vals, rule)


def cross_form_vector(a: FieldVector, b: FieldVector,
                      test_space: FeSpace,
                      quad: QuadratureRule | None = None) -> np.ndarray:
    """r_k = integral (a x b) . psi_k dx for Nedelec test functions psi_k.

    Antisymmetry in (a, b) and orthogonality to a's own coefficients hold
    pointwise per quadrature node; this is the energy-cancellation mechanism.
    """
    if test_space.kind is not SpaceKind.CURL:
        raise ValueError("cross_form_vector expects a CURL test space")
    rule = quad or tetrahedron_rule(TRILINEAR_DEGREE)
    av = _eval_field(a, rule.points)
    bv = _eval_field(b, rule.points)
    return _vector_against_basis(test_space, np.cross(av, bv), rule)


def mixed_cross_form_vector(a: FieldVector, b: FieldVector,
                            test_space: FeSpace,
                            quad: QuadratureRule | None = None) -> np.ndarray:
    """r_k = integral (a x b) . (curl psi_k) dx, Nedelec tests psi_k.

    curl psi_k is cellwise constant for the lowest-order Nedelec basis.
    """
    if test_space.kind is not SpaceKind.CURL:
        raise ValueError("mixed_cross_form_vector expects a CURL test space")
    rule = quad or tetrahedron_rule(TRILINEAR_DEGREE)
    mesh = test_space.mesh
    av = _eval_field(a, rule.points)
    bv = _eval_field(b, rule.points)
    cross = np.cross(av, bv)  # (T, nq, 3)
    gl = mesh.grad_lambda
    from .mesh import LOCAL_EDGES

    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    curls = 2.0 * np.cross(gl[:, i, :], gl[:, j, :])  # (T, 6, 3)
    scale = mesh.volumes / rule.ref_measure
    loc = np.einsum("q,tqd,tid->ti", rule.weights, cross, curls, optimize=True)
    loc *= scale[:, None]
    out = np.zeros(test_space.ndof)
    np.add.at(out, mesh.tet_edges, loc)
    return out
