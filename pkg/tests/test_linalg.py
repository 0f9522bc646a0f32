import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdfem import assembly, linalg
from mhdfem.feec import SpaceKind, make_space
from mhdfem.mesh import build_structured_mesh


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------

def test_cg_identity_one_iteration():
    b = np.array([3.0, -1.0, 2.0])
    x, rep = linalg.cg(sp.eye(3, format="csr"), b)
    assert rep.converged and rep.iterations == 1
    assert np.abs(x - b).max() < 1e-14


def test_cg_small_spd_exact():
    A = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x, rep = linalg.cg(A, np.array([1.0, 2.0]))
    assert rep.converged
    assert np.abs(x - [1.0 / 11.0, 7.0 / 11.0]).max() < 1e-13


def test_cg_zero_rhs():
    A = sp.eye(5, format="csr")
    x, rep = linalg.cg(A, np.zeros(5))
    assert rep.converged and rep.iterations == 0
    assert np.all(x == 0.0)


def test_cg_deterministic(ops2):
    rng = np.random.default_rng(0)
    M = ops2.Mc_ff
    b = rng.standard_normal(M.shape[0])
    x1, _ = linalg.cg(M, b, tol=1e-13)
    x2, _ = linalg.cg(M, b, tol=1e-13)
    assert np.array_equal(x1, x2)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=20)
def test_cg_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((6, 6))
    A = sp.csr_matrix(R.T @ R + 6 * np.eye(6))
    b = rng.standard_normal(6)
    x, rep = linalg.cg(A, b, tol=1e-14)
    assert rep.converged
    want = np.linalg.solve(A.toarray(), b)
    assert np.abs(x - want).max() < 1e-10 * max(1.0, np.abs(want).max())


# ---------------------------------------------------------------------------
# MINRES
# ---------------------------------------------------------------------------

def test_minres_indefinite_diagonal():
    A = sp.diags([1.0, -1.0]).tocsr()
    x, rep = linalg.minres(A, np.array([2.0, 3.0]), tol=1e-12)
    assert rep.converged
    assert np.abs(x - [2.0, -3.0]).max() < 1e-10


def test_minres_zero_rhs():
    x, rep = linalg.minres(sp.eye(4, format="csr"), np.zeros(4))
    assert rep.converged and np.all(x == 0.0)


def test_minres_residual_estimates_monotone(ops2):
    rng = np.random.default_rng(1)
    S, pc = ops2.saddle_system(alpha=1.0, nu=0.0)
    b = rng.standard_normal(S.shape[0])
    x, rep = linalg.minres(S, b, tol=1e-10, precond=pc)
    assert rep.converged
    assert all(r2 <= r1 + 1e-14 for r1, r2 in
               zip(rep.residuals, rep.residuals[1:]))


def test_minres_saddle_zero_data(ops2):
    S, pc = ops2.saddle_system(alpha=1.0, nu=0.0)
    x, rep = linalg.minres(S, np.zeros(S.shape[0]), precond=pc)
    assert rep.converged and np.all(x == 0.0)


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

def test_gmres_antisymmetric_permutation():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    x, rep = linalg.gmres(A, np.array([1.0, 2.0]), tol=1e-12)
    assert rep.converged
    assert np.abs(x - [2.0, 1.0]).max() < 1e-10


def test_gmres_zero_rhs_on_singular_system(ops2):
    x, rep = linalg.gmres(ops2.K_ff, np.zeros(ops2.K_ff.shape[0]))
    assert rep.converged and np.all(x == 0.0)


def test_gmres_consistent_singular_curl_curl(ops2):
    # K = C^T M C is singular (gradients in the kernel) but the RHS built
    # from any exactly divergence-free field is consistent
    rng = np.random.default_rng(2)
    w = np.zeros(ops2.curl.ndof)
    w[ops2.fc] = rng.standard_normal(len(ops2.fc))
    B = ops2.C @ w
    rhs = (ops2.C.T @ (ops2.M_div @ B))[ops2.fc]
    x, rep = linalg.gmres(ops2.K_ff, rhs, tol=1e-11, maxit=5000)
    assert rep.converged
    res = np.linalg.norm(ops2.K_ff @ x - rhs) / np.linalg.norm(rhs)
    assert res <= 1e-10


def test_gmres_rhs_consistency_identity(ops2):
    # for a gradient test field the curl-curl RHS row vanishes identically
    rng = np.random.default_rng(3)
    w = np.zeros(ops2.curl.ndof)
    w[ops2.fc] = rng.standard_normal(len(ops2.fc))
    B = ops2.C @ w
    rhs_full = ops2.C.T @ (ops2.M_div @ B)
    phi = np.zeros(ops2.grad.ndof)
    phi[ops2.fg] = rng.standard_normal(len(ops2.fg))
    assert abs((ops2.G @ phi) @ rhs_full) <= 1e-12 * np.linalg.norm(rhs_full)


# ---------------------------------------------------------------------------
# Preconditioners
# ---------------------------------------------------------------------------

def test_identity_preconditioner_noop():
    pc = linalg.make_preconditioner("identity")
    r = np.array([1.0, 2.0])
    assert np.array_equal(pc(r), r)


def test_jacobi_rejects_zero_diagonal():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        linalg.make_preconditioner("jacobi", A)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        linalg.make_preconditioner("amg")


def test_jacobi_reduces_cg_iterations():
    sc = make_space(build_structured_mesh(4), SpaceKind.CURL)
    M = assembly.mass_matrix(sc)
    Mff = M[sc.free_dofs][:, sc.free_dofs].tocsr()
    rng = np.random.default_rng(4)
    b = rng.standard_normal(Mff.shape[0])
    _, plain = linalg.cg(Mff, b, tol=1e-12)
    _, jac = linalg.cg(Mff, b, tol=1e-12,
                       precond=linalg.make_preconditioner("jacobi", Mff))
    assert jac.converged and plain.converged
    assert jac.iterations <= plain.iterations


def test_ssor_application_is_symmetric(ops2):
    pc = linalg.make_preconditioner("ssor", ops2.L_ff)
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = rng.standard_normal(ops2.L_ff.shape[0])
        b = rng.standard_normal(ops2.L_ff.shape[0])
        assert abs(a @ pc(b) - b @ pc(a)) <= 1e-12 * (
            np.linalg.norm(a) * np.linalg.norm(b))


def test_block_diag_applies_blockwise():
    pc = linalg.make_preconditioner(
        "block_diag", blocks=[(2, lambda r: 2.0 * r), (3, lambda r: -r)])
    r = np.arange(5.0)
    assert np.array_equal(pc(r), [0.0, 2.0, -2.0, -3.0, -4.0])


def test_lumped_diagonal_positive(ops2):
    d = linalg.lumped_diagonal(ops2.Mc_ff)
    assert np.all(d > 0)


def test_solver_report_converged_implies_tolerance(ops2):
    rng = np.random.default_rng(6)
    b = rng.standard_normal(ops2.Mc_ff.shape[0])
    for tol in (1e-8, 1e-12):
        _, rep = linalg.cg(ops2.Mc_ff, b, tol=tol)
        assert rep.converged and rep.relative_residual <= tol
