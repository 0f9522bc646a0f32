import numpy as np
import pytest

from mhdfem.mms import (
    ExactSolution,
    field_errors,
    run_convergence,
    run_single_mesh,
    validate_sources,
)
from mhdfem.timestepper import SimParams


EXACT = ExactSolution(re_inv=1e-4, rm_inv=1e-4, coupling=1.0)


def boundary_points(rng, m):
    # random points on each of the six faces of the unit cube
    p = rng.random((6 * m, 3))
    for k in range(6):
        p[k * m:(k + 1) * m, k % 3] = float(k // 3)
    return p


# ---------------------------------------------------------------------------
# Analytic structure of the manufactured fields
# ---------------------------------------------------------------------------

def test_boundary_conditions():
    rng = np.random.default_rng(0)
    p = boundary_points(rng, 40)
    for t in (0.0, 0.37, 1.0):
        u = EXACT.velocity(p, t)
        B = EXACT.magnetic(p, t)
        # h vanishes to second order on the boundary: full no-slip velocity
        assert np.abs(u).max() <= 1e-14
        assert np.abs(EXACT.pressure(p, t)).max() <= 1e-14
        # B has zero normal trace (tangential components need not vanish)
        for k in range(6):
            block = B[k * 40:(k + 1) * 40]
            assert np.abs(block[:, k % 3]).max() <= 1e-14


def test_magnetic_is_velocity_curl():
    rng = np.random.default_rng(1)
    p = rng.random((200, 3))
    t = 0.42
    B = EXACT.magnetic(p, t)
    J = EXACT.velocity_jacobian(p, t)
    curl = np.stack([J[:, 2, 1] - J[:, 1, 2],
                     J[:, 0, 2] - J[:, 2, 0],
                     J[:, 1, 0] - J[:, 0, 1]], axis=-1)
    assert np.abs(curl - B).max() <= 1e-12


def test_magnetic_field_is_solenoidal_velocity_is_not():
    rng = np.random.default_rng(2)
    p = rng.random((300, 3))
    t = 0.3
    JB = EXACT.magnetic_jacobian(p, t)
    divB = JB[:, 0, 0] + JB[:, 1, 1] + JB[:, 2, 2]
    assert np.abs(divB).max() <= 1e-12
    divu = EXACT.velocity_divergence(p, t)
    assert np.abs(divu).max() > 1e-3  # genuinely compressible test data


# ---------------------------------------------------------------------------
# Finite-difference oracle for the source terms
# ---------------------------------------------------------------------------

def test_sources_pass_fd_oracle():
    rep = validate_sources(EXACT, samples=150)
    assert rep.passed
    assert rep.max_momentum_residual <= 1e-6
    assert rep.max_induction_residual <= 1e-6
    assert rep.max_div_b <= 1e-6


def test_oracle_detects_wrong_source():
    class Broken(ExactSolution):
        def momentum_source(self, p, t):
            return super().momentum_source(p, t) + 1e-3
    rep = validate_sources(Broken(re_inv=1e-4, rm_inv=1e-4), samples=50)
    assert not rep.passed


def test_fd_residual_scales_with_step():
    # residual of the 6th-order stencil should fall steeply as delta shrinks
    r_coarse = validate_sources(EXACT, samples=40, delta_x=0.02,
                                threshold=np.inf).max_momentum_residual
    r_fine = validate_sources(EXACT, samples=40, delta_x=0.005,
                              threshold=np.inf).max_momentum_residual
    assert r_fine < r_coarse / 100.0


# ---------------------------------------------------------------------------
# Discretization error measurement
# ---------------------------------------------------------------------------

def test_errors_decrease_under_refinement():
    params = SimParams(n=2, dt=0.05, t_end=0.2, re_inv=1e-4, rm_inv=1e-4,
                       picard_tol=1e-8)
    errs = {}
    for n in (2, 4):
        p = SimParams(n=n, dt=params.dt, t_end=params.t_end,
                      re_inv=params.re_inv, rm_inv=params.rm_inv,
                      picard_tol=params.picard_tol)
        errs[n], _ = run_single_mesh(n, p, EXACT)
    for coarse, fine in zip(errs[2], errs[4]):
        assert fine < coarse


def test_error_table_orders():
    from mhdfem.mms import ErrorTable
    tab = ErrorTable(h=[0.25, 0.125], err_b_l2=[4e-3, 2e-3],
                     err_u_l2=[8e-4, 2e-4], err_p_h1=[4e-4, 1e-4])
    ob = tab.orders(tab.err_b_l2)
    assert np.isnan(ob[0]) and abs(ob[1] - 1.0) < 1e-12
    assert abs(tab.orders(tab.err_u_l2)[1] - 2.0) < 1e-12
    assert abs(tab.orders(tab.err_p_h1)[1] - 2.0) < 1e-12


def test_error_table_csv(tmp_path):
    from mhdfem.mms import ErrorTable
    tab = ErrorTable(h=[0.25], err_b_l2=[1e-3], err_u_l2=[1e-4],
                     err_p_h1=[1e-5])
    path = tmp_path / "conv.csv"
    tab.write_csv(path)
    text = path.read_text()
    assert text.splitlines()[0] == \
        "h,err_b_l2,order_b,err_u_l2,order_u,err_p_h1,order_p"
    assert len(text.splitlines()) == 2


def test_run_convergence_gates_on_oracle():
    class Broken(ExactSolution):
        def induction_source(self, p, t):
            return super().induction_source(p, t) + 1.0
    p = SimParams(n=2, dt=0.1, t_end=0.1, re_inv=1e-4, rm_inv=1e-4)
    with pytest.raises(RuntimeError):
        run_convergence((2,), p, exact=Broken(re_inv=1e-4, rm_inv=1e-4),
                        validate=True)
