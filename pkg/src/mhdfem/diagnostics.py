"""Conserved-quantity diagnostics: energy, helicities, Gauss-law norms.

Magnetic helicity needs a vector potential; we recover one from the
(singular but consistent) curl-curl system and rely on gauge invariance:
for an exactly divergence-free field with vanishing normal trace, adding
any discrete gradient to the potential leaves the helicity unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .feec import FieldVector, SpaceKind, zero_field
from .timestepper import MhdState, Operators, SimParams, Sources
from . import assembly

DIVFREE_ASSERT_TOL = 1e-9


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    energy: float
    helicity_magnetic: float
    helicity_cross: float
    div_B_L2: float
    div_B_max: float
    energy_identity_residual: float
    hm_identity_residual: float
    hc_identity_residual: float
    picard_iters: int
    inner_iters: int

    def as_row(self):
        return (self.step, self.time, self.energy, self.helicity_magnetic,
                self.helicity_cross, self.div_B_L2, self.div_B_max,
                self.energy_identity_residual, self.hm_identity_residual,
                self.hc_identity_residual, self.picard_iters, self.inner_iters)


def total_energy(ops: Operators, u: FieldVector, B: FieldVector,
                 coupling: float) -> float:
    """1/2 ||u||^2 + 1/2 c ||B||^2 (exact mass-matrix quadrature)."""
    M_b = ops.M_div if B.space.kind is SpaceKind.DIV else ops.M_curl
    return 0.5 * float(u.coeffs @ (ops.M_curl @ u.coeffs)) \
        + 0.5 * coupling * float(B.coeffs @ (M_b @ B.coeffs))


def div_norms(ops: Operators, B: FieldVector) -> tuple[float, float]:
    """(L2, max) norms of the piecewise-constant divergence of an RT field."""
    vols = ops.mesh.volumes
    div_cell = (ops.D @ B.coeffs) / vols
    l2 = float(np.sqrt(np.sum(div_cell ** 2 * vols)))
    return l2, float(np.abs(div_cell).max()) if len(div_cell) else 0.0


def magnetic_helicity(ops: Operators, B: FieldVector, tol: float = 1e-11,
                      return_potential: bool = False):
    """Helicity of a divergence-free RT field, via a curl-curl potential.

    Solves (curl A, curl C) = (B, curl C) over the free edge DOFs.  The
    system is singular (gradients are in the kernel) but consistent for
    divergence-free data, so GMRES from a zero guess picks some potential;
    gauge invariance makes the returned value well defined.
    """
    if B.space.kind is not SpaceKind.DIV:
        raise ValueError("magnetic_helicity expects a DIV-space field")
    _, dmax = div_norms(ops, B)
    if dmax > DIVFREE_ASSERT_TOL:
        raise ValueError(
            f"field is not divergence-free (max cell divergence {dmax:.3e})")
    rhs = (ops.C.T @ (ops.M_div @ B.coeffs))[ops.fc]
    if np.linalg.norm(rhs) == 0.0:
        A = zero_field(ops.curl)
        return (0.0, A) if return_potential else 0.0
    pc = _potential_preconditioner(ops)
    x, rep = linalg.gmres(ops.K_ff, rhs, tol=tol, precond=pc, maxit=20000)
    if not rep.converged:
        raise linalg.SolverFailure(
            f"potential GMRES stalled at {rep.relative_residual:.3e}")
    A = ops.curl_field_from_free(x)
    hm = float(A.coeffs @ (ops.M_cd @ B.coeffs))
    return (hm, A) if return_potential else hm


def _potential_preconditioner(ops: Operators):
    pc = getattr(ops, "_potential_pc", None)
    if pc is None:
        # shift regularizes the singular curl-curl operator for SSOR only;
        # the Krylov iteration itself uses the unshifted matrix
        shifted = (ops.K_ff + 1e-2 * sp.diags(
            linalg.lumped_diagonal(ops.Mc_ff))).tocsr()
        pc = linalg.make_preconditioner("ssor", shifted)
        ops._potential_pc = pc
    return pc


def cross_helicity(ops: Operators, u: FieldVector, B: FieldVector) -> float:
    """Integral of u . B by exact quadrature."""
    if B.space.kind is SpaceKind.DIV:
        return float(u.coeffs @ (ops.M_cd @ B.coeffs))
    return float(u.coeffs @ (ops.M_curl @ B.coeffs))


def divfree_project(ops: Operators, B: FieldVector, tol: float = 1e-12) -> FieldVector:
    """Closest RT field (L2) with exactly zero discrete divergence.

    Mixed saddle system with a piecewise-constant multiplier; one multiplier
    DOF is pinned to remove the constant nullspace (its value is immaterial
    to the projected field).
    """
    sys = getattr(ops, "_divfree_sys", None)
    if sys is None:
        D_f = ops.D[:, ops.fd].tocsr()[1:, :]  # drop cell 0 multiplier row
        S = sp.bmat([[ops.Md_ff, D_f.T], [D_f, None]], format="csr")
        dinv = 1.0 / linalg.lumped_diagonal(ops.Md_ff)
        vinv = 1.0 / ops.mesh.volumes[1:]
        nf = len(ops.fd)
        pc = linalg.make_preconditioner(
            "block_diag",
            blocks=[(nf, lambda r, d=dinv: d * r),
                    (len(vinv), lambda r, v=vinv: v * r)])
        sys = (S, pc, nf)
        ops._divfree_sys = sys
    S, pc, nf = sys
    if B.space.kind is SpaceKind.DIV:
        rhs_u = (ops.M_div @ B.coeffs)[ops.fd]
    else:
        rhs_u = (ops.M_cd.T @ B.coeffs)[ops.fd]
    rhs = np.concatenate([rhs_u, np.zeros(S.shape[0] - nf)])
    x, rep = linalg.minres(S, rhs, tol=tol, maxit=50000, precond=pc)
    if not rep.converged:
        raise linalg.SolverFailure(
            f"div-free projection MINRES stalled at {rep.relative_residual:.3e}")
    out = zero_field(ops.div)
    out.coeffs[ops.fd] = x[:nf]
    return out


def helicity_energy_bound(ops: Operators, B: FieldVector):
    """(H_m, ||B||^2, ratio) for monitoring the helicity-energy inequality."""
    hm = magnetic_helicity(ops, B)
    b2 = float(B.coeffs @ (ops.M_div @ B.coeffs))
    ratio = hm / b2 if b2 > 0 else 0.0
    return hm, b2, ratio


# ---------------------------------------------------------------------------
# Per-step identity residuals
# ---------------------------------------------------------------------------

def _midpoint_aux(ops: Operators, state_n: MhdState, state_np1: MhdState):
    """Midpoint H, j, omega; reuse the converged step auxiliaries if present."""
    aux = state_np1.aux
    if aux and all(k in aux for k in ("H", "j")):
        return aux["H"], aux["j"]
    B_mid = 0.5 * (state_n.B.coeffs + state_np1.B.coeffs)
    hx, _ = ops.mass_solve("curl", (ops.M_cd @ B_mid)[ops.fc])
    jx, _ = ops.mass_solve("curl", (ops.C.T @ (ops.M_div @ B_mid))[ops.fc])
    return ops.curl_field_from_free(hx), ops.curl_field_from_free(jx)


def energy_identity_residual(ops: Operators, state_n: MhdState,
                             state_np1: MhdState, params: SimParams,
                             sources: Sources | None = None) -> float:
    """Imbalance of the discrete energy law over one accepted step.

    (D_t u, u-bar) + c (D_t B, B-bar) + Re^{-1} ||curl u-bar||^2
    + c Rm^{-1} ||j||^2 - (f, u-bar) should vanish at the converged
    midpoint solution.
    """
    dt = state_np1.t - state_n.t
    c = params.coupling
    u_mid = 0.5 * (state_n.u.coeffs + state_np1.u.coeffs)
    B_mid = 0.5 * (state_n.B.coeffs + state_np1.B.coeffs)
    du = (state_np1.u.coeffs - state_n.u.coeffs) / dt
    dB = (state_np1.B.coeffs - state_n.B.coeffs) / dt
    lhs = float(du @ (ops.M_curl @ u_mid)) + c * float(dB @ (ops.M_div @ B_mid))
    cu = ops.C @ u_mid
    if params.re_inv:
        lhs += params.re_inv * float(cu @ (ops.M_div @ cu))
    if params.rm_inv:
        _, j = _midpoint_aux(ops, state_n, state_np1)
        lhs += c * params.rm_inv * float(j.coeffs @ (ops.M_curl @ j.coeffs))
    if sources is not None and sources.momentum is not None:
        t_mid = 0.5 * (state_n.t + state_np1.t)
        load = assembly.load_vector(sources.momentum, ops.curl, t_mid)
        lhs -= float(load @ u_mid)
    return abs(lhs)


def helicity_identity_residuals(ops: Operators, state_n: MhdState,
                                state_np1: MhdState, params: SimParams,
                                sources: Sources | None = None,
                                hm_n: float | None = None,
                                hm_np1: float | None = None):
    """(r_m, r_c): departures from the discrete helicity balance laws.

    r_m compares D_t of the magnetic helicity against Rm^{-1} (H, j);
    r_c compares D_t of the cross helicity against
    -Re^{-1}(curl u-bar, curl H) - Rm^{-1}(curl u-bar, j) + (f, H),
    all evaluated at the step midpoint.
    """
    dt = state_np1.t - state_n.t
    H, j = _midpoint_aux(ops, state_n, state_np1)
    if hm_n is None:
        hm_n = magnetic_helicity(ops, state_n.B)
    if hm_np1 is None:
        hm_np1 = magnetic_helicity(ops, state_np1.B)
    rhs_m = params.rm_inv * float(H.coeffs @ (ops.M_curl @ j.coeffs))
    r_m = abs((hm_np1 - hm_n) / dt - rhs_m)

    hc_n = cross_helicity(ops, state_n.u, state_n.B)
    hc_np1 = cross_helicity(ops, state_np1.u, state_np1.B)
    u_mid = 0.5 * (state_n.u.coeffs + state_np1.u.coeffs)
    cu = ops.C @ u_mid
    rhs_c = 0.0
    if params.re_inv:
        cH = ops.C @ H.coeffs
        rhs_c -= params.re_inv * float(cu @ (ops.M_div @ cH))
    if params.rm_inv:
        jx = ops.mass_solve("curl", (ops.M_cd @ cu)[ops.fc])[0]
        om = ops.curl_field_from_free(jx)
        rhs_c -= params.rm_inv * float(om.coeffs @ (ops.M_curl @ j.coeffs))
    if sources is not None and sources.momentum is not None:
        t_mid = 0.5 * (state_n.t + state_np1.t)
        load = assembly.load_vector(sources.momentum, ops.curl, t_mid)
        rhs_c += float(load @ H.coeffs)
    r_c = abs((hc_np1 - hc_n) / dt - rhs_c)
    return r_m, r_c


def compute_record(ops: Operators, state: MhdState, params: SimParams,
                   prev_state: MhdState | None = None,
                   sources: Sources | None = None,
                   prev_hm: float | None = None,
                   with_helicity: bool = True):
    """Full diagnostics row for one state; residuals need the previous state.

    Returns (record, hm) so callers can chain hm into the next step without
    re-solving for the potential.
    """
    if state.B.space.kind is SpaceKind.DIV:
        B_div = state.B
    else:
        B_div = divfree_project(ops, state.B)
    dl2, dmax = div_norms(ops, B_div)
    hm = magnetic_helicity(ops, B_div) if with_helicity else 0.0
    hc = cross_helicity(ops, state.u, state.B)
    energy = total_energy(ops, state.u, state.B, params.coupling)
    r_e = r_m = r_c = 0.0
    if prev_state is not None and state.B.space.kind is SpaceKind.DIV:
        r_e = energy_identity_residual(ops, prev_state, state, params, sources)
        if with_helicity:
            r_m, r_c = helicity_identity_residuals(
                ops, prev_state, state, params, sources,
                hm_n=prev_hm, hm_np1=hm)
    pic = state.picard
    rec = DiagnosticsRecord(
        step=state.step, time=state.t, energy=energy,
        helicity_magnetic=hm, helicity_cross=hc,
        div_B_L2=dl2, div_B_max=dmax,
        energy_identity_residual=r_e, hm_identity_residual=r_m,
        hc_identity_residual=r_c,
        picard_iters=pic.sweeps if pic else 0,
        inner_iters=pic.inner_iterations if pic else 0)
    return rec, hm
