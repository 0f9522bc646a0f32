"""Crank-Nicolson time stepping for the incompressible MHD system.

Two schemes are provided.  The main scheme evolves the velocity in the
Nedelec space and the magnetic field in the Raviart-Thomas space with
midpoint auxiliaries (vorticity, current, electric and magnetizing fields,
total pressure); it conserves energy, the magnetic Gauss law (exactly, as an
integer-matrix identity) and both helicities in the ideal limit.  The
reference scheme keeps the magnetic field in the Nedelec space with a
curl-curl weak form; it is the non-conservative comparison baseline.

The nonlinear midpoint system is solved by Picard (fixed-point) iteration
with all cross-product terms lagged, so the inner velocity-pressure system
stays symmetric and is solved by MINRES.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import assembly, linalg
from .feec import (
    FeSpace,
    FieldVector,
    SpaceKind,
    exterior_derivative_matrix,
    make_space,
    zero_field,
)
from .mesh import Mesh, build_structured_mesh


class StepFailure(RuntimeError):
    pass


@dataclass
class SimParams:
    n: int = 8
    dt: float = 1.0 / 200
    t_end: float = 1.0
    re_inv: float = 0.0       # 1/Re; 0 encodes the ideal (inviscid) limit
    rm_inv: float = 0.0       # 1/Rm; 0 encodes the ideal (resistive-free) limit
    coupling: float = 1.0     # c = V_A^2 / V^2
    picard_tol: float = 1e-10
    picard_max: int = 80
    krylov_tol: float = 1e-12
    mass_tol: float = 1e-13
    minres_maxit: int = 20000
    scheme: str = "main"      # 'main' | 'reference'

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.re_inv, self.rm_inv, self.coupling) < 0:
            raise ValueError("re_inv, rm_inv and coupling must be >= 0")
        if self.scheme not in ("main", "reference"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Sources:
    """Analytic source data; all optional (conservation runs use none)."""

    momentum: object = None     # f(points, t) -> (N, 3)
    induction: object = None    # G(points, t) -> (N, 3)
    velocity: object = None     # exact u(points, t), feeds the g constraint data


@dataclass
class PicardReport:
    sweeps: int
    converged: bool
    increment: float
    inner_iterations: int


@dataclass
class MhdState:
    u: FieldVector            # velocity at the time node (Nedelec)
    B: FieldVector            # magnetic field at the node (RT; Nedelec for the
                              # reference scheme)
    t: float
    step: int
    aux: dict = dc_field(default_factory=dict)  # midpoint omega/j/E/H/P
    picard: PicardReport | None = None


class Operators:
    """Cached discrete operators for one mesh (immutable after build)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.grad = make_space(mesh, SpaceKind.GRAD)
        self.curl = make_space(mesh, SpaceKind.CURL)
        self.div = make_space(mesh, SpaceKind.DIV)
        self.l2 = make_space(mesh, SpaceKind.L2)
        self.G = exterior_derivative_matrix(self.grad)
        self.C = exterior_derivative_matrix(self.curl)
        self.D = exterior_derivative_matrix(self.div)
        self.M_grad = assembly.mass_matrix(self.grad)
        self.M_curl = assembly.mass_matrix(self.curl)
        self.M_div = assembly.mass_matrix(self.div)
        self.M_cd = assembly.mixed_mass_curl_div(mesh)
        self.K_cc = (self.C.T @ self.M_div @ self.C).tocsr()
        self.L_p1 = (self.G.T @ self.M_curl @ self.G).tocsr()

        self.fc = self.curl.free_dofs
        self.fg = self.grad.free_dofs
        self.fd = self.div.free_dofs
        self.Mc_ff = self.M_curl[self.fc][:, self.fc].tocsr()
        self.Md_ff = self.M_div[self.fd][:, self.fd].tocsr()
        self.Mg_ff = self.M_grad[self.fg][:, self.fg].tocsr()
        self.K_ff = self.K_cc[self.fc][:, self.fc].tocsr()
        self.L_ff = self.L_p1[self.fg][:, self.fg].tocsr()
        self.MG_fp = (self.M_curl @ self.G)[self.fc][:, self.fg].tocsr()

        self._mass_pc = {
            "curl": linalg.make_preconditioner("jacobi", self.Mc_ff),
            "div": linalg.make_preconditioner("jacobi", self.Md_ff),
            "grad": linalg.make_preconditioner("jacobi", self.Mg_ff)
            if len(self.fg) else None,
        }
        self._saddle_cache: dict = {}
        self._bmag_cache: dict = {}
        self._potential_pc = None

    # -- mass solves on free DOFs ------------------------------------------

    def mass_solve(self, kind: str, rhs_free: np.ndarray, tol: float = 1e-13):
        M = {"curl": self.Mc_ff, "div": self.Md_ff, "grad": self.Mg_ff}[kind]
        x, rep = linalg.cg(M, rhs_free, tol=tol, precond=self._mass_pc[kind])
        if not rep.converged:
            raise linalg.SolverFailure(f"{kind} mass solve did not converge")
        return x, rep.iterations

    def curl_field_from_free(self, x_free: np.ndarray) -> FieldVector:
        out = zero_field(self.curl)
        out.coeffs[self.fc] = x_free
        return out

    # -- velocity-pressure saddle system -----------------------------------

    def saddle_system(self, alpha: float, nu: float):
        key = (alpha, nu)
        if key not in self._saddle_cache:
            Auu = (alpha * self.Mc_ff + nu * self.K_ff).tocsr() if nu != 0 \
                else (alpha * self.Mc_ff).tocsr()
            npq = len(self.fg)
            if npq:
                S = sp.bmat([[Auu, self.MG_fp],
                             [self.MG_fp.T, None]], format="csr")
            else:
                S = Auu
            dinv = 1.0 / linalg.lumped_diagonal(Auu)
            if npq:
                ssor = linalg.make_preconditioner("ssor", self.L_ff)
                pc = linalg.make_preconditioner(
                    "block_diag",
                    blocks=[(len(self.fc), lambda r, d=dinv: d * r),
                            (npq, lambda r, a=alpha, s=ssor: a * s(r))])
            else:
                pc = lambda r: dinv * r
            self._saddle_cache[key] = (S, pc)
        return self._saddle_cache[key]

    def bmag_system(self, alpha: float, nu: float):
        """(alpha M + nu K) on free curl DOFs for the reference B-update."""
        key = (alpha, nu)
        if key not in self._bmag_cache:
            A = (alpha * self.Mc_ff + nu * self.K_ff).tocsr()
            pc = linalg.make_preconditioner("jacobi", A)
            self._bmag_cache[key] = (A, pc)
        return self._bmag_cache[key]


def solve_velocity_pressure(ops: Operators, F_free: np.ndarray,
                            g_free: np.ndarray, alpha: float, nu: float = 0.0,
                            tol: float = 1e-10, maxit: int = 20000):
    """Solve the symmetric velocity-pressure saddle system by MINRES.

    alpha (1/dt) scales the velocity mass block, nu the curl-curl block;
    the returned fields carry zeros on the constrained boundary DOFs.
    """
    S, pc = ops.saddle_system(alpha, nu)
    npq = len(ops.fg)
    rhs = np.concatenate([F_free, g_free]) if npq else F_free
    x, rep = linalg.minres(S, rhs, tol=tol, maxit=maxit, precond=pc)
    if not rep.converged:
        raise linalg.SolverFailure(
            f"velocity-pressure MINRES stalled at {rep.relative_residual:.3e}")
    u = zero_field(ops.curl)
    u.coeffs[ops.fc] = x[: len(ops.fc)]
    P = zero_field(ops.grad)
    if npq:
        P.coeffs[ops.fg] = x[len(ops.fc):]
    return u, P, rep


def advance_magnetic(ops: Operators, B_n: np.ndarray, E: np.ndarray,
                     dt: float, source_proj: np.ndarray | None = None) -> np.ndarray:
    """B_{n+1} = B_n - dt curl E (+ dt projected induction source).

    Without a source this preserves D @ B exactly: D C = 0 in integers.
    """
    out = B_n - dt * (ops.C @ E)
    if source_proj is not None:
        out = out + dt * source_proj
    return out


def _m_norm(M, d: np.ndarray) -> float:
    return float(np.sqrt(max(d @ (M @ d), 0.0)))


def _constraint_data(ops: Operators, sources: Sources, t_mid: float) -> np.ndarray:
    if sources.velocity is None:
        return np.zeros(len(ops.fg))
    load = assembly.load_vector(sources.velocity, ops.curl, t_mid)
    return (ops.G.T @ load)[ops.fg]


def step_main(ops: Operators, state: MhdState, params: SimParams,
              sources: Sources | None = None) -> MhdState:
    """One Crank-Nicolson step of the conservative scheme with Picard."""
    sources = sources or Sources()
    dt = params.dt
    t_mid = state.t + 0.5 * dt
    u_n = state.u.coeffs
    B_n = state.B.coeffs
    cpl = params.coupling

    f_load = None
    if sources.momentum is not None:
        f_load = assembly.load_vector(sources.momentum, ops.curl, t_mid)[ops.fc]
    g_data = _constraint_data(ops, sources, t_mid)
    src_proj = None
    inner_total = 0
    if sources.induction is not None:
        rhs = assembly.load_vector(sources.induction, ops.div, t_mid)
        xf, it = ops.mass_solve("div", rhs[ops.fd], tol=params.mass_tol)
        inner_total += it
        src_proj = np.zeros(ops.div.ndof)
        src_proj[ops.fd] = xf

    Mc_un = ops.M_curl @ u_n
    K_un = ops.K_cc @ u_n if params.re_inv else None
    g_row = 2.0 * g_data - (ops.G.T @ Mc_un)[ops.fg]

    u_new = u_n.copy()
    B_new = B_n.copy()
    scale = max(_m_norm(ops.M_curl, u_n) + _m_norm(ops.M_div, B_n), 1.0)
    H = j = om = E = None
    P = zero_field(ops.grad)
    converged = False
    increment = np.inf
    sweeps = 0

    for sweep in range(1, params.picard_max + 1):
        sweeps = sweep
        u_mid = 0.5 * (u_new + u_n)
        B_mid = 0.5 * (B_new + B_n)
        u_mid_f = FieldVector(ops.curl, u_mid)

        hx, it1 = ops.mass_solve("curl", (ops.M_cd @ B_mid)[ops.fc],
                                 tol=params.mass_tol)
        jx, it2 = ops.mass_solve("curl", (ops.C.T @ (ops.M_div @ B_mid))[ops.fc],
                                 tol=params.mass_tol)
        ox, it3 = ops.mass_solve("curl", (ops.M_cd @ (ops.C @ u_mid))[ops.fc],
                                 tol=params.mass_tol)
        inner_total += it1 + it2 + it3
        H = ops.curl_field_from_free(hx)
        j = ops.curl_field_from_free(jx)
        om = ops.curl_field_from_free(ox)

        F = (1.0 / dt) * Mc_un
        if K_un is not None:
            F = F - 0.5 * params.re_inv * K_un
        F = F + assembly.cross_form_vector(u_mid_f, om, ops.curl)
        if cpl:
            F = F + cpl * assembly.cross_form_vector(j, H, ops.curl)
        F = F[ops.fc]
        if f_load is not None:
            F = F + f_load

        u_next, P, rep = solve_velocity_pressure(
            ops, F, g_row, alpha=1.0 / dt, nu=0.5 * params.re_inv,
            tol=params.krylov_tol, maxit=params.minres_maxit)
        inner_total += rep.iterations

        u_mid2 = FieldVector(ops.curl, 0.5 * (u_next.coeffs + u_n))
        ex_rhs = assembly.cross_form_vector(u_mid2, H, ops.curl)[ops.fc]
        qx, it4 = ops.mass_solve("curl", ex_rhs, tol=params.mass_tol)
        inner_total += it4
        E = ops.curl_field_from_free(params.rm_inv * j.coeffs[ops.fc] - qx)
        B_next = advance_magnetic(ops, B_n, E.coeffs, dt, src_proj)

        du = _m_norm(ops.M_curl, u_next.coeffs - u_new)
        dB = _m_norm(ops.M_div, B_next - B_new)
        increment = (du + dB) / dt
        u_new = u_next.coeffs
        B_new = B_next
        if increment < params.picard_tol * scale:
            converged = True
            break

    if not converged:
        raise StepFailure(
            f"Picard did not converge in {params.picard_max} sweeps "
            f"(increment {increment:.3e}, step {state.step})")

    u_out = FieldVector(ops.curl, u_new)
    B_out = FieldVector(ops.div, B_new)
    return MhdState(
        u=u_out, B=B_out, t=state.t + dt, step=state.step + 1,
        aux={"omega": om, "j": j, "E": E, "H": H, "P": P},
        picard=PicardReport(sweeps, True, increment, inner_total),
    )


def step_reference(ops: Operators, state: MhdState, params: SimParams,
                   sources: Sources | None = None) -> MhdState:
    """One step of the non-conservative baseline (magnetic field in Nedelec)."""
    sources = sources or Sources()
    dt = params.dt
    u_n = state.u.coeffs
    B_n = state.B.coeffs
    cpl = params.coupling
    t_mid = state.t + 0.5 * dt

    f_load = None
    if sources.momentum is not None:
        f_load = assembly.load_vector(sources.momentum, ops.curl, t_mid)[ops.fc]
    g_data = _constraint_data(ops, sources, t_mid)

    Mc_un = ops.M_curl @ u_n
    K_un = ops.K_cc @ u_n if params.re_inv else None
    Mc_Bn = ops.M_curl @ B_n
    K_Bn = ops.K_cc @ B_n
    g_row = 2.0 * g_data - (ops.G.T @ Mc_un)[ops.fg]

    u_new = u_n.copy()
    B_new = B_n.copy()
    scale = max(_m_norm(ops.M_curl, u_n) + _m_norm(ops.M_curl, B_n), 1.0)
    inner_total = 0
    om = None
    P = zero_field(ops.grad)
    converged = False
    increment = np.inf
    sweeps = 0

    A_b, pc_b = ops.bmag_system(1.0 / dt, 0.5 * params.rm_inv)

    for sweep in range(1, params.picard_max + 1):
        sweeps = sweep
        u_mid = 0.5 * (u_new + u_n)
        B_mid = 0.5 * (B_new + B_n)
        u_mid_f = FieldVector(ops.curl, u_mid)
        B_mid_f = FieldVector(ops.curl, B_mid)

        ox, it = ops.mass_solve("curl", (ops.M_cd @ (ops.C @ u_mid))[ops.fc],
                                tol=params.mass_tol)
        inner_total += it
        om = ops.curl_field_from_free(ox)

        F = (1.0 / dt) * Mc_un
        if K_un is not None:
            F = F - 0.5 * params.re_inv * K_un
        F = F + assembly.cross_form_vector(u_mid_f, om, ops.curl)
        if cpl:
            curlB = FieldVector(ops.div, ops.C @ B_mid)
            F = F + cpl * assembly.cross_form_vector(curlB, B_mid_f, ops.curl)
        F = F[ops.fc]
        if f_load is not None:
            F = F + f_load

        u_next, P, rep = solve_velocity_pressure(
            ops, F, g_row, alpha=1.0 / dt, nu=0.5 * params.re_inv,
            tol=params.krylov_tol, maxit=params.minres_maxit)
        inner_total += rep.iterations

        u_mid2 = FieldVector(ops.curl, 0.5 * (u_next.coeffs + u_n))
        rhs = (1.0 / dt) * Mc_Bn - 0.5 * params.rm_inv * K_Bn
        rhs = rhs[ops.fc] + assembly.mixed_cross_form_vector(
            u_mid2, B_mid_f, ops.curl)[ops.fc]
        bx, repb = linalg.cg(A_b, rhs, tol=params.krylov_tol, precond=pc_b)
        if not repb.converged:
            raise linalg.SolverFailure("reference magnetic solve stalled")
        inner_total += repb.iterations
        B_next = np.zeros(ops.curl.ndof)
        B_next[ops.fc] = bx

        du = _m_norm(ops.M_curl, u_next.coeffs - u_new)
        dB = _m_norm(ops.M_curl, B_next - B_new)
        increment = (du + dB) / dt
        u_new = u_next.coeffs
        B_new = B_next
        if increment < params.picard_tol * scale:
            converged = True
            break

    if not converged:
        raise StepFailure(
            f"Picard (reference) did not converge in {params.picard_max} "
            f"sweeps (increment {increment:.3e}, step {state.step})")

    return MhdState(
        u=FieldVector(ops.curl, u_new),
        B=FieldVector(ops.curl, B_new),
        t=state.t + dt, step=state.step + 1,
        aux={"omega": om, "P": P},
        picard=PicardReport(sweeps, True, increment, inner_total),
    )


def initial_state(ops: Operators, params: SimParams, u0, B0) -> MhdState:
    """Canonically interpolate analytic initial data into the scheme spaces."""
    from .feec import canonical_interpolate

    u = canonical_interpolate(u0, ops.curl)
    b_space = ops.div if params.scheme == "main" else ops.curl
    B = canonical_interpolate(B0, b_space)
    return MhdState(u=u, B=B, t=0.0, step=0)


def simulate(ops: Operators, params: SimParams, state0: MhdState,
             sources: Sources | None = None):
    """Yield states from step 0 through t_end (step 0 is the initial state)."""
    stepper = step_main if params.scheme == "main" else step_reference
    state = state0
    yield state
    for _ in range(params.num_steps):
        state = stepper(ops, state, params, sources)
        yield state
