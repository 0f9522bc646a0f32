"""Manufactured polynomial-in-space, linear-in-time exact solution.

The velocity is built from h(m) = (m^2 - m)^2 tensor products with
time-dependent amplitudes g1 = 4 - 2t, g2 = 1 + t, g3 = 1 - t; the magnetic
field is its curl, so the Gauss law and both boundary conditions hold
identically.  The exact velocity is *not* pointwise divergence-free, which
is why the divergence-constraint data g and a momentum/induction source
pair are fed to the solver.

All source formulas are hand-derived closed forms; `validate_sources`
checks them against a 6th-order finite-difference evaluation of the PDE
residual before any convergence run is trusted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .feec import (
    FieldVector,
    canonical_interpolate,
    eval_curl_field,
    eval_div_field,
    eval_grad_field,
    physical_points,
)
from .quadrature import tetrahedron_rule
from .timestepper import (
    MhdState,
    Operators,
    SimParams,
    Sources,
    initial_state,
    simulate,
)
from .mesh import build_structured_mesh

ERROR_QUAD_DEGREE = 5


def _h(m):
    return (m * m - m) ** 2


def _h1(m):
    return 2.0 * (m * m - m) * (2.0 * m - 1.0)


def _h2(m):
    return 12.0 * m * m - 12.0 * m + 2.0


def _h3(m):
    return 24.0 * m - 12.0


def _g(t):
    return 4.0 - 2.0 * t, 1.0 + t, 1.0 - t


@dataclass(frozen=True)
class ExactSolution:
    """Closed forms for u, B = omega = curl u, P = p + |u|^2/2 and sources."""

    re_inv: float = 1e-4
    rm_inv: float = 1e-4
    coupling: float = 1.0

    # -- primary fields -----------------------------------------------------

    def velocity(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        return np.stack([
            -g1 * _h1(x) * _h(y) * _h(z),
            -g2 * _h(x) * _h1(y) * _h(z),
            -g3 * _h(x) * _h(y) * _h1(z)], axis=-1)

    def magnetic(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        return np.stack([
            (g2 - g3) * _h(x) * _h1(y) * _h1(z),
            (g3 - g1) * _h1(x) * _h(y) * _h1(z),
            (g1 - g2) * _h1(x) * _h1(y) * _h(z)], axis=-1)

    vorticity = magnetic  # omega = curl u = B by construction

    def pressure(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        u = self.velocity(p, t)
        return _h(x) * _h(y) * _h(z) + 0.5 * np.sum(u * u, axis=-1)

    # -- derived fields (hand-derived closed forms) -------------------------

    def velocity_t(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        # dg1 = -2, dg2 = 1, dg3 = -1
        return np.stack([
            2.0 * _h1(x) * _h(y) * _h(z),
            -_h(x) * _h1(y) * _h(z),
            _h(x) * _h(y) * _h1(z)], axis=-1)

    def magnetic_t(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.stack([
            2.0 * _h(x) * _h1(y) * _h1(z),
            1.0 * _h1(x) * _h(y) * _h1(z),
            -3.0 * _h1(x) * _h1(y) * _h(z)], axis=-1)

    def velocity_jacobian(self, p, t):
        """J[i, j] = d u_i / d x_j, shape (..., 3, 3)."""
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        hx, hy, hz = _h(x), _h(y), _h(z)
        ax, ay, az = _h1(x), _h1(y), _h1(z)
        bx, by, bz = _h2(x), _h2(y), _h2(z)
        row1 = np.stack([-g1 * bx * hy * hz, -g1 * ax * ay * hz,
                         -g1 * ax * hy * az], axis=-1)
        row2 = np.stack([-g2 * ax * ay * hz, -g2 * hx * by * hz,
                         -g2 * hx * ay * az], axis=-1)
        row3 = np.stack([-g3 * ax * hy * az, -g3 * hx * ay * az,
                         -g3 * hx * hy * bz], axis=-1)
        return np.stack([row1, row2, row3], axis=-2)

    def magnetic_jacobian(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        a, b, c = g2 - g3, g3 - g1, g1 - g2
        hx, hy, hz = _h(x), _h(y), _h(z)
        ax, ay, az = _h1(x), _h1(y), _h1(z)
        bx, by, bz = _h2(x), _h2(y), _h2(z)
        row1 = np.stack([a * ax * ay * az, a * hx * by * az,
                         a * hx * ay * bz], axis=-1)
        row2 = np.stack([b * bx * hy * az, b * ax * ay * az,
                         b * ax * hy * bz], axis=-1)
        row3 = np.stack([c * bx * ay * hz, c * ax * by * hz,
                         c * ax * ay * az], axis=-1)
        return np.stack([row1, row2, row3], axis=-2)

    def velocity_divergence(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        return -(g1 * _h2(x) * _h(y) * _h(z) + g2 * _h(x) * _h2(y) * _h(z)
                 + g3 * _h(x) * _h(y) * _h2(z))

    def current(self, p, t):
        """curl B (= curl curl u)."""
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        a, b, c = g2 - g3, g3 - g1, g1 - g2
        hx, hy, hz = _h(x), _h(y), _h(z)
        ax, ay, az = _h1(x), _h1(y), _h1(z)
        bx, by, bz = _h2(x), _h2(y), _h2(z)
        return np.stack([
            c * ax * by * hz - b * ax * hy * bz,
            a * hx * ay * bz - c * bx * ay * hz,
            b * bx * hy * az - a * hx * by * az], axis=-1)

    def magnetic_laplacian(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        g1, g2, g3 = _g(t)
        a, b, c = g2 - g3, g3 - g1, g1 - g2
        hx, hy, hz = _h(x), _h(y), _h(z)
        ax, ay, az = _h1(x), _h1(y), _h1(z)
        bx, by, bz = _h2(x), _h2(y), _h2(z)
        cx, cy, cz = _h3(x), _h3(y), _h3(z)
        return np.stack([
            a * (bx * ay * az + hx * cy * az + hx * ay * cz),
            b * (cx * hy * az + ax * by * az + ax * hy * cz),
            c * (cx * ay * hz + ax * cy * hz + ax * ay * bz)], axis=-1)

    def pressure_gradient(self, p, t):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        grad_p = np.stack([
            _h1(x) * _h(y) * _h(z),
            _h(x) * _h1(y) * _h(z),
            _h(x) * _h(y) * _h1(z)], axis=-1)
        u = self.velocity(p, t)
        J = self.velocity_jacobian(p, t)
        # grad(|u|^2/2) = J^T u
        return grad_p + np.einsum("...ij,...i->...j", J, u)

    # -- sources ------------------------------------------------------------

    def momentum_source(self, p, t):
        """f = du/dt - u x omega + Re^{-1} curl curl u - c (curl B) x B + grad P."""
        u = self.velocity(p, t)
        B = self.magnetic(p, t)
        jc = self.current(p, t)
        f = self.velocity_t(p, t) - np.cross(u, B) + self.pressure_gradient(p, t)
        if self.re_inv:
            f = f + self.re_inv * jc
        if self.coupling:
            f = f - self.coupling * np.cross(jc, B)
        return f

    def induction_source(self, p, t):
        """G = dB/dt - Rm^{-1} Lap B - curl(u x B).

        curl(u x B) = -B div u + (B.grad)u - (u.grad)B for solenoidal B.
        """
        u = self.velocity(p, t)
        B = self.magnetic(p, t)
        Ju = self.velocity_jacobian(p, t)
        Jb = self.magnetic_jacobian(p, t)
        div_u = self.velocity_divergence(p, t)
        curl_uxB = (-B * div_u[..., None]
                    + np.einsum("...ij,...j->...i", Ju, B)
                    - np.einsum("...ij,...j->...i", Jb, u))
        out = self.magnetic_t(p, t) - curl_uxB
        if self.rm_inv:
            out = out - self.rm_inv * self.magnetic_laplacian(p, t)
        return out

    def sources(self) -> Sources:
        return Sources(momentum=self.momentum_source,
                       induction=self.induction_source,
                       velocity=self.velocity)


# ---------------------------------------------------------------------------
# Finite-difference validation oracle
# ---------------------------------------------------------------------------

_FD1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_OFF = np.arange(-3, 4)


def _fd_partial(fn, p, t, axis, delta):
    """6th-order central first partial along a coordinate axis."""
    acc = 0.0
    for c, k in zip(_FD1, _OFF):
        if c == 0.0:
            continue
        q = p.copy()
        q[..., axis] += k * delta
        acc = acc + c * fn(q, t)
    return acc / delta


def _fd_time(fn, p, t, delta):
    acc = 0.0
    for c, k in zip(_FD1, _OFF):
        if c == 0.0:
            continue
        acc = acc + c * fn(p, t + k * delta)
    return acc / delta


def _fd_curl(fn, p, t, delta):
    d = [_fd_partial(fn, p, t, ax, delta) for ax in range(3)]
    return np.stack([
        d[1][..., 2] - d[2][..., 1],
        d[2][..., 0] - d[0][..., 2],
        d[0][..., 1] - d[1][..., 0]], axis=-1)


@dataclass
class SourceValidationReport:
    max_momentum_residual: float
    max_induction_residual: float
    max_div_b: float
    samples: int
    threshold: float

    @property
    def passed(self) -> bool:
        return max(self.max_momentum_residual, self.max_induction_residual,
                   self.max_div_b) <= self.threshold


def validate_sources(exact: ExactSolution, samples: int = 200,
                     delta_x: float = 1e-3, delta_t: float = 1e-4,
                     threshold: float = 1e-6,
                     seed: int = 20240817) -> SourceValidationReport:
    """Check the closed-form sources against finite-difference PDE residuals.

    The momentum and induction equations are re-evaluated with all spatial
    and temporal derivatives replaced by 6th-order central differences of
    the primary closures; a disagreement flags a transcription error in the
    hand-derived formulas.
    """
    rng = np.random.default_rng(seed)
    # keep stencils inside the domain (the closures extend smoothly anyway,
    # but interior samples avoid any ambiguity)
    pts = rng.uniform(0.1, 0.9, size=(samples, 3))
    ts = rng.uniform(0.05, 0.95, size=samples)

    res_f = 0.0
    res_g = 0.0
    div_b = 0.0
    for i in range(samples):
        p = pts[i:i + 1]
        t = float(ts[i])
        u = exact.velocity(p, t)
        B = exact.magnetic(p, t)

        du_dt = _fd_time(exact.velocity, p, t, delta_t)
        omega = _fd_curl(exact.velocity, p, t, delta_x)
        curl_b = _fd_curl(exact.magnetic, p, t, delta_x)
        grad_P = np.stack([
            _fd_partial(exact.pressure, p, t, ax, delta_x)
            for ax in range(3)], axis=-1)

        f_fd = du_dt - np.cross(u, omega) + grad_P
        if exact.re_inv:
            f_fd = f_fd + exact.re_inv * _fd_curl(
                lambda q, s: _fd_curl(exact.velocity, q, s, delta_x),
                p, t, delta_x)
        if exact.coupling:
            f_fd = f_fd - exact.coupling * np.cross(curl_b, B)
        res_f = max(res_f, float(np.abs(
            f_fd - exact.momentum_source(p, t)).max()))

        dB_dt = _fd_time(exact.magnetic, p, t, delta_t)
        g_fd = dB_dt - _fd_curl(
            lambda q, s: np.cross(exact.velocity(q, s), exact.magnetic(q, s)),
            p, t, delta_x)
        if exact.rm_inv:
            g_fd = g_fd + exact.rm_inv * _fd_curl(
                lambda q, s: _fd_curl(exact.magnetic, q, s, delta_x),
                p, t, delta_x)
        res_g = max(res_g, float(np.abs(
            g_fd - exact.induction_source(p, t)).max()))

        d = sum(_fd_partial(exact.magnetic, p, t, ax, delta_x)[..., ax]
                for ax in range(3))
        div_b = max(div_b, float(np.abs(d).max()))

    return SourceValidationReport(res_f, res_g, div_b, samples, threshold)


# ---------------------------------------------------------------------------
# Error measurement and the convergence study
# ---------------------------------------------------------------------------

def field_errors(ops: Operators, state: MhdState, exact: ExactSolution,
                 t_pressure: float | None = None):
    """(L2 error of B, L2 error of u, H1 error of P) against the closures.

    B and u are compared at state.t; the total pressure lives on the
    staggered midpoint grid, so it is compared at t_pressure (defaulting to
    the last midpoint).
    """
    rule = tetrahedron_rule(ERROR_QUAD_DEGREE)
    mesh = ops.mesh
    pts = physical_points(mesh, rule.points)
    w = rule.weights / rule.ref_measure  # scale by cell volume below
    vols = mesh.volumes

    def l2_of(diff):
        cell = np.einsum("tqd,tqd,q->t", diff, diff, w)
        return float(np.sqrt(np.sum(cell * vols)))

    err_b = l2_of(eval_div_field(state.B, rule.points)
                  - exact.magnetic(pts, state.t))
    err_u = l2_of(eval_curl_field(state.u, rule.points)
                  - exact.velocity(pts, state.t))

    P_h = state.aux.get("P")
    if P_h is None:
        return err_b, err_u, float("nan")
    tp = t_pressure if t_pressure is not None else state.t
    dP = eval_grad_field(P_h, rule.points) - exact.pressure(pts, tp)
    l2_sq = float(np.sum(np.einsum("tq,tq,q->t", dP, dP, w) * vols))
    grad_h = np.einsum("tv,tvd->td", P_h.coeffs[mesh.tets], mesh.grad_lambda)
    dG = grad_h[:, None, :] - exact.pressure_gradient(pts, tp)
    h1_sq = float(np.sum(np.einsum("tqd,tqd,q->t", dG, dG, w) * vols))
    err_p = float(np.sqrt(l2_sq + h1_sq))
    return err_b, err_u, err_p


@dataclass
class ErrorTable:
    h: list
    err_b_l2: list
    err_u_l2: list
    err_p_h1: list

    def orders(self, errs):
        out = [float("nan")]
        for a, b in zip(errs[:-1], errs[1:]):
            out.append(float(np.log2(a / b)))
        return out

    def rows(self):
        ob = self.orders(self.err_b_l2)
        ou = self.orders(self.err_u_l2)
        op = self.orders(self.err_p_h1)
        return [(self.h[i], self.err_b_l2[i], ob[i], self.err_u_l2[i],
                 ou[i], self.err_p_h1[i], op[i]) for i in range(len(self.h))]

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("h,err_b_l2,order_b,err_u_l2,order_u,err_p_h1,order_p\n")
            for row in self.rows():
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _match_divergence_data(ops: Operators, u: FieldVector, exact: ExactSolution):
    """Add a discrete gradient so (u0, grad Q) equals the exact data at t=0.

    The divergence constraint is imposed at midpoints through
    2 g(t_mid) - (u^n, grad Q), so an initial mismatch epsilon never decays:
    it alternates sign each step and enters the pressure multiplier scaled
    by 1/dt.  Removing it from the interpolated start keeps the pressure
    error at the interpolation level.
    """
    load = assembly.load_vector(lambda p: exact.velocity(p, 0.0), ops.curl)
    rhs = (load - ops.M_curl @ u.coeffs) @ ops.G[:, ops.fg]
    if len(ops.fg) == 0 or np.linalg.norm(rhs) == 0.0:
        return u
    from . import linalg

    pc = linalg.make_preconditioner("ssor", ops.L_ff)
    phi, rep = linalg.cg(ops.L_ff, rhs, tol=1e-13, precond=pc)
    if not rep.converged:
        raise linalg.SolverFailure("initial divergence matching did not converge")
    full = np.zeros(ops.grad.ndof)
    full[ops.fg] = phi
    u.coeffs += ops.G @ full
    return u


def run_single_mesh(n: int, params: SimParams, exact: ExactSolution,
                    ops: Operators | None = None):
    """Run the manufactured problem on one mesh; return final-time errors."""
    if ops is None:
        ops = Operators(build_structured_mesh(n))
    src = exact.sources()
    state = initial_state(ops, params,
                          lambda p: exact.velocity(p, 0.0),
                          lambda p: exact.magnetic(p, 0.0))
    _match_divergence_data(ops, state.u, exact)
    final = None
    for final in simulate(ops, params, state, src):
        pass
    t_mid = final.t - 0.5 * params.dt
    return field_errors(ops, final, exact, t_pressure=t_mid), final


def run_convergence(ns, params_template: SimParams,
                    exact: ExactSolution | None = None,
                    validate: bool = True,
                    progress=None) -> ErrorTable:
    """Refinement study: solve on each mesh and tabulate errors and orders.

    The source-validation oracle always runs first; a failure aborts the
    study rather than producing errors from mistranscribed sources.
    """
    from dataclasses import replace

    exact = exact or ExactSolution(re_inv=params_template.re_inv,
                                   rm_inv=params_template.rm_inv,
                                   coupling=params_template.coupling)
    if validate:
        report = validate_sources(exact, samples=50)
        if not report.passed:
            raise RuntimeError(
                f"source validation failed: momentum {report.max_momentum_residual:.3e}, "
                f"induction {report.max_induction_residual:.3e}")
    hs, ebs, eus, eps_ = [], [], [], []
    for n in ns:
        params = replace(params_template, n=n)
        (eb, eu, ep), _ = run_single_mesh(n, params, exact)
        hs.append(1.0 / n)
        ebs.append(eb)
        eus.append(eu)
        eps_.append(ep)
        if progress is not None:
            progress(n, eb, eu, ep)
    return ErrorTable(hs, ebs, eus, eps_)
