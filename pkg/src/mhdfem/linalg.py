"""Hand-rolled Krylov solvers (CG, MINRES, GMRES) and simple preconditioners.

All solvers are deterministic: identical inputs give bitwise-identical
iterates in single-threaded mode.  Preconditioners are symmetric positive
definite (identity, Jacobi, SSOR, block-diagonal), standing in for the
AMG/ILU setups that are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverFailure(RuntimeError):
    pass


@dataclass
class SolverReport:
    iterations: int
    relative_residual: float
    converged: bool
    breakdown: bool = False
    residuals: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Preconditioners: callables applying P^{-1}
# ---------------------------------------------------------------------------

def _identity(r):
    return r


def make_preconditioner(kind: str, A=None, blocks=None):
    """Build a symmetric positive definite preconditioner application.

    kind: 'identity' | 'jacobi' | 'ssor' | 'block_diag'.
    'block_diag' takes blocks = [(size, apply), ...] in order.
    """
    if kind == "identity":
        return _identity
    if kind == "jacobi":
        d = np.asarray(A.diagonal())
        if np.any(d == 0):
            raise ValueError("jacobi preconditioner needs a nonzero diagonal")
        dinv = 1.0 / d
        return lambda r: dinv * r
    if kind == "ssor":
        d = np.asarray(A.diagonal())
        if np.any(d == 0):
            raise ValueError("ssor preconditioner needs a nonzero diagonal")
        A = sp.csr_matrix(A)
        lower = sp.tril(A, format="csr")          # D + L
        upper = sp.triu(A, format="csr")          # D + U

        def apply(r):
            z = spla.spsolve_triangular(lower, r, lower=True)
            z *= d
            return spla.spsolve_triangular(upper, z, lower=False)

        return apply
    if kind == "block_diag":
        if not blocks:
            raise ValueError("block_diag needs blocks=[(size, apply), ...]")
        sizes = [s for s, _ in blocks]
        offsets = np.concatenate([[0], np.cumsum(sizes)])

        def apply(r):
            out = np.empty_like(r)
            for (s, ap), lo, hi in zip(blocks, offsets[:-1], offsets[1:]):
                out[lo:hi] = ap(r[lo:hi])
            return out

        return apply
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def lumped_diagonal(M) -> np.ndarray:
    """Row-sum mass lumping (positive for the FEEC mass matrices here)."""
    d = np.asarray(abs(M).sum(axis=1)).ravel()
    return d


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def _as_matvec(A):
    if callable(A):
        return A
    return lambda x: A @ x


def cg(A, b, tol=1e-13, maxit=None, precond=None):
    """Preconditioned conjugate gradients for SPD systems."""
    matvec = _as_matvec(A)
    M = precond or _identity
    n = len(b)
    maxit = maxit if maxit is not None else 10 * n + 50
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, SolverReport(0, 0.0, True)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = r @ z
    resids = [1.0]
    for it in range(1, maxit + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            return x, SolverReport(it, np.linalg.norm(r) / bnorm, False,
                                   breakdown=True, residuals=resids)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        resids.append(rel)
        if rel <= tol:
            return x, SolverReport(it, rel, True, residuals=resids)
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolverReport(maxit, resids[-1], False, residuals=resids)


def minres(A, b, tol=1e-12, maxit=None, precond=None):
    """Preconditioned MINRES for symmetric (possibly indefinite) systems.

    The preconditioner must be SPD; the tracked residual estimates are
    monotonically non-increasing by construction of the method.
    """
    matvec = _as_matvec(A)
    M = precond or _identity
    n = len(b)
    maxit = maxit if maxit is not None else 5 * n + 50
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolverReport(0, 0.0, True)

    r1 = b.copy()
    y = M(r1)
    beta1 = r1 @ y
    if beta1 < 0:
        raise SolverFailure("preconditioner is not positive definite")
    if beta1 == 0:
        return x, SolverReport(0, 0.0, True)
    beta1 = math.sqrt(beta1)

    oldb, beta = 0.0, beta1
    dbar, epsln = 0.0, 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    resids = [1.0]

    for it in range(1, maxit + 1):
        s = 1.0 / beta
        v = s * y
        y = matvec(v)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = M(r2)
        oldb = beta
        beta = r2 @ y
        if beta < 0:
            raise SolverFailure("preconditioner is not positive definite")
        beta = math.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta

        gamma = math.hypot(gbar, beta)
        gamma = max(gamma, np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x += phi * w

        # phibar is the preconditioned residual norm estimate
        rel = phibar / beta1
        resids.append(rel)
        if rel <= tol:
            return x, SolverReport(it, rel, True, residuals=resids)
    return x, SolverReport(maxit, resids[-1], False, residuals=resids)


def gmres(A, b, tol=1e-10, maxit=None, restart=200, precond=None):
    """Right-preconditioned restarted GMRES.

    For consistent singular systems (with zero initial guess) the iteration
    converges to one of the solutions, which is all the helicity potential
    solve requires (gauge invariance absorbs the kernel component).
    """
    matvec = _as_matvec(A)
    M = precond or _identity
    n = len(b)
    maxit = maxit if maxit is not None else 10 * n + 100
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, SolverReport(0, 0.0, True)

    total_it = 0
    resids = [1.0]
    while total_it < maxit:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta / bnorm <= tol:
            return x, SolverReport(total_it, beta / bnorm, True, residuals=resids)
        m = min(restart, maxit - total_it)
        Q = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        Q[:, 0] = r / beta
        k_used = 0
        stagnated = False
        for k in range(m):
            total_it += 1
            w = matvec(M(Q[:, k]))
            for i in range(k + 1):
                H[i, k] = Q[:, i] @ w
                w -= H[i, k] * Q[:, i]
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 1e-300:
                Q[:, k + 1] = w / H[k + 1, k]
            else:
                stagnated = True
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = math.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                k_used = k
                stagnated = True
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            rel = abs(g[k + 1]) / bnorm
            resids.append(rel)
            if rel <= tol or stagnated:
                break
        if k_used > 0:
            yk = np.linalg.solve(H[:k_used, :k_used], g[:k_used])
            x = x + M(Q[:, :k_used] @ yk)
        r = b - matvec(x)
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, SolverReport(total_it, rel, True, residuals=resids)
        if stagnated:
            return x, SolverReport(total_it, rel, False, breakdown=True,
                                   residuals=resids)
    r = b - matvec(x)
    rel = np.linalg.norm(r) / bnorm
    return x, SolverReport(maxit, rel, rel <= tol, residuals=resids)
