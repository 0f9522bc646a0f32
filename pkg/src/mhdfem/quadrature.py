"""Quadrature rules on reference simplices (segment, triangle, tetrahedron).

Rules are built from tensor-product Gauss-Legendre points collapsed onto the
simplex with a Duffy map.  This gives rules of any requested exactness degree
without hardcoded point tables; exactness is verified in the tests against
closed-form monomial integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates on a reference simplex.

    weights sum to the reference measure (1 for the segment, 1/2 for the
    triangle, 1/6 for the tetrahedron).  A physical integral over a simplex S
    is (|S| / ref_measure) * sum_q w_q f(x_q).
    """

    dim: int
    points: np.ndarray   # (nq, dim+1) barycentric coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def npoints(self) -> int:
        return len(self.weights)

    @property
    def ref_measure(self) -> float:
        return 1.0 / math.factorial(self.dim)


def gauss_legendre_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_rule(degree: int) -> QuadratureRule:
    q = max(1, (degree + 2) // 2)
    x, w = gauss_legendre_01(q)
    bary = np.column_stack([1.0 - x, x])
    return QuadratureRule(dim=1, points=bary, weights=w, degree=degree)


def triangle_rule(degree: int) -> QuadratureRule:
    # Duffy map (u, v) -> (x, y) = (u, v (1 - u)), Jacobian (1 - u).
    # A monomial of total degree d pulls back to degree <= d + 1 in u.
    q = max(1, (degree + 3) // 2)
    x, w = gauss_legendre_01(q)
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xx = u.ravel()
    yy = (v * (1.0 - u)).ravel()
    ww = (wu * wv * (1.0 - u)).ravel()
    bary = np.column_stack([1.0 - xx - yy, xx, yy])
    return QuadratureRule(dim=2, points=bary, weights=ww, degree=degree)


def tetrahedron_rule(degree: int) -> QuadratureRule:
    # Collapsed map (u, v, w) -> (u, v(1-u), w(1-u)(1-v)),
    # Jacobian (1-u)^2 (1-v).
    q = max(1, (degree + 4) // 2)
    x, wq = gauss_legendre_01(q)
    u, v, w = np.meshgrid(x, x, x, indexing="ij")
    wu, wv, ww = np.meshgrid(wq, wq, wq, indexing="ij")
    xx = u.ravel()
    yy = (v * (1.0 - u)).ravel()
    zz = (w * (1.0 - u) * (1.0 - v)).ravel()
    wgt = (wu * wv * ww * (1.0 - u) ** 2 * (1.0 - v)).ravel()
    bary = np.column_stack([1.0 - xx - yy - zz, xx, yy, zz])
    return QuadratureRule(dim=3, points=bary, weights=wgt, degree=degree)


def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    if dim == 1:
        return segment_rule(degree)
    if dim == 2:
        return triangle_rule(degree)
    if dim == 3:
        return tetrahedron_rule(degree)
    raise ValueError(f"unsupported simplex dimension {dim}")


def reference_monomial_integral(exponents: tuple[int, ...]) -> float:
    """Exact integral of prod x_i^a_i over the unit reference simplex."""
    a = list(exponents)
    num = 1.0
    for ai in a:
        num *= math.factorial(ai)
    return num / math.factorial(sum(a) + len(a))
