"""Line, triangle and polygon quadrature plus the exact polygon monomial integral."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 40


class QuadratureError(ValueError):
    pass


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss-Legendre rule on [0, 1]; exact to degree ``2n-1``."""
    if n < 1:
        raise QuadratureError("need at least one point")
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed-coordinate (conical product) rule on the unit triangle.

    Returns reference points ``(q, 2)`` on {x, y >= 0, x + y <= 1} and
    positive weights summing to 1/2. Exact for total degree ``degree``.
    """
    if degree < 0 or degree > MAX_TRIANGLE_DEGREE:
        raise QuadratureError(
            f"unsupported triangle rule degree {degree}; max supported degree is {MAX_TRIANGLE_DEGREE}"
        )
    n = max(1, (degree + 2) // 2)
    xi, wxi = gauss_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    eta = 0.5 * (t + 1.0)
    weta = 0.25 * wt
    X = np.outer(1.0 - eta, xi)
    Y = np.repeat(eta[:, None], n, axis=1)
    W = np.outer(weta, wxi)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def map_triangle_rule(tri: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule for a physical triangle ``tri`` of shape (3, 2)."""
    ref, w = triangle_rule(degree)
    a, b, c = tri
    jac = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    pts = a + ref[:, :1] * (b - a) + ref[:, 1:] * (c - a)
    return pts, w * abs(jac)


@dataclass(frozen=True)
class VolumeQuadrature:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class FaceQuadrature:
    points: np.ndarray
    weights: np.ndarray
    degree: int


def build_volume_quadrature(cell, degree: int) -> VolumeQuadrature:
    """Composite rule over the cell's sub-triangulation, exact to ``degree``."""
    if degree < 1:
        raise QuadratureError("degree must be >= 1")
    tris = cell.sub_triangles if hasattr(cell, "sub_triangles") else np.asarray(cell)
    pts, wts = zip(*(map_triangle_rule(t, degree) for t in tris))
    return VolumeQuadrature(np.concatenate(pts), np.concatenate(wts), degree)


def build_face_quadrature(p, q, n_points: int) -> FaceQuadrature:
    s, w = gauss_legendre(n_points)
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    length = float(np.hypot(*(q - p)))
    return FaceQuadrature(p + s[:, None] * (q - p), w * length, 2 * n_points - 1)


def polygon_monomial_integral(xy, a: int, b: int) -> float:
    """Exact integral of ``x**a * y**b`` over a CCW polygon.

    Divergence theorem with ``F = (x**(a+1) y**b / (a+1), 0)``; each edge
    integral is expanded binomially in the edge parameter.
    """
    if a < 0 or b < 0:
        raise QuadratureError("exponents must be non-negative")
    if hasattr(xy, "vertices"):
        xy = xy.vertices
    xy = np.asarray(xy, dtype=float)
    total = 0.0
    k = len(xy)
    A = a + 1
    for e in range(k):
        x0, y0 = xy[e]
        x1, y1 = xy[(e + 1) % k]
        dx, dy = x1 - x0, y1 - y0
        if dy == 0.0:
            continue
        s = 0.0
        for i in range(A + 1):
            ci = comb(A, i) * x0 ** (A - i) * dx**i
            if ci == 0.0:
                continue
            for j in range(b + 1):
                s += ci * comb(b, j) * y0 ** (b - j) * dy**j / (i + j + 1)
        total += s * dy
    return total / A
