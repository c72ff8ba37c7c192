"""Physical-frame orthonormal modal DG space on a polygonal mesh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PolyMesh
from .quadrature import gauss_legendre, triangle_rule

__all__ = ["DgSpace", "VolumeRule", "FaceRule", "BasisConditioningError", "monomial_exponents"]


class BasisConditioningError(ValueError):
    """Raised when Gram-Schmidt finds a numerically dependent monomial set."""


def monomial_exponents(p: int) -> list[tuple[int, int]]:
    """Graded exponent pairs ``(i, j)`` with ``i + j <= p``."""
    return [(d - j, j) for d in range(p + 1) for j in range(d + 1)]


@dataclass(frozen=True)
class VolumeRule:
    """Composite rule for all cells, padded to a common point count.

    Padding points carry zero weight, so sums over axis 1 are exact.
    """

    degree: int
    points: np.ndarray  # (C, Q, 2)
    weights: np.ndarray  # (C, Q)
    phi: np.ndarray  # (C, Q, n)
    grad: np.ndarray  # (C, Q, n, 2)


@dataclass(frozen=True)
class FaceRule:
    n_points: int
    points: np.ndarray  # (F, q, 2)
    weights: np.ndarray  # (F, q)
    phi_plus: np.ndarray  # (F, q, n)
    grad_plus: np.ndarray  # (F, q, n, 2)
    phi_minus: np.ndarray  # zeros on boundary faces
    grad_minus: np.ndarray


class DgSpace:
    """Broken polynomial space of total degree ``p``.

    Each cell carries an L2-orthonormal basis obtained by modified Gram-Schmidt
    on monomials in bounding-box scaled coordinates
    ``xi = (x - x_c) / dx``, ``eta = (y - y_c) / dy``. The basis is stored as a
    lower-triangular coefficient matrix per cell.

    Parameters
    ----------
    mesh : PolyMesh
    p : polynomial degree, ``p >= 0``
    basis_degree : quadrature degree used for orthonormalisation (default ``2p + 2``)
    """

    def __init__(self, mesh: PolyMesh, p: int, basis_degree: int | None = None):
        if int(p) != p or p < 0:
            raise ValueError("p must be a non-negative integer")
        self.mesh = mesh
        self.p = int(p)
        self.exponents = monomial_exponents(self.p)
        self.n_loc = len(self.exponents)
        self.n_cells = mesh.n_cells
        self.n_dofs = self.n_loc * self.n_cells
        self.offsets = np.arange(self.n_cells) * self.n_loc
        self.centers = 0.5 * (mesh.bbox_lo + mesh.bbox_hi)
        self.scales = 0.5 * (mesh.bbox_hi - mesh.bbox_lo)
        self._ei = np.array([e[0] for e in self.exponents])
        self._ej = np.array([e[1] for e in self.exponents])
        self._volume_rules: dict[int, VolumeRule] = {}
        self._face_rules: dict[int, FaceRule] = {}
        self.basis_degree = basis_degree if basis_degree is not None else 2 * self.p + 2
        if self.basis_degree < 2 * self.p:
            raise ValueError("basis quadrature must be exact to degree 2p")
        self.coeffs = self._orthonormalize()
        self.coeffs.setflags(write=False)

    # -- monomials

    def _monomials(self, cells, pts):
        """Scaled monomial values ``(P, n)`` and gradients ``(P, n, 2)``."""
        c = self.centers[cells]
        s = self.scales[cells]
        xi = (pts[..., 0] - c[..., 0]) / s[..., 0]
        eta = (pts[..., 1] - c[..., 1]) / s[..., 1]
        p = self.p
        xp = np.stack([xi**k for k in range(p + 1)], axis=-1)
        yp = np.stack([eta**k for k in range(p + 1)], axis=-1)
        vals = xp[..., self._ei] * yp[..., self._ej]
        dxp = np.zeros_like(xp)
        dyp = np.zeros_like(yp)
        for k in range(1, p + 1):
            dxp[..., k] = k * xp[..., k - 1]
            dyp[..., k] = k * yp[..., k - 1]
        gx = dxp[..., self._ei] * yp[..., self._ej] / s[..., 0, None]
        gy = xp[..., self._ei] * dyp[..., self._ej] / s[..., 1, None]
        return vals, np.stack([gx, gy], axis=-1)

    def _raw_rule(self, degree):
        ref, w = triangle_rule(degree)
        C = self.n_cells
        per_cell = [len(t) * len(w) for t in self.mesh.sub_triangles]
        Q = max(per_cell)
        pts = np.zeros((C, Q, 2))
        wts = np.zeros((C, Q))
        for c, tris in enumerate(self.mesh.sub_triangles):
            a, b, d = tris[:, 0], tris[:, 1], tris[:, 2]
            jac = np.abs((b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (d[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
            p = a[:, None, :] + ref[None, :, :1] * (b - a)[:, None, :] + ref[None, :, 1:] * (d - a)[:, None, :]
            k = per_cell[c]
            pts[c, :k] = p.reshape(-1, 2)
            wts[c, :k] = (jac[:, None] * w[None, :]).ravel()
            # park padding points on the centroid so evaluations stay bounded
            pts[c, k:] = self.mesh.centroids[c]
        return pts, wts

    def _orthonormalize(self):
        pts, w = self._raw_rule(self.basis_degree)
        cells = np.arange(self.n_cells)[:, None]
        V, _ = self._monomials(cells, pts)  # (C, Q, n)
        n = self.n_loc
        C = self.n_cells
        Q = np.empty_like(V)
        L = np.zeros((C, n, n))

        def inner(u, v):
            return np.einsum("cq,cq,cq->c", w, u, v)

        for k in range(n):
            v = V[:, :, k].copy()
            coef = np.zeros((C, n))
            coef[:, k] = 1.0
            norm0 = np.sqrt(inner(v, v))
            for _ in range(2):  # second pass re-orthogonalises
                for j in range(k):
                    r = inner(v, Q[:, :, j])
                    v -= r[:, None] * Q[:, :, j]
                    coef -= r[:, None] * L[:, j, :]
            nrm = np.sqrt(inner(v, v))
            bad = nrm < 1e-11 * norm0
            if np.any(bad):
                raise BasisConditioningError(
                    f"numerically singular Gram matrix on cells {np.flatnonzero(bad)[:10].tolist()}"
                )
            Q[:, :, k] = v / nrm[:, None]
            L[:, k, :] = coef / nrm[:, None]
        return L

    # -- evaluation

    def evaluate(self, cells, pts):
        """Basis values ``(..., n)`` and gradients ``(..., n, 2)`` at points of given cells.

        ``cells`` broadcasts against ``pts[..., 0]``.
        """
        cells = np.asarray(cells)
        pts = np.asarray(pts, dtype=float)
        vals, grads = self._monomials(cells, pts)
        L = self.coeffs[cells]  # (..., n, n)
        phi = np.einsum("...km,...m->...k", L, vals)
        dphi = np.einsum("...km,...md->...kd", L, grads)
        return phi, dphi

    def evaluate_basis(self, cell_id: int, point):
        """Values (n,) and gradients (n, 2) of the basis of one cell at one point."""
        phi, dphi = self.evaluate(np.array(cell_id), np.asarray(point, float))
        return phi, dphi

    def evaluate_field(self, coeffs, cells, pts, with_grad=False):
        u = np.asarray(coeffs).reshape(self.n_cells, self.n_loc)
        phi, dphi = self.evaluate(cells, pts)
        vals = np.einsum("...k,...k->...", phi, u[cells])
        if not with_grad:
            return vals
        return vals, np.einsum("...kd,...k->...d", dphi, u[cells])

    # -- rules

    def volume_rule(self, degree: int) -> VolumeRule:
        rule = self._volume_rules.get(degree)
        if rule is None:
            pts, w = self._raw_rule(degree)
            phi, dphi = self.evaluate(np.arange(self.n_cells)[:, None], pts)
            rule = VolumeRule(degree, pts, w, phi, dphi)
            for arr in (pts, w, phi, dphi):
                arr.setflags(write=False)
            self._volume_rules[degree] = rule
        return rule

    def face_rule(self, n_points: int | None = None) -> FaceRule:
        if n_points is None:
            n_points = self.default_face_points
        rule = self._face_rules.get(n_points)
        if rule is None:
            mesh = self.mesh
            s, w = gauss_legendre(n_points)
            a = mesh.vertices[mesh.face_vertices[:, 0]]
            b = mesh.vertices[mesh.face_vertices[:, 1]]
            pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
            wts = mesh.face_lengths[:, None] * w[None, :]
            plus = mesh.face_cells[:, 0]
            minus = mesh.face_cells[:, 1]
            php, gp = self.evaluate(plus[:, None], pts)
            phm, gm = self.evaluate(np.maximum(minus, 0)[:, None], pts)
            bnd = minus < 0
            phm[bnd] = 0.0
            gm[bnd] = 0.0
            rule = FaceRule(n_points, pts, wts, php, gp, phm, gm)
            self._face_rules[n_points] = rule
        return rule

    @property
    def default_face_points(self) -> int:
        return -(-(2 * self.p + 3) // 2)

    @property
    def bilinear_degree(self) -> int:
        return 2 * self.p + 2

    @property
    def trilinear_degree(self) -> int:
        return 3 * self.p + 1

    # -- projection

    def project(self, f, degree: int | None = None) -> np.ndarray:
        """Element-wise L2 projection of ``f(x, y)`` (vectorised callback)."""
        rule = self.volume_rule(degree or self.bilinear_degree)
        vals = np.asarray(f(rule.points[..., 0], rule.points[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, rule.weights.shape)
        return np.einsum("cq,cq,cqk->ck", rule.weights, vals, rule.phi).ravel()

    def gram_matrices(self, degree: int | None = None) -> np.ndarray:
        rule = self.volume_rule(degree or self.bilinear_degree)
        return np.einsum("cq,cqi,cqj->cij", rule.weights, rule.phi, rule.phi)

    def cell_dofs(self, c: int) -> slice:
        return slice(c * self.n_loc, (c + 1) * self.n_loc)

    def __repr__(self):
        return f"DgSpace(p={self.p}, n_cells={self.n_cells}, n_dofs={self.n_dofs})"
