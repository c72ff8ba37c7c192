"""Assembly of the SIPG operators for the Westervelt semi-discretisation.

The semi-discrete system reads::

    M a + (K - D - D^T + P)(u + r v) - N(v) a = w + f

with ``u, v, a`` the coefficient vectors of psi and its first two time
derivatives, ``r = b / c^2`` and ``N(v)`` the nonlinear mass with entries
``int 2 k v_h N_j N_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .linalg import BlockDiagMatrix, as_csr
from .space import DgSpace

__all__ = [
    "MaterialParams",
    "StabilizationParams",
    "GlobalOperators",
    "stabilization_chi",
    "face_chi",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_jump_matrix",
    "assemble_penalty",
    "assemble_dirichlet_vector",
    "assemble_source",
    "assemble_nonlinear_mass",
    "combined_operator",
    "build_operators",
    "write_coo",
]


@dataclass(frozen=True)
class MaterialParams:
    """Medium coefficients; ``regions`` maps cell tags to per-region media.

    Cells whose tag is missing from ``regions`` use the top-level values.
    """

    c: float
    b: float = 0.0
    beta_a: float = 0.0
    rho: float = 1.0
    regions: Mapping[str, "MaterialParams"] | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("speed of sound c must be positive")
        if self.b < 0:
            raise ValueError("sound diffusivity b must be non-negative")
        if not self.rho > 0:
            raise ValueError("mass density rho must be positive")

    @property
    def k(self) -> float:
        return self.beta_a / self.c**2

    @property
    def is_piecewise(self) -> bool:
        return bool(self.regions)

    def replace(self, **kw) -> "MaterialParams":
        d = dict(c=self.c, b=self.b, beta_a=self.beta_a, rho=self.rho, regions=self.regions)
        d.update(kw)
        return MaterialParams(**d)

    def medium_for(self, tag: str) -> "MaterialParams":
        if self.regions and tag in self.regions:
            return self.regions[tag]
        return self

    def cellwise(self, mesh) -> "CellCoefficients":
        media = [self.medium_for(t) for t in mesh.cell_tags]
        c = np.array([m.c for m in media])
        b = np.array([m.b for m in media])
        beta_a = np.array([m.beta_a for m in media])
        rho = np.array([m.rho for m in media])
        return CellCoefficients(c2=c**2, b=b, k=beta_a / c**2, rho=rho)


@dataclass(frozen=True)
class CellCoefficients:
    c2: np.ndarray
    b: np.ndarray
    k: np.ndarray
    rho: np.ndarray

    @property
    def r(self) -> np.ndarray:
        """Damping ratio ``b / c^2`` per cell."""
        return self.b / self.c2


@dataclass(frozen=True)
class StabilizationParams:
    beta: float
    p: int

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("penalty beta must be positive")


def stabilization_chi(face, mat: MaterialParams, stab: StabilizationParams, mesh) -> float:
    """Penalty value on a single face (see :func:`face_chi`)."""
    chi = face_chi(mesh, mat, stab, faces=[face] if np.ndim(face) == 0 else face)
    return float(chi[0])


def face_chi(mesh, mat: MaterialParams, stab: StabilizationParams, faces=None) -> np.ndarray:
    """Penalty ``chi`` per face.

    Uniform medium: ``beta c^2 max(p^2/h+, p^2/h-)``; piecewise medium:
    ``beta max(c+^2 p^2/h+, c-^2 p^2/h-)``. Boundary faces use the single
    adjacent cell.
    """
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces, dtype=int)
    plus = mesh.face_cells[faces, 0]
    minus = mesh.face_cells[faces, 1]
    h = mesh.diameters
    p2 = float(stab.p) ** 2
    bnd = minus < 0
    m = np.where(bnd, plus, minus)
    if mat.is_piecewise:
        c2 = mat.cellwise(mesh).c2
        sp_ = stab.beta * c2[plus] * (p2 / h[plus])
        sm_ = stab.beta * c2[m] * (p2 / h[m])
        return np.maximum(sp_, sm_)
    return stab.beta * mat.c**2 * np.maximum(p2 / h[plus], p2 / h[m])


# ---------------------------------------------------------------------------
# helpers


def _cell_weight(space: DgSpace, weight, rule):
    """Weight values at the rule points, shape (C, Q)."""
    shape = rule.weights.shape
    if weight is None:
        return np.ones(shape)
    if callable(weight):
        return np.broadcast_to(np.asarray(weight(rule.points[..., 0], rule.points[..., 1]), float), shape)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 0:
        return np.full(shape, float(weight))
    if weight.shape == (space.n_cells,):
        return np.broadcast_to(weight[:, None], shape)
    if weight.shape == (space.n_dofs,):
        u = weight.reshape(space.n_cells, space.n_loc)
        return np.einsum("cqk,ck->cq", rule.phi, u)
    raise ValueError(f"unsupported weight of shape {weight.shape}")


def _blocks_to_csr(space: DgSpace, rows_cell, cols_cell, blocks) -> sp.csr_matrix:
    n = space.n_loc
    li = np.arange(n)
    r = (rows_cell[:, None, None] * n + li[None, :, None]) + 0 * li[None, None, :]
    c = (cols_cell[:, None, None] * n + li[None, None, :]) + 0 * li[None, :, None]
    A = sp.coo_matrix(
        (blocks.ravel(), (r.ravel(), c.ravel())), shape=(space.n_dofs, space.n_dofs)
    )
    return as_csr(A)


@dataclass
class _FaceBlocks:
    """Face-pair blocks keyed by (row side, col side)."""

    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    blocks: list = field(default_factory=list)

    def add(self, rc, cc, B):
        self.rows.append(rc)
        self.cols.append(cc)
        self.blocks.append(B)

    def tocsr(self, space):
        if not self.blocks:
            return sp.csr_matrix((space.n_dofs, space.n_dofs))
        return _blocks_to_csr(
            space, np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.blocks)
        )


# ---------------------------------------------------------------------------
# volume operators


def assemble_mass(space: DgSpace, weight=None, degree: int | None = None) -> BlockDiagMatrix:
    """``m_ij = int w N_i N_j`` as a block-diagonal matrix."""
    if degree is None:
        if callable(weight):
            degree = space.bilinear_degree + 2
        elif np.ndim(weight) == 1 and np.shape(weight)[0] == space.n_dofs:
            degree = space.trilinear_degree
        else:
            degree = space.bilinear_degree
    rule = space.volume_rule(degree)
    wq = rule.weights * _cell_weight(space, weight, rule)
    return BlockDiagMatrix(np.einsum("cq,cqi,cqj->cij", wq, rule.phi, rule.phi))


def assemble_stiffness(space: DgSpace, mat: MaterialParams) -> sp.csr_matrix:
    """``k_ij = int c^2 grad N_j . grad N_i`` (block diagonal, returned as CSR)."""
    return BlockDiagMatrix(_stiffness_blocks(space, mat)).tocsr()


def _stiffness_blocks(space, mat):
    rule = space.volume_rule(space.bilinear_degree)
    c2 = mat.cellwise(space.mesh).c2
    wq = rule.weights * c2[:, None]
    return np.einsum("cq,cqid,cqjd->cij", wq, rule.grad, rule.grad)


def _face_data(space, mat, n_points=None):
    mesh = space.mesh
    fr = space.face_rule(n_points)
    coef = mat.cellwise(mesh)
    plus = mesh.face_cells[:, 0]
    minus = mesh.face_cells[:, 1]
    bnd = minus < 0
    n = mesh.face_normals
    dn_p = np.einsum("fqkd,fd->fqk", fr.grad_plus, n)
    dn_m = np.einsum("fqkd,fd->fqk", fr.grad_minus, n)
    c2p = coef.c2[plus]
    c2m = np.where(bnd, 0.0, coef.c2[np.maximum(minus, 0)])
    avg = np.where(bnd, 1.0, 0.5)
    return fr, plus, minus, bnd, dn_p, dn_m, c2p, c2m, avg


def assemble_jump_matrix(space: DgSpace, mat: MaterialParams) -> sp.csr_matrix:
    """``d_ij = sum_F int [[N_j]] . {{c^2 grad N_i}}``."""
    fr, plus, minus, bnd, dn_p, dn_m, c2p, c2m, avg = _face_data(space, mat)
    w = fr.weights
    acc = _FaceBlocks()
    # row side i, column side j: avg * c2_i * sigma_j * int dn N_i N_j
    acc.add(plus, plus, (avg * c2p)[:, None, None] * np.einsum("fq,fqi,fqj->fij", w, dn_p, fr.phi_plus))
    I = np.flatnonzero(~bnd)
    if len(I):
        wi = w[I]
        acc.add(plus[I], minus[I], -(0.5 * c2p[I])[:, None, None] * np.einsum("fq,fqi,fqj->fij", wi, dn_p[I], fr.phi_minus[I]))
        acc.add(minus[I], plus[I], (0.5 * c2m[I])[:, None, None] * np.einsum("fq,fqi,fqj->fij", wi, dn_m[I], fr.phi_plus[I]))
        acc.add(minus[I], minus[I], -(0.5 * c2m[I])[:, None, None] * np.einsum("fq,fqi,fqj->fij", wi, dn_m[I], fr.phi_minus[I]))
    return acc.tocsr(space)


def assemble_penalty(space: DgSpace, mat: MaterialParams, stab: StabilizationParams) -> sp.csr_matrix:
    """``p_ij = sum_F int chi [[N_j]] . [[N_i]]``."""
    mesh = space.mesh
    fr = space.face_rule()
    chi = face_chi(mesh, mat, stab)
    plus = mesh.face_cells[:, 0]
    minus = mesh.face_cells[:, 1]
    bnd = minus < 0
    wc = fr.weights * chi[:, None]
    acc = _FaceBlocks()
    acc.add(plus, plus, np.einsum("fq,fqi,fqj->fij", wc, fr.phi_plus, fr.phi_plus))
    I = np.flatnonzero(~bnd)
    if len(I):
        wi = wc[I]
        pm = -np.einsum("fq,fqi,fqj->fij", wi, fr.phi_plus[I], fr.phi_minus[I])
        acc.add(plus[I], minus[I], pm)
        acc.add(minus[I], plus[I], np.swapaxes(pm, 1, 2))
        acc.add(minus[I], minus[I], np.einsum("fq,fqi,fqj->fij", wi, fr.phi_minus[I], fr.phi_minus[I]))
    return acc.tocsr(space)


def combined_operator(K, D, P) -> sp.csr_matrix:
    """``K - D - D^T + P``."""
    shapes = {K.shape, D.shape, P.shape}
    if len(shapes) != 1 or K.shape[0] != K.shape[1]:
        raise ValueError(f"dimension mismatch: {K.shape}, {D.shape}, {P.shape}")
    D = as_csr(D)
    return as_csr(as_csr(K) - D - D.T + as_csr(P))


# ---------------------------------------------------------------------------
# right-hand sides


class _BoundaryData:
    """Boundary face quadrature reused by every Dirichlet assembly."""

    def __init__(self, space, mat, stab, n_points):
        mesh = space.mesh
        fr = space.face_rule(n_points)
        B = mesh.boundary_faces
        self.cells = mesh.face_cells[B, 0]
        self.points = fr.points[B]
        coef = mat.cellwise(mesh)
        chi = face_chi(mesh, mat, stab)[B]
        dn = np.einsum("fqkd,fd->fqk", fr.grad_plus[B], mesh.face_normals[B])
        w = fr.weights[B]
        # test-function kernel of  -c^2 g~ dn v + chi g~ v
        self.kernel = w[..., None] * (-coef.c2[self.cells][:, None, None] * dn + chi[:, None, None] * fr.phi_plus[B])
        self.r = coef.r[self.cells]
        tags = [mesh.face_tags[f] for f in B]
        self.tag_groups = {}
        for i, t in enumerate(tags):
            self.tag_groups.setdefault(t, []).append(i)
        self.tag_groups = {t: np.array(v) for t, v in self.tag_groups.items()}
        self.n_cells = space.n_cells
        self.n_loc = space.n_loc

    def spatial_modes(self, gs):
        """Vectors ``(W0, W1)`` with ``w(t) = T(t) W0 + Tdot(t) W1`` for ``g = gs(x) T(t)``."""
        vals = np.zeros(self.points.shape[:2])
        for tag, idx in self.tag_groups.items():
            x = self.points[idx, :, 0]
            y = self.points[idx, :, 1]
            vals[idx] = np.broadcast_to(np.asarray(gs(x, y, tag), float), x.shape)
        out = []
        for gt in (vals, self.r[:, None] * vals):
            contrib = np.einsum("fqk,fq->fk", self.kernel, gt)
            acc = np.zeros((self.n_cells, self.n_loc))
            np.add.at(acc, self.cells, contrib)
            out.append(acc.ravel())
        return out[0], out[1]

    def assemble(self, g, gdot, t):
        gt = np.zeros(self.points.shape[:2])
        for tag, idx in self.tag_groups.items():
            x = self.points[idx, :, 0]
            y = self.points[idx, :, 1]
            val = np.broadcast_to(np.asarray(g(x, y, t, tag), float), x.shape)
            if gdot is not None:
                val = val + self.r[idx, None] * np.broadcast_to(np.asarray(gdot(x, y, t, tag), float), x.shape)
            gt[idx] = val
        contrib = np.einsum("fqk,fq->fk", self.kernel, gt)
        out = np.zeros((self.n_cells, self.n_loc))
        np.add.at(out, self.cells, contrib)
        return out.ravel()


def assemble_dirichlet_vector(
    space: DgSpace,
    g: Callable,
    gdot: Callable | None,
    mat: MaterialParams,
    stab: StabilizationParams,
    t: float,
    n_points: int | None = None,
) -> np.ndarray:
    """Weak Dirichlet load ``w_i = int_{dOmega} [-c^2 g~ dn N_i + chi g~ N_i]``.

    ``g(x, y, t, tag)`` and ``gdot`` are vectorised callbacks receiving the
    boundary tag; ``g~ = g + (b/c^2) gdot``.
    """
    return _BoundaryData(space, mat, stab, n_points).assemble(g, gdot, t)


def assemble_source(space: DgSpace, f: Callable, t: float, degree: int | None = None) -> np.ndarray:
    """``int f(., t) N_i`` with ``f(x, y, t)`` vectorised."""
    rule = space.volume_rule(degree or space.bilinear_degree)
    vals = np.broadcast_to(
        np.asarray(f(rule.points[..., 0], rule.points[..., 1], t), float), rule.weights.shape
    )
    return np.einsum("cq,cqk->ck", rule.weights * vals, rule.phi).ravel()


# ---------------------------------------------------------------------------
# nonlinearity


def triple_products(space: DgSpace) -> np.ndarray:
    """Cell-local tensors ``T[c, i, j, l] = int phi_i phi_j phi_l``, cached on the space."""
    T = getattr(space, "_triple_products", None)
    if T is None:
        rule = space.volume_rule(space.trilinear_degree)
        T = np.einsum("cq,cqi,cqj,cql->cijl", rule.weights, rule.phi, rule.phi, rule.phi, optimize=True)
        space._triple_products = T
    return T


def assemble_nonlinear_mass(space: DgSpace, psidot, mat: MaterialParams, k_cells=None) -> BlockDiagMatrix:
    """``N(v)_ij = int 2 k v_h N_j N_i``; the global 3-tensor is never formed."""
    if k_cells is None:
        k_cells = mat.cellwise(space.mesh).k
    v = np.asarray(psidot, dtype=float).reshape(space.n_cells, space.n_loc)
    T = triple_products(space)
    C, n = v.shape
    # T is symmetric in (i, j, l), so contracting the leading index is the same
    blocks = np.matmul(v[:, None, :], T.reshape(C, n, n * n)).reshape(C, n, n)
    return BlockDiagMatrix(blocks * (2.0 * k_cells)[:, None, None])


# ---------------------------------------------------------------------------


@dataclass
class GlobalOperators:
    space: DgSpace
    mat: MaterialParams
    stab: StabilizationParams
    M: BlockDiagMatrix
    K: sp.csr_matrix
    D: sp.csr_matrix
    P: sp.csr_matrix
    Kt: sp.csr_matrix
    chi: np.ndarray
    coefficients: CellCoefficients
    _boundary: _BoundaryData | None = None

    @property
    def damping_ratio(self) -> np.ndarray:
        """Per-dof ``b / c^2``."""
        return np.repeat(self.coefficients.r, self.space.n_loc)

    def dirichlet(self, g, gdot, t):
        if self._boundary is None:
            self._boundary = _BoundaryData(self.space, self.mat, self.stab, None)
        return self._boundary.assemble(g, gdot, t)

    def dirichlet_modes(self, gs):
        if self._boundary is None:
            self._boundary = _BoundaryData(self.space, self.mat, self.stab, None)
        return self._boundary.spatial_modes(gs)

    def nonlinear_mass(self, psidot) -> BlockDiagMatrix:
        return assemble_nonlinear_mass(self.space, psidot, self.mat, self.coefficients.k)


def build_operators(space: DgSpace, mat: MaterialParams, stab: StabilizationParams) -> GlobalOperators:
    if stab.p != space.p:
        raise ValueError("stabilization degree must match the space degree")
    M = assemble_mass(space)
    K = assemble_stiffness(space, mat)
    D = assemble_jump_matrix(space, mat)
    P = assemble_penalty(space, mat, stab)
    return GlobalOperators(
        space=space,
        mat=mat,
        stab=stab,
        M=M,
        K=K,
        D=D,
        P=P,
        Kt=combined_operator(K, D, P),
        chi=face_chi(space.mesh, mat, stab),
        coefficients=mat.cellwise(space.mesh),
    )


def write_coo(A, path) -> None:
    """Debug dump as ``row col value`` lines."""
    coo = sp.coo_matrix(A.tocsr() if isinstance(A, BlockDiagMatrix) else A)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
