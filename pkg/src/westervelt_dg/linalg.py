"""Sparse/block-diagonal storage and the SPD solve used by the time stepper."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BlockDiagMatrix",
    "as_csr",
    "spmv",
    "add_scaled",
    "solve_spd",
    "solve_block_diag",
    "extract_diagonal_blocks",
    "LinearSolveError",
    "ConvergenceError",
    "DefinitenessError",
    "SolveRecord",
    "record_solves",
]


class LinearSolveError(ArithmeticError):
    pass


class ConvergenceError(LinearSolveError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class DefinitenessError(LinearSolveError):
    pass


class BlockDiagMatrix:
    """Block-diagonal matrix with equal square blocks, stored as ``(C, n, n)``."""

    __array_priority__ = 20

    def __init__(self, blocks):
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError("blocks must have shape (C, n, n)")
        self.blocks = blocks

    @classmethod
    def identity(cls, n_blocks, n):
        return cls(np.broadcast_to(np.eye(n), (n_blocks, n, n)).copy())

    @property
    def n_blocks(self):
        return self.blocks.shape[0]

    @property
    def block_size(self):
        return self.blocks.shape[1]

    @property
    def shape(self):
        m = self.n_blocks * self.block_size
        return (m, m)

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"dimension mismatch: {self.shape} @ {x.shape}")
        C, n = self.n_blocks, self.block_size
        y = np.matmul(self.blocks, x.reshape(C, n, -1))
        return y.reshape(x.shape)

    def __matmul__(self, x):
        if isinstance(x, BlockDiagMatrix):
            return BlockDiagMatrix(np.matmul(self.blocks, x.blocks))
        return self.matvec(x)

    def __add__(self, other):
        if isinstance(other, BlockDiagMatrix):
            return BlockDiagMatrix(self.blocks + other.blocks)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, BlockDiagMatrix):
            return BlockDiagMatrix(self.blocks - other.blocks)
        return NotImplemented

    def __mul__(self, s):
        return BlockDiagMatrix(self.blocks * s)

    __rmul__ = __mul__

    @property
    def T(self):
        return BlockDiagMatrix(np.swapaxes(self.blocks, 1, 2))

    def inv(self):
        return BlockDiagMatrix(np.linalg.inv(self.blocks))

    def solve(self, rhs):
        return solve_block_diag(self, rhs)

    def tocsr(self):
        return sp.block_diag(list(self.blocks), format="csr")

    def toarray(self):
        return self.tocsr().toarray()


def as_csr(A) -> sp.csr_matrix:
    """CSR copy with sorted, duplicate-free column indices."""
    if isinstance(A, BlockDiagMatrix):
        A = A.tocsr()
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x):
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def add_scaled(A, B, alpha: float = 1.0, beta: float = 1.0):
    """``alpha * A + beta * B`` on the union of both sparsity patterns."""
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return as_csr(alpha * as_csr(A) + beta * as_csr(B))


def extract_diagonal_blocks(A, block_size: int) -> np.ndarray:
    n = block_size
    if isinstance(A, BlockDiagMatrix):
        return A.blocks.copy()
    if isinstance(A, np.ndarray):
        C = A.shape[0] // n
        idx = np.arange(C)
        return A.reshape(C, n, C, n)[idx, :, idx, :]
    coo = sp.coo_matrix(A)
    C = A.shape[0] // n
    keep = coo.row // n == coo.col // n
    out = np.zeros((C, n, n))
    np.add.at(out, (coo.row[keep] // n, coo.row[keep] % n, coo.col[keep] % n), coo.data[keep])
    return out


def _apply(A, x):
    if hasattr(A, "matvec") and not sp.issparse(A):
        return A.matvec(x)
    return A @ x


def solve_spd(
    A,
    rhs,
    tol: float = 1e-12,
    max_iter: int | None = None,
    x0=None,
    block_size: int | None = None,
    preconditioner=None,
    info: dict | None = None,
):
    """Preconditioned conjugate gradients for symmetric positive definite ``A``.

    ``A`` may be a sparse/dense matrix or any object with ``matvec``. The
    preconditioner defaults to block Jacobi over ``block_size`` blocks
    (scalar Jacobi when ``block_size`` is None) and may be given explicitly as
    a :class:`BlockDiagMatrix` holding the inverse blocks or a callable.

    Stops when ``||A x - rhs|| <= tol * ||rhs||``, verified on the true residual.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: {A.shape} vs rhs {rhs.shape}")
    if max_iter is None:
        max_iter = 10 * n
    if preconditioner is None:
        bs = block_size or 1
        if n % bs:
            raise ValueError("block_size does not divide the system size")
        preconditioner = BlockDiagMatrix(np.linalg.inv(extract_diagonal_blocks(A, bs)))
    if isinstance(preconditioner, BlockDiagMatrix):
        prec = preconditioner.matvec
    else:
        prec = preconditioner

    bnorm = np.linalg.norm(rhs)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    it = 0
    if bnorm == 0.0:
        x[:] = 0.0
        if info is not None:
            info.update(iterations=0, residual=0.0)
        for log in _solve_logs:
            log.append(SolveRecord(n, 0, 0.0, tol))
        return x
    target = tol * bnorm
    r = rhs - _apply(A, x)
    rnorm = np.linalg.norm(r)
    while True:
        if rnorm <= target:
            # confirm on the true residual; the recurrence drifts
            r = rhs - _apply(A, x)
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                break
        z = prec(r)
        p = z.copy()
        rz = r @ z
        restart = False
        while it < max_iter:
            Ap = _apply(A, p)
            pAp = p @ Ap
            if not pAp > 0.0:
                raise DefinitenessError(f"matrix is not positive definite (p'Ap = {pAp:.3e})")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                restart = True
                break
            z = prec(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if not restart:
            raise ConvergenceError(f"CG did not converge in {max_iter} iterations", rnorm / bnorm)
    if info is not None:
        info.update(iterations=it, residual=float(rnorm / bnorm))
    for log in _solve_logs:
        log.append(SolveRecord(n, it, float(rnorm / bnorm), tol))
    return x


@dataclass(frozen=True)
class SolveRecord:
    n: int
    iterations: int
    residual: float  # relative, on the true residual
    tol: float


_solve_logs: list[list] = []


@contextmanager
def record_solves():
    """Collect a :class:`SolveRecord` for every converged :func:`solve_spd` call in the block."""
    log: list[SolveRecord] = []
    _solve_logs.append(log)
    try:
        yield log
    finally:
        _solve_logs.remove(log)


def solve_block_diag(M, rhs):
    """Solve a block-diagonal system block by block with dense factorizations."""
    if not isinstance(M, BlockDiagMatrix):
        M = BlockDiagMatrix(M)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != M.shape[0]:
        raise ValueError(f"dimension mismatch: {M.shape} vs rhs {rhs.shape}")
    C, n = M.n_blocks, M.block_size
    x = np.linalg.solve(M.blocks, rhs.reshape(C, n, -1))
    return x.reshape(rhs.shape)
