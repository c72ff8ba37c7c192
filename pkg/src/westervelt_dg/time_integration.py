"""Implicit Newmark and Generalized-alpha stepping with a lagged nonlinear mass.

The semi-discrete problem is::

    (M - N(v)) a + Kt (u + r v) = F(t)

where ``r`` is the per-dof damping ratio ``b / c^2`` (constant on each cell)
and ``N`` the nonlinear mass. Each corrector solve is symmetrised: with
``s = beta dt^2 + gamma dt r`` (times ``1 - alpha_f``) the matrix
``(M - N) + Kt S`` is turned into ``(M - N) + S^1/2 Kt S^1/2`` acting on
``z = S^1/2 a``. This is exact because ``S`` is a scalar on every cell block,
so it commutes with the block-diagonal mass.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import BlockDiagMatrix, DefinitenessError, as_csr, extract_diagonal_blocks, solve_block_diag, solve_spd

__all__ = [
    "State",
    "IntegratorConfig",
    "StepReport",
    "SemiDiscreteSystem",
    "NonconvergenceError",
    "DegeneracyError",
    "compute_initial_acceleration",
    "initial_state",
    "newmark_step",
    "generalized_alpha_step",
    "run",
    "RunResult",
    "amplification_matrix",
    "write_step_reports",
]


class NonconvergenceError(ArithmeticError):
    def __init__(self, message: str, rel_change: float, step: int | None = None):
        super().__init__(f"{message} (last relative change {rel_change:.3e})")
        self.rel_change = rel_change
        self.step = step


class DegeneracyError(ArithmeticError):
    def __init__(self, message: str, indicator: float, step: int | None = None):
        super().__init__(message)
        self.indicator = indicator
        self.step = step


@dataclass(frozen=True)
class State:
    t: float
    psi: np.ndarray
    psidot: np.ndarray
    psiddot: np.ndarray
    step: int = 0
    # acceleration of the previous step, used only for the fixed-point initial guess
    prev_psiddot: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.psi)
        if len(self.psidot) != n or len(self.psiddot) != n:
            raise ValueError("state vectors must have equal length")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "newmark"
    beta_nm: float = 0.25
    gamma_nm: float = 0.5
    alpha_m: float = 0.0
    alpha_f: float = 0.0
    dt: float = 1e-3
    T: float = 1.0
    tol: float = 1e-5
    kappa_max: int = 100
    cg_tol: float = 1e-12

    def __post_init__(self):
        if self.scheme not in ("newmark", "generalized_alpha"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.beta_nm <= 1:
            raise ValueError("beta_nm must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("TOL must be positive")
        if self.kappa_max < 1:
            raise ValueError("kappa_max must be at least 1")
        if not (0 <= self.alpha_m < 1 and 0 <= self.alpha_f < 1):
            raise ValueError("alpha_m and alpha_f must lie in [0, 1)")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_dt(self, dt: float) -> "IntegratorConfig":
        return replace(self, dt=dt)


@dataclass(frozen=True)
class StepReport:
    step: int
    t: float
    fp_iters: int
    rel_change: float
    degeneracy_max: float
    cg_iters: int


class SemiDiscreteSystem:
    """Matrices and callbacks of one semi-discrete problem.

    Parameters
    ----------
    M : block-diagonal mass
    Kt : symmetric combined stiffness
    r : per-dof damping ratio (``b / c^2``), must be constant on blocks
    load : ``load(t) -> F(t)``
    nonlinear_mass : ``v -> BlockDiagMatrix`` or None for linear problems
    degeneracy : ``v -> max |2 k v_h|`` over monitoring points
    """

    def __init__(
        self,
        M: BlockDiagMatrix,
        Kt,
        r=None,
        load: Callable[[float], np.ndarray] | None = None,
        nonlinear_mass: Callable[[np.ndarray], BlockDiagMatrix] | None = None,
        degeneracy: Callable[[np.ndarray], float] | None = None,
    ):
        self.M = M
        self.Kt = as_csr(Kt)
        n = M.shape[0]
        if self.Kt.shape != (n, n):
            raise ValueError(f"dimension mismatch: M {M.shape}, Kt {self.Kt.shape}")
        self.n = n
        self.block_size = M.block_size
        self.r = np.zeros(n) if r is None else np.broadcast_to(np.asarray(r, float), (n,)).copy()
        self._load = load
        self.nonlinear_mass = nonlinear_mass
        self.degeneracy = degeneracy or (lambda v: 0.0)
        self._cache: dict = {}

    @classmethod
    def from_operators(cls, ops, scenario=None, load=None):
        """Build from :class:`~westervelt_dg.assembly.GlobalOperators` and a scenario."""
        from .assembly import assemble_source

        space = ops.space
        k = ops.coefficients.k
        if load is None and scenario is not None and (scenario.source_terms or scenario.boundary_terms):
            load = _separable_load(ops, scenario)
        if load is None and scenario is not None:
            g, gdot, f = scenario.boundary, scenario.boundary_dot, scenario.source

            def load(t):
                F = ops.dirichlet(g, gdot, t) if g is not None else np.zeros(space.n_dofs)
                if f is not None:
                    F = F + assemble_source(space, f, t)
                return F

        nonlinear = None
        degeneracy = None
        if np.any(k != 0.0):
            nonlinear = ops.nonlinear_mass
            rule = space.volume_rule(space.bilinear_degree)
            active = rule.weights > 0

            # 2k phi at the active points, laid out for a row-vector product per cell
            kphi = np.where(active[..., None], 2.0 * k[:, None, None] * rule.phi, 0.0)
            kphi = np.ascontiguousarray(kphi.transpose(0, 2, 1))

            def degeneracy(v):
                vq = np.matmul(v.reshape(space.n_cells, 1, space.n_loc), kphi)
                return float(np.max(np.abs(vq)))

        return cls(ops.M, ops.Kt, ops.damping_ratio, load, nonlinear, degeneracy)

    def load(self, t: float) -> np.ndarray:
        if self._load is None:
            return np.zeros(self.n)
        return np.asarray(self._load(t), dtype=float)

    def effective_mass(self, v) -> BlockDiagMatrix:
        if self.nonlinear_mass is None:
            return self.M
        return self.M - self.nonlinear_mass(v)

    def scaled_stiffness(self, s: np.ndarray, mass_scale: float = 1.0):
        """``S^1/2 Kt S^1/2`` and a block-Jacobi preconditioner, cached per ``(s, mass_scale)``.

        The preconditioner inverts the diagonal blocks of ``mass_scale M + S^1/2 Kt S^1/2``;
        the nonlinear mass is left out, it only perturbs the blocks slightly.
        """
        key = (s.tobytes(), mass_scale)
        hit = self._cache.get(key)
        if hit is None:
            q = np.sqrt(s)
            D = sp.diags(q)
            Ks = as_csr(D @ self.Kt @ D)
            blocks = mass_scale * self.M.blocks + extract_diagonal_blocks(Ks, self.block_size)
            hit = (q, Ks, BlockDiagMatrix(np.linalg.inv(blocks)))
            self._cache = {key: hit}
        return hit


def _separable_load(ops, scenario):
    """Load from space-time separable data: a fixed set of vectors per term."""
    space = ops.space
    vecs, funcs = [], []
    for sf, tf in scenario.source_terms:
        vecs.append(space.project(sf))
        funcs.append(tf)
    for gs, tf, tdf in scenario.boundary_terms:
        w0, w1 = ops.dirichlet_modes(gs)
        vecs += [w0, w1]
        funcs += [tf, tdf]
    modes = np.array(vecs) if vecs else np.zeros((0, space.n_dofs))

    def load(t):
        coef = np.array([float(fn(t)) for fn in funcs])
        return coef @ modes

    return load


class _EffectiveOperator:
    def __init__(self, mass: BlockDiagMatrix, Ks):
        self.mass = mass
        self.Ks = Ks
        self.shape = Ks.shape

    def matvec(self, z):
        return self.mass.matvec(z) + self.Ks @ z


def _corrector_solve(mass, Ks, prec, q, rhs, x0, cfg, step):
    """Solve ``(mass + Ks) z = q rhs``; returns ``a = z / q`` and CG iterations."""
    info: dict = {}
    try:
        z = solve_spd(
            _EffectiveOperator(mass, Ks),
            q * rhs,
            tol=cfg.cg_tol,
            x0=None if x0 is None else q * x0,
            preconditioner=prec,
            info=info,
        )
    except DefinitenessError as exc:
        raise DegeneracyError(f"effective matrix lost definiteness: {exc}", math.inf, step) from exc
    return z / q, info.get("iterations", 0)


def _initial_guess(state: State) -> np.ndarray:
    """Linear extrapolation of the acceleration history."""
    if state.prev_psiddot is None:
        return state.psiddot
    return 2.0 * state.psiddot - state.prev_psiddot


def _rel_change(new, old):
    nn = np.linalg.norm(new)
    return float(np.linalg.norm(new - old) / max(nn, np.finfo(float).eps))


def _check_degeneracy(system, v, step):
    d = float(system.degeneracy(v))
    if not d < 1.0:
        raise DegeneracyError(f"max|2k psidot_h| = {d:.3e} >= 1 at step {step}", d, step)
    return d


def compute_initial_acceleration(system: SemiDiscreteSystem, psi0, psi1, t: float = 0.0) -> np.ndarray:
    """Solve ``(M - N(psi1)) a0 = F(t) - Kt (psi0 + r psi1)``."""
    psi0 = np.asarray(psi0, float)
    psi1 = np.asarray(psi1, float)
    _check_degeneracy(system, psi1, 0)
    rhs = system.load(t) - system.Kt @ (psi0 + system.r * psi1)
    Meff = system.effective_mass(psi1)
    if np.any(np.linalg.eigvalsh(0.5 * (Meff.blocks + np.swapaxes(Meff.blocks, 1, 2)))[:, 0] <= 0):
        raise DegeneracyError("effective mass is not positive definite at t=0", math.inf, 0)
    return solve_block_diag(Meff, rhs)


def initial_state(system: SemiDiscreteSystem, psi0, psi1, t0: float = 0.0) -> State:
    a0 = compute_initial_acceleration(system, psi0, psi1, t0)
    return State(t0, np.array(psi0, float), np.array(psi1, float), a0, 0)


def newmark_step(state: State, cfg: IntegratorConfig, system: SemiDiscreteSystem, t0: float = 0.0):
    """One Newmark predictor/corrector step; returns ``(state', report)``."""
    dt = cfg.dt
    beta, gamma = cfg.beta_nm, cfg.gamma_nm
    n1 = state.step + 1
    t1 = t0 + n1 * dt
    u_pred = state.psi + dt * state.psidot + dt * dt * (0.5 - beta) * state.psiddot
    v_pred = state.psidot + dt * (1.0 - gamma) * state.psiddot
    s = beta * dt * dt + gamma * dt * system.r
    q, Ks, prec = system.scaled_stiffness(s)
    rhs = system.load(t1) - system.Kt @ (u_pred + system.r * v_pred)

    a = _initial_guess(state)
    cg_total = 0
    iters = 0
    change = 0.0
    while True:
        v_guess = v_pred + gamma * dt * a
        mass = system.effective_mass(v_guess)
        a_new, cg = _corrector_solve(mass, Ks, prec, q, rhs, a, cfg, n1)
        cg_total += cg
        iters += 1
        if system.nonlinear_mass is None:
            a = a_new
            change = 0.0
            break
        change = _rel_change(a_new, a)
        a = a_new
        if change < cfg.tol:
            break
        if iters >= cfg.kappa_max:
            raise NonconvergenceError(
                f"fixed point did not converge in {cfg.kappa_max} iterations at step {n1}", change, n1
            )
    u = u_pred + beta * dt * dt * a
    v = v_pred + gamma * dt * a
    d = _check_degeneracy(system, v, n1)
    return State(t1, u, v, a, n1, state.psiddot), StepReport(n1, t1, iters, change, d, cg_total)


def generalized_alpha_step(state: State, cfg: IntegratorConfig, system: SemiDiscreteSystem, t0: float = 0.0):
    """One Generalized-alpha step in the Chung-Hulbert form.

    Inertia is balanced at ``n+1-alpha_m`` (including the velocity entering
    the nonlinear mass), stiffness, damping and load at ``n+1-alpha_f``.
    """
    dt = cfg.dt
    beta, gamma = cfg.beta_nm, cfg.gamma_nm
    am, af = cfg.alpha_m, cfg.alpha_f
    n1 = state.step + 1
    t1 = t0 + n1 * dt
    tf = t1 - af * dt

    u_pred = state.psi + dt * state.psidot + dt * dt * (0.5 - beta) * state.psiddot
    v_pred = state.psidot + dt * (1.0 - gamma) * state.psiddot
    # u~ at n+1-alpha_f, split into a known part and (1 - af) s a
    ut_pred = u_pred + system.r * v_pred
    ut_old = state.psi + system.r * state.psidot
    s = (1.0 - af) * (beta * dt * dt + gamma * dt * system.r)
    q, Ks, prec = system.scaled_stiffness(s, 1.0 - am)
    base = system.load(tf) - system.Kt @ ((1.0 - af) * ut_pred + af * ut_old)

    a = _initial_guess(state)
    cg_total = 0
    iters = 0
    change = 0.0
    while True:
        v_guess = (1.0 - am) * (v_pred + gamma * dt * a) + am * state.psidot
        mass = system.effective_mass(v_guess)
        rhs = base - am * mass.matvec(state.psiddot)
        a_new, cg = _corrector_solve((1.0 - am) * mass, Ks, prec, q, rhs, a, cfg, n1)
        cg_total += cg
        iters += 1
        if system.nonlinear_mass is None:
            a = a_new
            change = 0.0
            break
        change = _rel_change(a_new, a)
        a = a_new
        if change < cfg.tol:
            break
        if iters >= cfg.kappa_max:
            raise NonconvergenceError(
                f"fixed point did not converge in {cfg.kappa_max} iterations at step {n1}", change, n1
            )
    u = u_pred + beta * dt * dt * a
    v = v_pred + gamma * dt * a
    d = _check_degeneracy(system, v, n1)
    return State(t1, u, v, a, n1, state.psiddot), StepReport(n1, t1, iters, change, d, cg_total)


@dataclass
class RunResult:
    final: State
    reports: list[StepReport]
    trajectory: list[State] | None = None
    recorders: Sequence = field(default_factory=list)

    @property
    def max_fp_iters(self) -> int:
        return max((r.fp_iters for r in self.reports), default=0)

    @property
    def max_degeneracy(self) -> float:
        return max((r.degeneracy_max for r in self.reports), default=0.0)


def run(
    system: SemiDiscreteSystem,
    cfg: IntegratorConfig,
    initial: State,
    recorders: Iterable = (),
    store_trajectory: bool = False,
    n_steps: int | None = None,
) -> RunResult:
    """Advance ``initial`` to ``cfg.T`` (or ``n_steps``) and feed each state to the recorders.

    A recorder is any callable ``rec(state, report)``; ``report`` is None for
    the initial state.
    """
    step = generalized_alpha_step if cfg.scheme == "generalized_alpha" else newmark_step
    recorders = list(recorders)
    n_steps = cfg.n_steps if n_steps is None else n_steps
    t0 = initial.t - initial.step * cfg.dt
    state = initial
    for rec in recorders:
        rec(state, None)
    traj = [state] if store_trajectory else None
    reports = []
    for _ in range(n_steps):
        state, rep = step(state, cfg, system, t0)
        reports.append(rep)
        for rec in recorders:
            rec(state, rep)
        if traj is not None:
            traj.append(state)
    return RunResult(state, reports, traj, recorders)


def amplification_matrix(cfg: IntegratorConfig, omega: float, xi: float = 0.0) -> np.ndarray:
    """Numerical 3x3 amplification matrix on ``(u, dt v, dt^2 a)`` for ``a + 2 xi omega v + omega^2 u = 0``.

    Obtained by stepping the 1-dof system from unit states.
    """
    system = SemiDiscreteSystem(
        BlockDiagMatrix(np.ones((1, 1, 1))),
        sp.csr_matrix(np.array([[omega**2]])),
        r=np.array([2.0 * xi / omega]) if xi else None,
    )
    step = generalized_alpha_step if cfg.scheme == "generalized_alpha" else newmark_step
    dt = cfg.dt
    scale = np.array([1.0, dt, dt * dt])
    A = np.zeros((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        x = e / scale
        s0 = State(0.0, x[:1], x[1:2], x[2:], 0)
        s1, _ = step(s0, cfg, system)
        A[:, j] = np.array([s1.psi[0], s1.psidot[0], s1.psiddot[0]]) * scale
    return A


def write_step_reports(reports: Sequence[StepReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "fp_iters", "rel_change", "degeneracy_max", "cg_iters"])
        for r in reports:
            w.writerow([r.step, f"{r.t:.17g}", r.fp_iters, f"{r.rel_change:.17g}", f"{r.degeneracy_max:.17g}", r.cg_iters])
