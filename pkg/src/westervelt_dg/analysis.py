"""Error norms, discrete energy, quantity of interest, rates and extrapolation fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .assembly import MaterialParams, StabilizationParams, face_chi

__all__ = [
    "ErrorReport",
    "EnergyComponents",
    "EnergySeries",
    "EnergyRecorder",
    "EnergyNormErrorRecorder",
    "QoIRecorder",
    "ConvergenceRow",
    "ConvergenceTable",
    "QoIFit",
    "FitError",
    "error_norms",
    "discrete_energy",
    "mechanical_energy",
    "quantity_of_interest",
    "convergence_rates",
    "fit_qoi",
    "lemma_ratio_diagnostic",
    "write_convergence_csv",
    "write_energy_csv",
    "write_qoi_csv",
]


class FitError(ValueError):
    pass


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.15e}"


# ---------------------------------------------------------------------------
# field evaluation helpers


def _error_rule(space, degree=None):
    return space.volume_rule(degree if degree is not None else 2 * space.p + 4)


def _cell_values(space, rule, coeffs):
    c = np.asarray(coeffs, float).reshape(space.n_cells, space.n_loc, 1)
    vals = np.matmul(rule.phi, c)[..., 0]
    grads = np.einsum("cqkd,ck->cqd", rule.grad, c[..., 0])
    return vals, grads


@dataclass(frozen=True)
class ErrorReport:
    t: float
    l2_error: float
    h1_broken_error: float
    jump_norm: float
    psidot_l2_error: float
    energy_norm_error: float | None = None


def error_norms(state, exact, space, mat: MaterialParams, stab: StabilizationParams, degree: int | None = None) -> ErrorReport:
    """Errors of ``state`` against the exact solution at ``state.t``.

    Quadrature of degree ``2p + 4`` by default. The jump term measures
    ``psi~ - psi~_h`` with ``psi~ = psi + (b/c^2) psidot``: on interior faces the
    exact part has no jump, on boundary faces its trace is used.
    """
    t = state.t
    rule = _error_rule(space, degree)
    x, y = rule.points[..., 0], rule.points[..., 1]
    w = rule.weights
    uh, guh = _cell_values(space, rule, state.psi)
    vh, _ = _cell_values(space, rule, state.psidot)
    eu = exact.psi(x, y, t) - uh
    eg = exact.grad_psi(x, y, t) - guh
    ev = exact.psidot(x, y, t) - vh
    l2 = math.sqrt(float(np.sum(w * eu * eu)))
    h1 = math.sqrt(float(np.sum(w[..., None] * eg * eg)))
    v2 = math.sqrt(float(np.sum(w * ev * ev)))

    # jump of psi~_h on faces
    coef = mat.cellwise(space.mesh)
    r = np.repeat(coef.r, space.n_loc)
    tilde = np.asarray(state.psi) + r * np.asarray(state.psidot)
    mesh = space.mesh
    fr = space.face_rule(space.p + 3)
    T = tilde.reshape(space.n_cells, space.n_loc)
    plus = mesh.face_cells[:, 0]
    minus = mesh.face_cells[:, 1]
    bnd = minus < 0
    up = np.einsum("fqk,fk->fq", fr.phi_plus, T[plus])
    um = np.einsum("fqk,fk->fq", fr.phi_minus, T[np.maximum(minus, 0)])
    jump = up - um
    if np.any(bnd):
        fx, fy = fr.points[bnd, :, 0], fr.points[bnd, :, 1]
        rb = coef.r[plus[bnd]][:, None]
        ex_t = exact.psi(fx, fy, t) + rb * exact.psidot(fx, fy, t)
        jump[bnd] = up[bnd] - ex_t
    chi = face_chi(mesh, mat, stab)
    jn = math.sqrt(float(np.sum(chi[:, None] * fr.weights * jump * jump)))
    return ErrorReport(t, l2, h1, jn, v2)


# ---------------------------------------------------------------------------
# energy


@dataclass(frozen=True)
class EnergyComponents:
    kinetic: float
    damping: float
    gradient: float
    jump: float
    min_alpha: float

    @property
    def total(self) -> float:
        return self.kinetic + self.damping + self.gradient + self.jump

    @property
    def degenerate(self) -> bool:
        return not self.min_alpha > 0


class _EnergyContext:
    """Per-space data shared by energy evaluations."""

    def __init__(self, space, mat, stab, ops=None):
        from .assembly import assemble_penalty, assemble_stiffness

        self.space = space
        self.coef = mat.cellwise(space.mesh)
        self.r = np.repeat(self.coef.r, space.n_loc)
        self.K = ops.K if ops is not None else assemble_stiffness(space, mat)
        self.P = ops.P if ops is not None else assemble_penalty(space, mat, stab)
        self.rule = space.volume_rule(space.trilinear_degree)
        self.k2 = 2.0 * self.coef.k[:, None]

    def alpha(self, psidot):
        v = np.matmul(self.rule.phi, np.asarray(psidot, float).reshape(self.space.n_cells, -1, 1))[..., 0]
        return 1.0 - self.k2 * v

    def weighted_norm2(self, alpha, f):
        fq = np.matmul(self.rule.phi, np.asarray(f, float).reshape(self.space.n_cells, -1, 1))[..., 0]
        return float(np.sum(self.rule.weights * alpha * fq * fq))


def discrete_energy(state, accumulated_damping: float, space, mat, stab, ops=None, _ctx=None) -> EnergyComponents:
    """Components of the discrete energy.

    ``kinetic = ||sqrt(alpha_h) psidot_h||^2`` with ``alpha_h = 1 - 2k psidot_h``,
    ``gradient = int c^2 |grad psi~_h|^2`` and ``jump = ||sqrt(chi) [[psi~_h]]||^2``.
    ``accumulated_damping`` is the time integral of
    ``int (b/c^2) alpha_h psiddot_h^2`` up to ``state.t``, with ``b/c^2`` taken
    per cell; :class:`EnergyRecorder` integrates it along a run.
    """
    ctx = _ctx or _EnergyContext(space, mat, stab, ops)
    alpha = ctx.alpha(state.psidot)
    kin = ctx.weighted_norm2(alpha, state.psidot)
    tilde = state.psi + ctx.r * state.psidot
    grad = float(tilde @ (ctx.K @ tilde))
    jump = float(tilde @ (ctx.P @ tilde))
    active = ctx.rule.weights > 0
    return EnergyComponents(kin, float(accumulated_damping), grad, jump, float(alpha[active].min()))


def mechanical_energy(state, M, Kt) -> float:
    """``1/2 psidot' M psidot + 1/2 psi' Kt psi``, conserved by average-acceleration Newmark."""
    v, u = state.psidot, state.psi
    return 0.5 * float(v @ M.matvec(v)) + 0.5 * float(u @ (Kt @ u))


@dataclass
class EnergySeries:
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    components: list = field(default_factory=list)

    @property
    def totals(self) -> np.ndarray:
        return np.array([c.total for c in self.components])

    def max_ratio(self) -> float:
        tot = self.totals
        if tot[0] == 0:
            raise ZeroDivisionError("initial energy is zero")
        return float(tot.max() / tot[0])


class EnergyRecorder:
    """Streams discrete energy; the damping integral uses the trapezoidal rule.

    The damping integrand is ``int (b/c^2) alpha_h psiddot_h^2`` so that
    piecewise media weight each region by its own ratio.
    """

    def __init__(self, space, mat, stab, ops=None, stride: int = 1):
        self.ctx = _EnergyContext(space, mat, stab, ops)
        self.series = EnergySeries()
        self.stride = stride
        self._acc = 0.0
        self._prev = None
        rc = self.ctx.coef.r[:, None]
        self._rw = rc

    def _damping_integrand(self, state):
        alpha = self.ctx.alpha(state.psidot) * self._rw
        return self.ctx.weighted_norm2(alpha, state.psiddot)

    def __call__(self, state, report):
        cur = self._damping_integrand(state)
        if self._prev is not None:
            t0, f0 = self._prev
            self._acc += 0.5 * (state.t - t0) * (f0 + cur)
        self._prev = (state.t, cur)
        if state.step % self.stride == 0:
            e = discrete_energy(state, self._acc, None, None, None, _ctx=self.ctx)
            self.series.steps.append(state.step)
            self.series.times.append(state.t)
            self.series.components.append(e)


class EnergyNormErrorRecorder:
    """Energy-norm error with every ``max_t`` realised as a max over steps.

    Needs ``exact.psiddot`` for the damping integral; without it that term
    is skipped.
    """

    def __init__(self, exact, space, mat, stab, degree: int | None = None):
        self.exact = exact
        self.space = space
        self.mat = mat
        self.stab = stab
        self.rule = _error_rule(space, degree)
        self.coef = mat.cellwise(space.mesh)
        self.max_v = 0.0
        self.max_grad = 0.0
        self.max_jump = 0.0
        self.damp = 0.0
        self._prev = None

    def __call__(self, state, report):
        rule, ex, t = self.rule, self.exact, state.t
        x, y = rule.points[..., 0], rule.points[..., 1]
        w = rule.weights
        sp_ = self.space
        r = self.coef.r[:, None]
        vh, gvh = _cell_values(sp_, rule, state.psidot)
        uh, guh = _cell_values(sp_, rule, state.psi)
        ev = ex.psidot(x, y, t) - vh
        # grad of psi~ error
        eg = (ex.grad_psi(x, y, t) - guh) + r[..., None] * (ex.grad_psidot(x, y, t) - gvh)
        c2 = self.coef.c2[:, None, None]
        self.max_v = max(self.max_v, float(np.sum(w * ev * ev)))
        self.max_grad = max(self.max_grad, float(np.sum(w[..., None] * c2 * eg * eg)))
        rep = error_norms(state, ex, sp_, self.mat, self.stab, self.rule.degree)
        self.max_jump = max(self.max_jump, rep.jump_norm**2)
        if ex.psiddot is not None:
            ah, _ = _cell_values(sp_, rule, state.psiddot)
            ea = ex.psiddot(x, y, t) - ah
            cur = float(np.sum(w * r * ea * ea))
            if self._prev is not None:
                t0, f0 = self._prev
                self.damp += 0.5 * (t - t0) * (f0 + cur)
            self._prev = (t, cur)

    @property
    def value(self) -> float:
        return math.sqrt(self.max_v + self.damp + self.max_grad + self.max_jump)


# ---------------------------------------------------------------------------
# quantity of interest


def quantity_of_interest(trajectory: Iterable, M=None) -> float:
    """``max_n ||psi_h(t_n)||_L2``; ``M`` defaults to the identity (orthonormal basis)."""
    q = 0.0
    for s in trajectory:
        psi = s.psi if hasattr(s, "psi") else np.asarray(s, float)
        n2 = float(psi @ psi) if M is None else float(psi @ M.matvec(psi))
        q = max(q, math.sqrt(max(n2, 0.0)))
    return q


class QoIRecorder:
    def __init__(self, M=None):
        self.M = M
        self.value = 0.0
        self.history: list = []

    def __call__(self, state, report):
        v = quantity_of_interest([state], self.M)
        self.history.append(v)
        self.value = max(self.value, v)


# ---------------------------------------------------------------------------
# convergence tables


@dataclass
class ConvergenceRow:
    level: int
    n_elem: int
    h_max: float
    l2_err: float
    h1_err: float
    energy_err: float | None = None
    rate_l2: float | None = None
    rate_h1: float | None = None

    @property
    def inv_sqrt_n(self) -> float:
        return 1.0 / math.sqrt(self.n_elem)


@dataclass
class ConvergenceTable:
    rows: list

    def __post_init__(self):
        h = [r.h_max for r in self.rows]
        if any(b >= a for a, b in zip(h, h[1:])):
            raise ValueError("levels must be strictly refined (h_max decreasing)")

    def column(self, name):
        return np.array([getattr(r, name) if getattr(r, name) is not None else np.nan for r in self.rows], float)


def _pair_rate(e0, e1, h0, h1):
    if not (e0 > 0 and e1 > 0):
        return math.nan
    return math.log(e0 / e1) / math.log(h0 / h1)


def convergence_rates(table: ConvergenceTable) -> ConvergenceTable:
    """Fill ``rate_*`` with ``ln(e_i / e_{i+1}) / ln(h_i / h_{i+1})``; undefined rates are NaN."""
    rows = table.rows
    if len(rows) < 2:
        return table
    for a, b in zip(rows, rows[1:]):
        b.rate_l2 = _pair_rate(a.l2_err, b.l2_err, a.h_max, b.h_max)
        b.rate_h1 = _pair_rate(a.h1_err, b.h1_err, a.h_max, b.h_max)
    return table


def pairwise_rates(errors: Sequence[float], h: Sequence[float]) -> np.ndarray:
    return np.array([_pair_rate(errors[i], errors[i + 1], h[i], h[i + 1]) for i in range(len(errors) - 1)])


@dataclass(frozen=True)
class QoIFit:
    h: np.ndarray
    Q: np.ndarray
    p: int
    q1: float
    q2: float
    residual: float

    @property
    def extrapolated(self) -> float:
        return self.q1

    def __call__(self, h):
        return self.q1 + self.q2 * np.asarray(h, float) ** (self.p + 1)


def fit_qoi(pairs, p: int) -> QoIFit:
    """Least squares for ``Q(h) = q1 + q2 h^(p+1)``."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise FitError("need at least three (h, Q) pairs")
    h, Q = arr[:, 0], arr[:, 1]
    A = np.column_stack([np.ones_like(h), h ** (p + 1)])
    # scale the second column so the rank test is not fooled by tiny h^(p+1)
    s = np.linalg.norm(A[:, 1])
    if s == 0:
        raise FitError("rank-deficient design")
    As = A / np.array([1.0, s])
    if np.linalg.matrix_rank(As) < 2:
        raise FitError("rank-deficient design (all h equal?)")
    coef, *_ = np.linalg.lstsq(As, Q, rcond=None)
    q1, q2 = coef[0], coef[1] / s
    res = float(np.linalg.norm(A @ np.array([q1, q2]) - Q))
    return QoIFit(h, Q, p, float(q1), float(q2), res)


# ---------------------------------------------------------------------------
# inverse-trace diagnostic


def lemma_ratio_diagnostic(space, mat: MaterialParams, stab: StabilizationParams, n_samples: int = 20, rng_seed: int = 0) -> float:
    """Max over random ``v_h`` of ``||chi^-1/2 {{grad v_h}}||_F c sqrt(beta) / ||grad_h v_h||``.

    For piecewise media the largest wave speed is used as ``c``. Samples with
    vanishing gradient are skipped.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mesh = space.mesh
    rng = np.random.default_rng(rng_seed)
    coef = mat.cellwise(mesh)
    c = math.sqrt(float(coef.c2.max()))
    chi = face_chi(mesh, mat, stab)
    fr = space.face_rule()
    rule = space.volume_rule(space.bilinear_degree)
    plus = mesh.face_cells[:, 0]
    minus = mesh.face_cells[:, 1]
    bnd = minus < 0
    best = None
    for _ in range(n_samples):
        v = rng.standard_normal(space.n_dofs).reshape(space.n_cells, space.n_loc)
        g = np.einsum("cqkd,ck->cqd", rule.grad, v)
        vol = float(np.sum(rule.weights[..., None] * g * g))
        if not vol > 1e-300:
            continue
        gp = np.einsum("fqkd,fk->fqd", fr.grad_plus, v[plus])
        gm = np.einsum("fqkd,fk->fqd", fr.grad_minus, v[np.maximum(minus, 0)])
        avg = np.where(bnd[:, None, None], gp, 0.5 * (gp + gm))
        face = float(np.sum((fr.weights / chi[:, None])[..., None] * avg * avg))
        ratio = math.sqrt(face) * c * math.sqrt(stab.beta) / math.sqrt(vol)
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise ValueError("all samples skipped: gradients vanish (p = 0?)")
    return best


# ---------------------------------------------------------------------------
# CSV output


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_convergence_csv(table: ConvergenceTable, path) -> None:
    _write(
        path,
        ["level", "n_elem", "h_max", "inv_sqrt_n", "l2_err", "h1_err", "energy_err", "rate_l2", "rate_h1"],
        [
            (r.level, r.n_elem, r.h_max, r.inv_sqrt_n, r.l2_err, r.h1_err, r.energy_err, r.rate_l2, r.rate_h1)
            for r in table.rows
        ],
    )


def write_energy_csv(series: EnergySeries, path) -> None:
    _write(
        path,
        ["step", "t", "E_total", "E_kin", "E_damp", "E_grad", "E_jump"],
        [
            (s, t, c.total, c.kinetic, c.damping, c.gradient, c.jump)
            for s, t, c in zip(series.steps, series.times, series.components)
        ],
    )


def write_qoi_csv(rows, path) -> None:
    """``rows`` of ``(h, n_elem, Q)``; a degree column is added when present."""
    rows = list(rows)
    if rows and len(rows[0]) == 4:
        _write(path, ["h", "n_elem", "Q", "p"], rows)
    else:
        _write(path, ["h", "n_elem", "Q"], rows)
