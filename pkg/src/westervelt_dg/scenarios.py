"""Experiment definitions: exact-solution benchmark, channel excitation, layered medium."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import pi, sqrt
from typing import Callable

import numpy as np

from .assembly import MaterialParams
from .mesh import Rectangle

__all__ = [
    "Scenario",
    "StudyPlan",
    "ExactSolution",
    "test_case_1",
    "test_case_2",
    "piecewise_material_2d",
    "pressure_field",
    "westervelt_residual",
    "check_manufactured",
    "SCENARIOS",
    "temporal_ramp",
    "temporal_ramp_dot",
    "mollifier_window",
]

# (x, y, t[, tag]) callbacks, all vectorised
Field = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ExactSolution:
    psi: Field
    grad_psi: Field
    psidot: Field
    grad_psidot: Field
    psiddot: Field | None = None
    lap_psi: Field | None = None
    lap_psidot: Field | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: Rectangle
    material: MaterialParams
    T: float
    source: Field | None = None
    boundary: Field | None = None
    boundary_dot: Field | None = None
    psi0: Field | None = None
    psi1: Field | None = None
    exact: ExactSolution | None = None
    # integrator defaults for this experiment
    integrator: dict = field(default_factory=dict)
    penalty: float = 10.0
    dt: float | None = None
    cell_tagger: Callable[[np.ndarray], list] | None = None
    # optional separable forms of the data, f = sum S(x) T(t) and
    # g = sum G(x, tag) T(t); they must agree with the callbacks above
    source_terms: tuple = ()
    boundary_terms: tuple = ()

    def with_material(self, material: MaterialParams) -> "Scenario":
        return replace(self, material=material)

    def initial_data(self, space):
        """L2 projections of the initial fields."""
        zero = np.zeros(space.n_dofs)
        u0 = space.project(self.psi0) if self.psi0 is not None else zero
        u1 = space.project(self.psi1) if self.psi1 is not None else zero.copy()
        return u0, u1

    def tag_mesh(self, mesh):
        if self.cell_tagger is None:
            return mesh
        return mesh.with_cell_tags(self.cell_tagger(mesh.centroids))


@dataclass(frozen=True)
class StudyPlan:
    """Mesh levels or a degree sweep for one scenario."""

    scenario: Scenario
    levels: tuple = ()
    degrees: tuple = ()
    generator: str = "hex"
    dt: tuple = ()

    def __post_init__(self):
        if not self.levels and not self.degrees:
            raise ValueError("a study needs at least one level or degree")


# ---------------------------------------------------------------------------
# Test case 1: manufactured solution


def test_case_1(c: float = 1.0, b: float = 1e-5, beta_a: float = 1e-4, rho: float = 1.0, T: float = 0.8) -> Scenario:
    """Standing wave ``psi = sin(4 pi x) sin(4 pi t)`` on (0, 1) x (0, 2/sqrt(3))."""
    mat = MaterialParams(c=c, b=b, beta_a=beta_a, rho=rho)
    k = mat.k
    w = 4 * pi

    def psi(x, y, t):
        return np.sin(w * x) * np.sin(w * t) + 0 * y

    def psidot(x, y, t):
        return w * np.sin(w * x) * np.cos(w * t) + 0 * y

    def psiddot(x, y, t):
        return -w * w * np.sin(w * x) * np.sin(w * t) + 0 * y

    def grad_psi(x, y, t):
        gx = w * np.cos(w * x) * np.sin(w * t) + 0 * y
        return np.stack([gx, np.zeros_like(gx)], axis=-1)

    def grad_psidot(x, y, t):
        gx = w * w * np.cos(w * x) * np.cos(w * t) + 0 * y
        return np.stack([gx, np.zeros_like(gx)], axis=-1)

    def lap_psi(x, y, t):
        return -w * w * psi(x, y, t)

    def lap_psidot(x, y, t):
        return -w * w * psidot(x, y, t)

    def source(x, y, t):
        sx = np.sin(w * x) + 0 * y
        lin = (16 * pi**2 * (c * c - 1) * np.sin(w * t) + 64 * pi**3 * b * np.cos(w * t)) * sx
        return lin + 128 * pi**3 * k * np.sin(w * t) * np.cos(w * t) * sx**2

    return Scenario(
        name="test_case_1",
        domain=Rectangle(0.0, 0.0, 1.0, 2.0 / sqrt(3.0)),
        material=mat,
        T=T,
        source=source,
        boundary=lambda x, y, t, tag: psi(x, y, t),
        boundary_dot=lambda x, y, t, tag: psidot(x, y, t),
        psi0=lambda x, y: psi(x, y, 0.0),
        psi1=lambda x, y: psidot(x, y, 0.0),
        exact=ExactSolution(psi, grad_psi, psidot, grad_psidot, psiddot, lap_psi, lap_psidot),
        source_terms=(
            (
                lambda x, y: np.sin(w * x) + 0 * y,
                lambda t: 16 * pi**2 * (c * c - 1) * np.sin(w * t) + 64 * pi**3 * b * np.cos(w * t),
            ),
            (lambda x, y: np.sin(w * x) ** 2 + 0 * y, lambda t: 128 * pi**3 * k * np.sin(w * t) * np.cos(w * t)),
        ),
        boundary_terms=(
            (lambda x, y, tag: np.sin(w * x) + 0 * y, lambda t: np.sin(w * t), lambda t: w * np.cos(w * t)),
        ),
        integrator=dict(scheme="newmark", beta_nm=0.25, gamma_nm=0.5, alpha_m=0.0, alpha_f=0.0, tol=1e-5, kappa_max=100),
        penalty=10.0,
    )


def westervelt_residual(scenario: Scenario, x, y, t):
    """``(1 - 2k psidot) psiddot - c^2 lap psi - b lap psidot - f`` for the exact solution."""
    ex = scenario.exact
    if ex is None or ex.psiddot is None or ex.lap_psi is None:
        raise ValueError("scenario has no twice-differentiable exact solution")
    m = scenario.material
    f = scenario.source(x, y, t) if scenario.source is not None else 0.0
    return (
        (1 - 2 * m.k * ex.psidot(x, y, t)) * ex.psiddot(x, y, t)
        - m.c**2 * ex.lap_psi(x, y, t)
        - m.b * ex.lap_psidot(x, y, t)
        - f
    )


def check_manufactured(scenario: Scenario, n_samples: int = 200, rng_seed: int = 0, tol: float = 1e-10) -> float:
    """Pre-run gate: max residual of the manufactured pair at random samples."""
    rng = np.random.default_rng(rng_seed)
    d = scenario.domain
    x = rng.uniform(d.x0, d.x1, n_samples)
    y = rng.uniform(d.y0, d.y1, n_samples)
    t = rng.uniform(0.0, scenario.T, n_samples)
    res = np.abs(westervelt_residual(scenario, x, y, t))
    worst = float(res.max())
    if worst > tol:
        raise ValueError(f"manufactured source inconsistent with exact solution: residual {worst:.3e}")
    return worst


# ---------------------------------------------------------------------------
# Test case 2: channel with a windowed sine excitation on x = 0


def temporal_ramp(t, f: float, A: float, cutoff: bool = False):
    """Quadratically ramped sine; after ``2/f`` it continues (or stops when ``cutoff``)."""
    t = np.asarray(t, dtype=float)
    om = 2 * pi * f
    ramp = (f * t / 2) ** 2 * A * np.sin(om * t)
    after = np.zeros_like(t) if cutoff else A * np.sin(om * t)
    return np.where(t < 2.0 / f, ramp, after)


def temporal_ramp_dot(t, f: float, A: float, cutoff: bool = False):
    t = np.asarray(t, dtype=float)
    om = 2 * pi * f
    ramp = A * ((f * f * t / 2) * np.sin(om * t) + (f * t / 2) ** 2 * om * np.cos(om * t))
    after = np.zeros_like(t) if cutoff else A * om * np.cos(om * t)
    return np.where(t < 2.0 / f, ramp, after)


def mollifier_window(y, H: float = 0.02, edge: float = 0.005):
    """Smooth plateau: 1 on [edge, H - edge], bump-function tails to 0 at y = 0 and y = H."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    flat = (y >= edge) & (y <= H - edge)
    out[flat] = 1.0
    lo = (y > 0) & (y < edge)
    hi = (y > H - edge) & (y < H)
    for mask, centre in ((lo, edge), (hi, H - edge)):
        s = (y[mask] - centre) / edge
        out[mask] = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return out


def _channel_terms(f, A, H, cutoff):
    def window(x, y, tag):
        return mollifier_window(y, H) if tag == "left" else np.zeros(np.shape(x))

    return ((window, lambda t: temporal_ramp(t, f, A, cutoff), lambda t: temporal_ramp_dot(t, f, A, cutoff)),)


def _channel_boundary(f, A, H, cutoff):
    def g(x, y, t, tag):
        if tag != "left":
            return np.zeros(np.shape(x))
        return mollifier_window(y, H) * temporal_ramp(t, f, A, cutoff)

    def gdot(x, y, t, tag):
        if tag != "left":
            return np.zeros(np.shape(x))
        return mollifier_window(y, H) * temporal_ramp_dot(t, f, A, cutoff)

    return g, gdot


def test_case_2(A: float = 0.01, f: float = 210e3, T: float = 2.4e-5, dt: float = 2e-9) -> Scenario:
    """Channel of height 0.02 m and length sqrt(3) * 0.02 m excited on its left wall."""
    H = 0.02
    L = 3.0 / sqrt(3.0) * 0.02
    g, gdot = _channel_boundary(f, A, H, cutoff=False)
    return Scenario(
        name="test_case_2",
        domain=Rectangle(0.0, 0.0, L, H),
        material=MaterialParams(c=1500.0, b=6e-9, beta_a=7.0, rho=1000.0),
        T=T,
        boundary=g,
        boundary_dot=gdot,
        boundary_terms=_channel_terms(f, A, H, cutoff=False),
        integrator=dict(
            scheme="generalized_alpha", beta_nm=4 / 9, gamma_nm=5 / 6, alpha_m=0.0, alpha_f=1 / 3, tol=1e-5, kappa_max=100
        ),
        penalty=10.0,
        dt=dt,
    )


# ---------------------------------------------------------------------------
# layered medium


REGION_A = MaterialParams(c=1500.0, b=6e-9, beta_a=5.0, rho=1000.0)
REGION_B = MaterialParams(c=3000.0, b=4e-9, beta_a=7.0, rho=2000.0)


def piecewise_material_2d(
    region_a: MaterialParams = REGION_A,
    region_b: MaterialParams = REGION_B,
    interface_x: float | None = None,
    A: float = 0.01,
    f: float = 210e3,
    T: float = 2.4e-5,
    dt: float = 1e-9,
) -> Scenario:
    """Test case 2 channel split at ``interface_x`` into two media; cut-off pulse excitation.

    Cells are tagged by centroid, so the interface follows the mesh faces.
    """
    H = 0.02
    L = 3.0 / sqrt(3.0) * 0.02
    xi = 0.5 * L if interface_x is None else interface_x
    g, gdot = _channel_boundary(f, A, H, cutoff=True)

    def tagger(centroids):
        return ["A" if cx < xi else "B" for cx in np.asarray(centroids)[:, 0]]

    mat = region_a.replace(regions={"A": region_a, "B": region_b})
    return Scenario(
        name="piecewise_material",
        domain=Rectangle(0.0, 0.0, L, H),
        material=mat,
        T=T,
        boundary=g,
        boundary_dot=gdot,
        boundary_terms=_channel_terms(f, A, H, cutoff=True),
        integrator=dict(
            scheme="generalized_alpha", beta_nm=4 / 9, gamma_nm=5 / 6, alpha_m=0.0, alpha_f=1 / 3, tol=1e-5, kappa_max=100
        ),
        penalty=250.0,
        dt=dt,
        cell_tagger=tagger,
    )


def pressure_field(psidot, space, mat: MaterialParams) -> np.ndarray:
    """Coefficients of ``u = rho psidot`` using the density of each cell's region."""
    rho = mat.cellwise(space.mesh).rho
    return np.asarray(psidot, float) * np.repeat(rho, space.n_loc)


SCENARIOS = {
    "test_case_1": test_case_1,
    "test_case_2": test_case_2,
    "piecewise_material": piecewise_material_2d,
}
