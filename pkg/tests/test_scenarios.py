import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from westervelt_dg import scenarios as scn
from westervelt_dg.assembly import StabilizationParams, build_operators
from westervelt_dg.mesh import generate_hex_mesh
from westervelt_dg.space import DgSpace
from westervelt_dg.studies import run_level, setup_level
from westervelt_dg.time_integration import IntegratorConfig

PI = math.pi


def test_manufactured_residual_gate(tc1):
    assert scn.check_manufactured(tc1, n_samples=2000) <= 1e-10


def test_manufactured_gate_catches_bad_source(tc1):
    # the tempting 64 pi^3 k factor on the nonlinear bracket is wrong by two
    k = tc1.material.k

    def wrong(x, y, t):
        return tc1.source(x, y, t) - 64 * PI**3 * k * np.sin(4 * PI * t) * np.cos(4 * PI * t) * np.sin(4 * PI * x) ** 2

    bad = scn.Scenario(**{**tc1.__dict__, "source": wrong})
    with pytest.raises(ValueError, match="residual"):
        scn.check_manufactured(bad)


def test_residual_needs_second_derivatives():
    s = scn.test_case_2()
    with pytest.raises(ValueError):
        scn.westervelt_residual(s, 0.0, 0.0, 0.0)


def test_tc1_parameters(tc1):
    m = tc1.material
    assert (m.c, m.b, m.beta_a, m.rho, tc1.T) == (1.0, 1e-5, 1e-4, 1.0, 0.8)
    d = tc1.domain
    assert (d.x0, d.y0, d.x1) == (0.0, 0.0, 1.0)
    assert d.y1 == pytest.approx(2.0 / 3.0 * math.sqrt(3.0), rel=1e-15)


def test_tc1_source_at_zero(tc1):
    x = np.linspace(0, 1, 41)
    y = np.full_like(x, 0.3)
    assert np.allclose(tc1.source(x, y, 0.0), 64 * PI**3 * 1e-5 * np.sin(4 * PI * x), rtol=1e-14, atol=1e-18)


def test_tc1_c_one_kills_wave_speed_term():
    # with b = k = 0 only 16 pi^2 (c^2 - 1) remains, which vanishes at c = 1
    s = scn.test_case_1(b=0.0, beta_a=0.0)
    x, t = np.linspace(0, 1, 13), np.linspace(0, 0.8, 13)
    assert not np.any(s.source(x, 0 * x, t))
    s2 = scn.test_case_1(c=2.0, b=0.0, beta_a=0.0)
    assert np.allclose(s2.source(x, 0 * x, t), 48 * PI**2 * np.sin(4 * PI * t) * np.sin(4 * PI * x), atol=1e-12)


def test_tc1_initial_fields(tc1):
    x = np.linspace(0, 1, 21)
    y = np.linspace(0, 1, 21)
    assert not np.any(tc1.psi0(x, y))
    assert np.allclose(tc1.psi1(x, y), 4 * PI * np.sin(4 * PI * x))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1.15), st.floats(0, 0.8))
def test_tc1_boundary_is_exact_trace(x, y, t):
    s = scn.test_case_1()
    assert s.boundary(x, y, t, "left") == s.exact.psi(x, y, t)
    assert s.boundary_dot(x, y, t, "top") == s.exact.psidot(x, y, t)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1.15), st.floats(0, 0.8))
def test_separable_terms_agree(x, y, t):
    s = scn.test_case_1()
    f = sum(S(x, y) * T(t) for S, T in s.source_terms)
    assert f == pytest.approx(s.source(x, y, t), abs=1e-12)
    g = sum(G(x, y, "left") * T(t) for G, T, _ in s.boundary_terms)
    gd = sum(G(x, y, "left") * Td(t) for G, _, Td in s.boundary_terms)
    assert g == pytest.approx(s.boundary(x, y, t, "left"), abs=1e-14)
    assert gd == pytest.approx(s.boundary_dot(x, y, t, "left"), abs=1e-12)


def test_exact_derivatives_consistent(tc1):
    ex = tc1.exact
    rng = np.random.default_rng(3)
    x, y, t = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50), rng.uniform(0.01, 0.79, 50)
    e = 1e-6
    assert np.allclose((ex.psi(x, y, t + e) - ex.psi(x, y, t - e)) / (2 * e), ex.psidot(x, y, t), atol=1e-6)
    assert np.allclose((ex.psi(x + e, y, t) - ex.psi(x - e, y, t)) / (2 * e), ex.grad_psi(x, y, t)[:, 0], atol=1e-6)
    assert np.allclose((ex.psidot(x, y, t + e) - ex.psidot(x, y, t - e)) / (2 * e), ex.psiddot(x, y, t), atol=1e-4)


# ---------------------------------------------------------------------------
# channel excitation


F0 = 210e3
A0 = 0.01


def test_tc2_parameters():
    s = scn.test_case_2()
    m = s.material
    assert (m.c, m.b, m.beta_a, m.rho) == (1500.0, 6e-9, 7.0, 1000.0)
    assert (s.T, s.dt) == (2.4e-5, 2e-9)
    assert s.domain.y1 == 0.02
    assert s.domain.x1 == pytest.approx(math.sqrt(3) * 0.02, rel=1e-15)
    assert s.source is None


def test_ramp_continuous_at_joint():
    tj = 2.0 / F0
    left = scn.temporal_ramp(np.nextafter(tj, 0), F0, A0)
    right = scn.temporal_ramp(tj, F0, A0)
    assert (F0 * tj / 2) ** 2 == pytest.approx(1.0, rel=1e-15)
    assert abs(left - right) < 1e-12 * A0
    # derivative jumps only by the ramp-factor slope times sin(omega t) = 0 there
    dl = scn.temporal_ramp_dot(np.nextafter(tj, 0), F0, A0)
    dr = scn.temporal_ramp_dot(tj, F0, A0)
    assert abs(dl - dr) < 1e-6 * A0 * 2 * PI * F0


def test_ramp_values():
    t = np.array([0.0, 1e-6, 5e-6, 2e-5])
    om = 2 * PI * F0
    exp = np.where(t < 2 / F0, (F0 * t / 2) ** 2, 1.0) * A0 * np.sin(om * t)
    assert np.allclose(scn.temporal_ramp(t, F0, A0), exp, rtol=1e-14, atol=0)
    cut = scn.temporal_ramp(t, F0, A0, cutoff=True)
    assert cut[-1] == 0.0 and cut[1] == scn.temporal_ramp(t, F0, A0)[1]


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 2.3e-5))
def test_ramp_derivative_matches_central_differences(t):
    tj = 2.0 / F0
    e = 1e-11
    if abs(t - tj) < 10 * e:
        return
    for cutoff in (False, True):
        fd = (scn.temporal_ramp(t + e, F0, A0, cutoff) - scn.temporal_ramp(t - e, F0, A0, cutoff)) / (2 * e)
        an = scn.temporal_ramp_dot(t, F0, A0, cutoff)
        # relative to the derivative scale A omega
        assert abs(fd - an) <= 1e-6 * A0 * 2 * PI * F0


def test_mollifier_window_values():
    w = scn.mollifier_window
    assert w(0.01) == 1.0
    assert w(0.005) == 1.0 and w(0.015) == 1.0
    assert w(0.0) == 0.0 and w(0.02) == 0.0
    assert w(0.0025) == pytest.approx(math.exp(1 - 1 / (1 - 0.25)), rel=1e-14)
    y = np.linspace(0, 0.02, 401)
    v = w(y)
    assert np.all((v >= 0) & (v <= 1))
    assert np.allclose(v, v[::-1], atol=1e-14)
    assert np.all(np.diff(v[:101]) >= 0)


def test_boundary_only_on_left_wall():
    s = scn.test_case_2()
    y = np.linspace(0, 0.02, 11)
    t = 3e-6
    assert np.allclose(s.boundary(0 * y, y, t, "left"), scn.mollifier_window(y) * scn.temporal_ramp(t, F0, A0))
    for tag in ("right", "top", "bottom"):
        assert not np.any(s.boundary(0 * y + 0.01, y, t, tag))
        assert not np.any(s.boundary_dot(0 * y + 0.01, y, t, tag))
    # initial compatibility: g(., 0) = 0 = psi0
    assert not np.any(s.boundary(0 * y, y, 0.0, "left"))


def test_tc2_separable_terms_agree():
    s = scn.test_case_2()
    y = np.linspace(0, 0.02, 17)
    for t in (0.0, 4e-6, 1.5e-5):
        for tag in ("left", "top"):
            g = sum(G(0 * y, y, tag) * T(t) for G, T, _ in s.boundary_terms)
            gd = sum(G(0 * y, y, tag) * Td(t) for G, _, Td in s.boundary_terms)
            assert np.array_equal(g, s.boundary(0 * y, y, t, tag))
            assert np.array_equal(gd, s.boundary_dot(0 * y, y, t, tag))


# ---------------------------------------------------------------------------
# defaults and the layered medium


def test_integrator_defaults():
    a = scn.test_case_1().integrator
    assert (a["scheme"], a["beta_nm"], a["gamma_nm"], a["tol"], a["kappa_max"]) == ("newmark", 0.25, 0.5, 1e-5, 100)
    assert scn.test_case_1().penalty == 10.0
    for s in (scn.test_case_2(), scn.piecewise_material_2d()):
        b = s.integrator
        assert (b["beta_nm"], b["gamma_nm"], b["alpha_m"], b["alpha_f"]) == (4 / 9, 5 / 6, 0.0, 1 / 3)
        assert (b["tol"], b["kappa_max"]) == (1e-5, 100)
    assert scn.test_case_2().penalty == 10.0
    assert scn.piecewise_material_2d().penalty == 250.0


def test_piecewise_regions():
    s = scn.piecewise_material_2d()
    A, B = s.material.medium_for("A"), s.material.medium_for("B")
    assert (A.c, A.b, A.beta_a, A.rho) == (1500.0, 6e-9, 5.0, 1000.0)
    assert (B.c, B.b, B.beta_a, B.rho) == (3000.0, 4e-9, 7.0, 2000.0)
    mesh = s.tag_mesh(generate_hex_mesh(s.domain, 6))
    xi = 0.5 * s.domain.x1
    for cx, tag in zip(mesh.centroids[:, 0], mesh.cell_tags):
        assert tag == ("A" if cx < xi else "B")
    assert {"A", "B"} == set(mesh.cell_tags)
    assert scn.temporal_ramp(3e-5, F0, A0, cutoff=True) == 0.0


def test_piecewise_identical_regions_match_uniform_bitwise():
    base = scn.test_case_2()
    m = base.material
    s = scn.piecewise_material_2d(region_a=m, region_b=m)
    mesh = s.tag_mesh(generate_hex_mesh(s.domain, 5))
    space = DgSpace(mesh, 2)
    stab = StabilizationParams(250.0, 2)
    pw = build_operators(space, s.material, stab)
    un = build_operators(space, m, stab)
    for name in ("K", "D", "P", "Kt"):
        a, b = getattr(pw, name), getattr(un, name)
        assert (a != b).nnz == 0, name
    assert np.array_equal(pw.M.blocks, un.M.blocks)
    v = np.random.default_rng(0).normal(size=space.n_dofs)
    assert np.array_equal(pw.nonlinear_mass(v).blocks, un.nonlinear_mass(v).blocks)


def test_pressure_field():
    s = scn.piecewise_material_2d()
    mesh = s.tag_mesh(generate_hex_mesh(s.domain, 4))
    space = DgSpace(mesh, 1)
    assert not np.any(scn.pressure_field(np.zeros(space.n_dofs), space, s.material))
    u = scn.pressure_field(np.full(space.n_dofs, 2.0), space, s.material)
    rho = np.repeat([1000.0 if t == "A" else 2000.0 for t in mesh.cell_tags], space.n_loc)
    assert np.array_equal(u, 2.0 * rho)
    tc1 = scn.test_case_1()
    sp1 = DgSpace(generate_hex_mesh(tc1.domain, 3), 1)
    v = np.arange(sp1.n_dofs, dtype=float)
    assert np.array_equal(scn.pressure_field(v, sp1, tc1.material), v)
    uni = DgSpace(generate_hex_mesh(scn.test_case_2().domain, 3), 0)
    assert np.array_equal(scn.pressure_field(np.full(uni.n_dofs, 2.0), uni, scn.test_case_2().material), np.full(uni.n_dofs, 2000.0))


def test_study_plan_needs_levels():
    with pytest.raises(ValueError):
        scn.StudyPlan(scn.test_case_1())
    assert scn.StudyPlan(scn.test_case_1(), levels=(8,)).generator == "hex"


def test_scenario_registry():
    assert set(scn.SCENARIOS) == {"test_case_1", "test_case_2", "piecewise_material"}
    for name, factory in scn.SCENARIOS.items():
        assert factory().name == name


def test_tc1_coarse_run_initial_residual_and_fp(tc1):
    mesh = generate_hex_mesh(tc1.domain, 6)
    lvl = setup_level(tc1, mesh, 2)
    u0, u1 = tc1.initial_data(lvl.space)
    assert not np.any(u0)
    cfg = IntegratorConfig(**tc1.integrator, dt=0.01, T=0.2)
    res = run_level(lvl, cfg)
    assert res.run.max_fp_iters <= 5
    assert res.errors.l2_error < 0.2
