import numpy as np
import pytest

from westervelt_dg.mesh import PolyMesh, Rectangle, generate_hex_mesh, generate_voronoi_mesh
from westervelt_dg.scenarios import test_case_1

TC1_DOMAIN = Rectangle(0.0, 0.0, 1.0, 2.0 / 3.0 * np.sqrt(3.0))


def unit_square() -> PolyMesh:
    return PolyMesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]])


def two_cells() -> PolyMesh:
    # unequal squares -> different h on either side of the shared face
    v = [[0, 0], [0.5, 0], [1.5, 0], [1.5, 1], [0.5, 1], [0, 1]]
    return PolyMesh(v, [[0, 1, 4, 5], [1, 2, 3, 4]])


def three_cells() -> PolyMesh:
    # a triangle, a quadrilateral and a pentagon with hanging-free topology
    v = [[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1], [0.4, 0.5]]
    cells = [[0, 1, 6], [1, 2, 3, 4, 6], [0, 6, 4, 5]]
    return PolyMesh(v, cells)


@pytest.fixture
def square():
    return unit_square()


@pytest.fixture
def pair():
    return two_cells()


@pytest.fixture
def triple():
    return three_cells()


@pytest.fixture(scope="session")
def hex_coarse():
    return generate_hex_mesh(TC1_DOMAIN, 8)


@pytest.fixture(scope="session")
def voronoi_coarse():
    return generate_voronoi_mesh(TC1_DOMAIN, 60, lloyd_iters=3, rng_seed=4)


@pytest.fixture(scope="session")
def tc1():
    return test_case_1()


def small_meshes():
    return [unit_square(), two_cells(), three_cells()]


def single_cell(xy) -> PolyMesh:
    """One-cell mesh of an arbitrary CCW polygon; every edge is tagged 'wall'."""
    k = len(xy)
    tags = {frozenset((i, (i + 1) % k)): "wall" for i in range(k)}
    return PolyMesh(xy, [list(range(k))], boundary_tags=tags)


# criterion number -> (passed, title, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
