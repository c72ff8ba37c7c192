import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TC1_DOMAIN, unit_square
from westervelt_dg.mesh import (
    MeshError,
    MeshFormatError,
    PolyMesh,
    Rectangle,
    generate_hex_mesh,
    generate_voronoi_mesh,
    mesh_quality,
    polygon_area,
    read_mesh,
    subtriangulate,
    write_mesh,
)
from westervelt_dg.quadrature import polygon_monomial_integral


def tri_area_sum(tris):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    return 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])).sum()


def check_invariants(mesh: PolyMesh):
    d = mesh.domain
    assert mesh.areas.sum() == pytest.approx(d.area, rel=1e-10)
    assert np.all(mesh.areas > 0)
    assert np.allclose(np.linalg.norm(mesh.face_normals, axis=1), 1.0, atol=1e-14)
    for c, tris in enumerate(mesh.sub_triangles):
        assert tri_area_sum(tris) == pytest.approx(mesh.areas[c], rel=1e-12)
    # each undirected edge of the complex appears exactly once among the faces
    edges = set()
    for loop in mesh.cells:
        for j in range(len(loop)):
            edges.add(frozenset((loop[j], loop[(j + 1) % len(loop)])))
    assert len(edges) == mesh.n_faces
    assert len({frozenset(f) for f in mesh.face_vertices.tolist()}) == mesh.n_faces
    for f in mesh.interior_faces:
        a, b = mesh.face_vertices[f]
        for c in mesh.face_cells[f]:
            assert a in mesh.cells[c] and b in mesh.cells[c]
    scale = max(d.width, d.height)
    for f in mesh.boundary_faces:
        p, q = mesh.vertices[mesh.face_vertices[f]]
        assert d.side_of(p, q, 1e-12 * scale) is not None
        # outward normal points away from the cell
        c = mesh.face_cells[f, 0]
        assert np.dot(mesh.face_midpoints[f] - mesh.centroids[c], mesh.face_normals[f]) > 0


def test_hex_mesh_invariants(hex_coarse):
    check_invariants(hex_coarse)
    assert hex_coarse.areas.sum() == pytest.approx(2.0 / 3.0 * np.sqrt(3.0), rel=1e-10)


def test_hex_interior_cells_congruent():
    mesh = generate_hex_mesh(TC1_DOMAIN, 12)
    hexes = mesh.n_vertices_per_cell == 6
    interior = np.array([all(mesh.face_cells[f, 1] >= 0 for f in _cell_faces(mesh, c)) for c in range(mesh.n_cells)])
    sel = hexes & interior
    assert sel.sum() > 20
    a = mesh.areas[sel]
    assert np.ptp(a) < 1e-12 * a.max()
    side = 2.0 / 3.0 * np.sqrt(3.0) / 12 * 2 / np.sqrt(3.0) / np.sqrt(3.0)
    assert a[0] == pytest.approx(1.5 * np.sqrt(3.0) * side**2, rel=1e-10)


def _cell_faces(mesh, c):
    return [f for f in range(mesh.n_faces) if c in mesh.face_cells[f]]


def test_hex_refinement_halves_h():
    h1 = generate_hex_mesh(TC1_DOMAIN, 8).diameters.max()
    h2 = generate_hex_mesh(TC1_DOMAIN, 16).diameters.max()
    assert 0.5 / 1.1 <= h2 / h1 <= 0.5 * 1.1


def test_hex_quality_ratio(hex_coarse):
    assert mesh_quality(hex_coarse).h_ratio <= 2.0


@pytest.mark.parametrize("size", [(0, 1), (1, 0)])
def test_degenerate_rectangle(size):
    with pytest.raises(ValueError):
        Rectangle(0, 0, *size)


def test_hex_rows_too_small():
    with pytest.raises(MeshError):
        generate_hex_mesh(TC1_DOMAIN, 1)


def test_four_seed_voronoi_gives_squares():
    seeds = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    from westervelt_dg.mesh import _mesh_from_seeds

    mesh = _mesh_from_seeds(seeds, Rectangle(0, 0, 1, 1))
    assert mesh.n_cells == 4
    assert np.allclose(mesh.areas, 0.25, atol=1e-14)
    assert mesh_quality(mesh).max_vertices == 4


def test_voronoi_criterion_count():
    mesh = generate_voronoi_mesh(TC1_DOMAIN, 281, lloyd_iters=3, rng_seed=0)
    assert mesh.n_cells == 281
    check_invariants(mesh)


def test_voronoi_deterministic():
    a = generate_voronoi_mesh(TC1_DOMAIN, 50, rng_seed=7)
    b = generate_voronoi_mesh(TC1_DOMAIN, 50, rng_seed=7)
    assert a.same_structure(b)
    c = generate_voronoi_mesh(TC1_DOMAIN, 50, rng_seed=8)
    assert not a.same_structure(c)


def test_voronoi_needs_four_seeds():
    with pytest.raises(MeshError):
        generate_voronoi_mesh(TC1_DOMAIN, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 80), st.integers(0, 3), st.integers(0, 2**16))
def test_voronoi_invariants_property(n, iters, seed):
    mesh = generate_voronoi_mesh(Rectangle(0, 0, 1.3, 0.7), n, lloyd_iters=iters, rng_seed=seed)
    assert mesh.n_cells == n
    check_invariants(mesh)


def test_quasi_uniform_sequence():
    for n in (6, 12, 24):
        assert mesh_quality(generate_hex_mesh(TC1_DOMAIN, n)).h_ratio <= 4
    for n in (60, 240):
        assert mesh_quality(generate_voronoi_mesh(TC1_DOMAIN, n, rng_seed=1)).h_ratio <= 4


def test_subtriangulate_square():
    tris = subtriangulate(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    assert len(tris) == 4
    areas = [tri_area_sum(t[None]) for t in tris]
    assert np.allclose(areas, 0.25)


def test_subtriangulate_hexagon():
    s = 0.3
    ang = np.arange(6) * np.pi / 3
    xy = s * np.stack([np.cos(ang), np.sin(ang)], 1)
    tris = subtriangulate(xy)
    assert len(tris) == 6
    for t in tris:
        assert tri_area_sum(t[None]) == pytest.approx(np.sqrt(3) / 4 * s**2, rel=1e-13)


def test_subtriangulate_voronoi_cells_vs_boundary_integral(voronoi_coarse):
    for c in range(voronoi_coarse.n_cells):
        xy = voronoi_coarse.vertices[list(voronoi_coarse.cells[c])]
        exact = polygon_monomial_integral(xy, 0, 0)
        assert tri_area_sum(subtriangulate(xy)) == pytest.approx(exact, rel=1e-12)


def test_non_star_shaped_falls_back_to_ear_clipping():
    # comb shape: the centroid is not in the kernel
    xy = np.array([[0, 0], [3, 0], [3, 1], [2.2, 1], [2.2, 0.1], [0.8, 0.1], [0.8, 1], [0, 1]], float)
    tris = subtriangulate(xy)
    assert len(tris) == len(xy) - 2
    assert tri_area_sum(tris) == pytest.approx(polygon_area(xy), rel=1e-12)


def test_unit_square_quality(square):
    q = mesh_quality(square)
    assert q.h_ratio == 1.0
    assert q.area_ratio[0] == pytest.approx(0.5)
    assert q.flagged_cells == ()
    assert all(np.isfinite(v) and v > 0 for k, v in q.as_rows() if k != "n_flagged")


def test_quality_flags_sliver():
    mesh = PolyMesh([[0, 0], [1, 0], [1, 0.02], [0, 0.02]], [[0, 1, 2, 3]])
    assert mesh_quality(mesh).flagged_cells == (0,)


def test_ccw_required():
    with pytest.raises(MeshError):
        PolyMesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 3, 2, 1]])


def test_roundtrip(tmp_path, voronoi_coarse):
    path = tmp_path / "m.txt"
    tagged = voronoi_coarse.with_cell_tags(["A" if i % 2 else "B" for i in range(voronoi_coarse.n_cells)])
    write_mesh(tagged, path)
    back = read_mesh(path)
    assert back.same_structure(tagged)
    assert np.array_equal(back.vertices, tagged.vertices)


def test_read_bad_vertex_reference(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("polymesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1 7\n")
    with pytest.raises(MeshFormatError) as ei:
        read_mesh(p)
    assert ei.value.lineno == 7


def test_read_empty_file(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(MeshFormatError):
        read_mesh(p)


def test_read_writes_full_precision(tmp_path):
    m = unit_square()
    v = np.array(m.vertices)
    v[2] = [1.0, 1.0 + 1e-15]
    v[3] = [0.0, 1.0 + 1e-15]
    m2 = PolyMesh(v, m.cells)
    write_mesh(m2, tmp_path / "p.txt")
    assert np.array_equal(read_mesh(tmp_path / "p.txt").vertices, m2.vertices)
