"""Polygonal meshes: generation, topology, sub-triangulation, quality and IO."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

__all__ = [
    "Rectangle",
    "Cell",
    "Face",
    "PolyMesh",
    "MeshQualityReport",
    "MeshError",
    "MeshFormatError",
    "polygon_area",
    "polygon_centroid",
    "polygon_diameter",
    "subtriangulate",
    "generate_hex_mesh",
    "generate_voronoi_mesh",
    "mesh_quality",
    "write_mesh",
    "read_mesh",
]


class MeshError(ValueError):
    """Invalid geometry or topology."""


class MeshFormatError(MeshError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(np.isfinite(vals)):
            raise MeshError("rectangle coordinates must be finite")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"degenerate rectangle {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]]
        )

    def side_of(self, p, q, tol: float) -> str | None:
        """Name of the rectangle side containing segment pq, if any."""
        for name, axis, value in (
            ("left", 0, self.x0),
            ("right", 0, self.x1),
            ("bottom", 1, self.y0),
            ("top", 1, self.y1),
        ):
            if abs(p[axis] - value) <= tol and abs(q[axis] - value) <= tol:
                return name
        return None


# ---------------------------------------------------------------------------
# polygon primitives


def polygon_area(xy: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise loops."""
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def polygon_diameter(xy: np.ndarray) -> float:
    """Maximum pairwise vertex distance."""
    d = xy[:, None, :] - xy[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _tri_signed_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def _segments_cross(p1, p2, p3, p4) -> bool:
    d1 = _tri_signed_area(p3, p4, p1)
    d2 = _tri_signed_area(p3, p4, p2)
    d3 = _tri_signed_area(p1, p2, p3)
    d4 = _tri_signed_area(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(xy: np.ndarray) -> bool:
    k = len(xy)
    for i in range(k):
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            if _segments_cross(xy[i], xy[(i + 1) % k], xy[j], xy[(j + 1) % k]):
                return False
    return True


def _ear_clip(xy: np.ndarray) -> np.ndarray:
    idx = list(range(len(xy)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(xy) ** 2:
            raise MeshError("ear clipping failed: polygon is not simple")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = xy[i0], xy[i1], xy[i2]
            if _tri_signed_area(a, b, c) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = xy[j]
                if (
                    _tri_signed_area(a, b, p) >= 0
                    and _tri_signed_area(b, c, p) >= 0
                    and _tri_signed_area(c, a, p) >= 0
                ):
                    inside = True
                    break
            if not inside:
                tris.append((a, b, c))
                del idx[k]
                break
        else:
            raise MeshError("ear clipping failed: no ear found")
    tris.append(tuple(xy[i] for i in idx))
    return np.array(tris, dtype=float)


# ---------------------------------------------------------------------------
# cells and faces


@dataclass(frozen=True)
class Cell:
    vertex_ids: tuple[int, ...]
    vertices: np.ndarray = field(repr=False)
    area: float
    diameter: float
    centroid: np.ndarray
    sub_triangles: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Face:
    endpoints: np.ndarray
    plus_cell: int
    minus_cell: int  # -1 on the boundary
    normal: np.ndarray
    length: float
    midpoint: np.ndarray
    boundary_tag: str | None

    @property
    def is_boundary(self) -> bool:
        return self.minus_cell < 0


def subtriangulate(cell_xy: np.ndarray, centroid: np.ndarray | None = None) -> np.ndarray:
    """Split a CCW polygon into triangles, shape ``(m, 3, 2)``.

    Uses a fan from the centroid when every fan triangle has positive area
    (the cell is star-shaped w.r.t. its centroid); otherwise falls back to
    ear clipping.
    """
    if isinstance(cell_xy, Cell):
        xy = cell_xy.vertices
    else:
        xy = np.asarray(cell_xy, dtype=float)
    if centroid is None:
        centroid = polygon_centroid(xy)
    nxt = np.roll(xy, -1, axis=0)
    tris = np.stack([np.broadcast_to(centroid, xy.shape), xy, nxt], axis=1)
    scale = polygon_diameter(xy) ** 2
    signed = 0.5 * (
        (tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
        - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1])
    )
    if np.all(signed > 1e-14 * scale):
        return tris
    # drop degenerate fan slivers from collinear vertices before giving up on the fan
    if np.all(signed > -1e-14 * scale) and np.any(signed > 0):
        return tris[signed > 1e-14 * scale]
    if not _is_simple(xy):
        raise MeshError("invalid cell: self-intersecting loop")
    return _ear_clip(xy)


class PolyMesh:
    """Immutable polygonal mesh with face topology.

    Parameters
    ----------
    vertices : (V, 2) array
    cells : sequence of vertex-index loops, counter-clockwise
    domain : bounding rectangle; boundary faces are tagged by the side they lie on
    boundary_tags : optional mapping ``frozenset({a, b}) -> tag`` overriding side names
    cell_tags : optional per-cell region labels (material regions)
    """

    def __init__(
        self,
        vertices,
        cells: Sequence[Sequence[int]],
        domain: Rectangle | None = None,
        boundary_tags: dict | None = None,
        cell_tags: Sequence[str] | None = None,
    ):
        self.vertices = np.array(vertices, dtype=float)
        self.vertices.setflags(write=False)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (V, 2)")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        nv = len(self.vertices)
        loops = []
        for ci, loop in enumerate(cells):
            loop = tuple(int(v) for v in loop)
            if len(loop) < 3:
                raise MeshError(f"cell {ci} has fewer than 3 vertices")
            if min(loop) < 0 or max(loop) >= nv:
                raise MeshError(f"cell {ci} references a nonexistent vertex")
            if len(set(loop)) != len(loop):
                raise MeshError(f"cell {ci} repeats a vertex")
            loops.append(loop)
        if not loops:
            raise MeshError("mesh has no cells")
        self.cells = tuple(loops)
        if domain is None:
            lo, hi = self.vertices.min(0), self.vertices.max(0)
            domain = Rectangle(lo[0], lo[1], hi[0], hi[1])
        self.domain = domain
        self.cell_tags = tuple(cell_tags) if cell_tags is not None else ("default",) * len(loops)
        if len(self.cell_tags) != len(loops):
            raise MeshError("cell_tags length mismatch")

        self._init_geometry()
        self._init_faces(boundary_tags or {})

    # -- construction helpers

    def _init_geometry(self):
        n = len(self.cells)
        self.n_vertices_per_cell = np.array([len(c) for c in self.cells])
        self.areas = np.empty(n)
        self.diameters = np.empty(n)
        self.centroids = np.empty((n, 2))
        self.bbox_lo = np.empty((n, 2))
        self.bbox_hi = np.empty((n, 2))
        subs = []
        for i, loop in enumerate(self.cells):
            xy = self.vertices[list(loop)]
            a = polygon_area(xy)
            if not a > 0:
                raise MeshError(f"cell {i} is not counter-clockwise or has zero area")
            if not _is_simple(xy):
                raise MeshError(f"cell {i} is self-intersecting")
            self.areas[i] = a
            self.diameters[i] = polygon_diameter(xy)
            self.centroids[i] = polygon_centroid(xy)
            self.bbox_lo[i] = xy.min(0)
            self.bbox_hi[i] = xy.max(0)
            subs.append(subtriangulate(xy, self.centroids[i]))
        self.sub_triangles = tuple(subs)
        for arr in (self.areas, self.diameters, self.centroids, self.bbox_lo, self.bbox_hi):
            arr.setflags(write=False)

    def _init_faces(self, boundary_tags):
        edges: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for ci, loop in enumerate(self.cells):
            k = len(loop)
            for j in range(k):
                a, b = loop[j], loop[(j + 1) % k]
                edges.setdefault((min(a, b), max(a, b)), []).append((ci, a, b))
        fv, fc, tags = [], [], []
        scale = max(self.domain.width, self.domain.height)
        for key in sorted(edges):
            uses = edges[key]
            if len(uses) == 1:
                ci, a, b = uses[0]
                fv.append((a, b))
                fc.append((ci, -1))
                tag = boundary_tags.get(frozenset(key))
                if tag is None:
                    tag = self.domain.side_of(
                        self.vertices[a], self.vertices[b], 1e-12 * scale
                    )
                    if tag is None:
                        raise MeshError(
                            f"boundary edge {key} of cell {ci} does not lie on the domain boundary"
                        )
                tags.append(tag)
            elif len(uses) == 2:
                (c1, a1, b1), (c2, a2, b2) = uses
                if not (a1 == b2 and b1 == a2):
                    raise MeshError(f"edge {key} has inconsistent orientation")
                if c1 == c2:
                    raise MeshError(f"edge {key} used twice by cell {c1}")
                fv.append((a1, b1))
                fc.append((c1, c2))
                tags.append(None)
            else:
                raise MeshError(f"edge {key} shared by more than two cells")
        self.face_vertices = np.array(fv, dtype=int)
        self.face_cells = np.array(fc, dtype=int)
        self.face_tags = tuple(tags)
        p = self.vertices[self.face_vertices[:, 0]]
        q = self.vertices[self.face_vertices[:, 1]]
        t = q - p
        self.face_lengths = np.sqrt((t**2).sum(1))
        # edges run CCW around the plus cell, so (ty, -tx) points outward
        self.face_normals = np.stack([t[:, 1], -t[:, 0]], axis=1) / self.face_lengths[:, None]
        self.face_midpoints = 0.5 * (p + q)
        self.interior_faces = np.flatnonzero(self.face_cells[:, 1] >= 0)
        self.boundary_faces = np.flatnonzero(self.face_cells[:, 1] < 0)
        for arr in (
            self.face_vertices,
            self.face_cells,
            self.face_lengths,
            self.face_normals,
            self.face_midpoints,
        ):
            arr.setflags(write=False)

    # -- accessors

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    def cell(self, i: int) -> Cell:
        loop = self.cells[i]
        return Cell(
            vertex_ids=loop,
            vertices=self.vertices[list(loop)],
            area=float(self.areas[i]),
            diameter=float(self.diameters[i]),
            centroid=self.centroids[i].copy(),
            sub_triangles=self.sub_triangles[i],
        )

    def face(self, f: int) -> Face:
        a, b = self.face_vertices[f]
        return Face(
            endpoints=self.vertices[[a, b]],
            plus_cell=int(self.face_cells[f, 0]),
            minus_cell=int(self.face_cells[f, 1]),
            normal=self.face_normals[f].copy(),
            length=float(self.face_lengths[f]),
            midpoint=self.face_midpoints[f].copy(),
            boundary_tag=self.face_tags[f],
        )

    def boundary_tag_map(self) -> dict:
        return {
            frozenset(map(int, self.face_vertices[f])): self.face_tags[f]
            for f in self.boundary_faces
        }

    def same_structure(self, other: "PolyMesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and self.cells == other.cells
            and np.array_equal(self.face_vertices, other.face_vertices)
            and np.array_equal(self.face_cells, other.face_cells)
            and self.face_tags == other.face_tags
            and self.cell_tags == other.cell_tags
        )

    def with_cell_tags(self, tags: Sequence[str]) -> "PolyMesh":
        return PolyMesh(self.vertices, self.cells, self.domain, self.boundary_tag_map(), tags)

    def __repr__(self):
        return f"PolyMesh(n_cells={self.n_cells}, n_faces={self.n_faces}, domain={self.domain})"


# ---------------------------------------------------------------------------
# generators


def _clip_halfplane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Clip a convex CCW polygon to ``{x : normal . x <= offset}``."""
    if len(poly) == 0:
        return poly
    s = poly @ normal - offset
    out = []
    k = len(poly)
    for i in range(k):
        j = (i + 1) % k
        si, sj = s[i], s[j]
        if si <= 0:
            out.append(poly[i])
        if (si < 0 < sj) or (sj < 0 < si):
            t = si / (si - sj)
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.empty((0, 2))


def _voronoi_cells(seeds: np.ndarray, domain: Rectangle) -> list[np.ndarray]:
    rect = domain.corners()
    if len(seeds) < 3:
        raise MeshError("need at least 3 seeds")
    tri = Delaunay(seeds)
    indptr, indices = tri.vertex_neighbor_vertices
    cells = []
    for i, s in enumerate(seeds):
        poly = rect
        for j in indices[indptr[i] : indptr[i + 1]]:
            d = seeds[j] - s
            poly = _clip_halfplane(poly, d, float(d @ (0.5 * (seeds[j] + s))))
        cells.append(poly)
    return cells


def _weld(polys: list[np.ndarray], domain: Rectangle, tol: float):
    allpts = np.concatenate(polys)
    tree = cKDTree(allpts)
    parent = np.arange(len(allpts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(tree.query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allpts))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    verts = allpts[uniq].copy()
    # snap onto the rectangle sides so boundary faces are exact
    for axis, value in ((0, domain.x0), (0, domain.x1), (1, domain.y0), (1, domain.y1)):
        near = np.abs(verts[:, axis] - value) <= tol
        verts[near, axis] = value
    loops = []
    pos = 0
    for poly in polys:
        ids = inverse[pos : pos + len(poly)]
        pos += len(poly)
        loop = []
        for v in ids:
            if not loop or loop[-1] != v:
                loop.append(int(v))
        while len(loop) > 1 and loop[0] == loop[-1]:
            loop.pop()
        loops.append(loop)
    # renumber to drop unused vertices
    used = sorted({v for loop in loops for v in loop})
    remap = {v: i for i, v in enumerate(used)}
    return verts[used], [[remap[v] for v in loop] for loop in loops]


def _mesh_from_seeds(seeds: np.ndarray, domain: Rectangle) -> PolyMesh:
    polys = _voronoi_cells(seeds, domain)
    scale = max(domain.width, domain.height)
    tol = 1e-10 * scale
    keep = [p for p in polys if len(p) >= 3 and polygon_area(p) > tol * scale]
    if len(keep) != len(polys):
        raise MeshError("Voronoi clipping produced empty cells")
    verts, loops = _weld(polys, domain, tol)
    for loop in loops:
        if len(loop) < 3:
            raise MeshError("welding collapsed a cell")
    return PolyMesh(verts, loops, domain)


def generate_voronoi_mesh(
    domain: Rectangle,
    n_seeds: int,
    lloyd_iters: int = 3,
    rng_seed: int = 0,
    max_retries: int = 10,
) -> PolyMesh:
    """Clipped Voronoi mesh of ``n_seeds`` random seeds, optionally Lloyd relaxed."""
    if n_seeds < 4:
        raise MeshError("n_seeds must be >= 4")
    if lloyd_iters < 0:
        raise MeshError("lloyd_iters must be >= 0")
    rng = np.random.default_rng(rng_seed)
    lo = np.array([domain.x0, domain.y0])
    ext = np.array([domain.width, domain.height])
    seeds = lo + rng.random((n_seeds, 2)) * ext
    return _relax_and_build(seeds, domain, lloyd_iters, rng, max_retries)


def _relax_and_build(seeds, domain, lloyd_iters, rng, max_retries):
    scale = max(domain.width, domain.height)
    min_sep = 1e-8 * scale
    for attempt in range(max_retries + 1):
        s = seeds.copy()
        try:
            for _ in range(lloyd_iters):
                polys = _voronoi_cells(s, domain)
                s = np.array([polygon_centroid(p) for p in polys])
            d, _ = cKDTree(s).query(s, k=2)
            if d[:, 1].min() < min_sep:
                raise MeshError("coincident seeds")
            return _mesh_from_seeds(s, domain)
        except (MeshError, ValueError, ZeroDivisionError) as exc:
            last = exc
            seeds = seeds + rng.normal(scale=1e-6 * scale, size=seeds.shape)
            lo = np.array([domain.x0, domain.y0])
            hi = np.array([domain.x1, domain.y1])
            seeds = np.clip(seeds, lo, hi)
    raise MeshError(f"could not build Voronoi mesh after {max_retries} retries: {last}")


def generate_hex_mesh(domain: Rectangle, n_rows: int) -> PolyMesh:
    """Regular hexagonal tiling of ``domain`` with boundary hexagons clipped.

    Seeds form a triangular lattice with ``n_rows + 1`` horizontal rows on
    ``y0, y0 + H/n_rows, ..., y1``; the lattice spacing is fixed by the row
    spacing so that interior cells are congruent regular hexagons.
    """
    if not isinstance(domain, Rectangle):
        raise MeshError("domain must be a Rectangle")
    if int(n_rows) != n_rows or n_rows < 2:
        raise MeshError("n_rows must be an integer >= 2")
    n_rows = int(n_rows)
    dy = domain.height / n_rows
    a = 2.0 * dy / np.sqrt(3.0)
    eps = 1e-9 * a
    pts = []
    for j in range(n_rows + 1):
        y = domain.y1 if j == n_rows else domain.y0 + j * dy
        off = 0.5 * a if j % 2 else 0.0
        i = 0
        while True:
            x = domain.x0 + off + i * a
            if x > domain.x1 + eps:
                break
            pts.append((min(x, domain.x1), y))
            i += 1
    seeds = np.array(pts)
    return _mesh_from_seeds(seeds, domain)


# ---------------------------------------------------------------------------
# quality


@dataclass(frozen=True)
class MeshQualityReport:
    h_max: float
    h_min: float
    h_ratio: float
    area_ratio: np.ndarray  # |K| / h_K^2 per cell
    max_vertices: int
    max_subtriangles: int
    flagged_cells: tuple[int, ...]
    tol: float

    def as_rows(self):
        yield ("h_max", self.h_max)
        yield ("h_min", self.h_min)
        yield ("h_ratio", self.h_ratio)
        yield ("min_area_ratio", float(self.area_ratio.min()))
        yield ("max_vertices", self.max_vertices)
        yield ("max_subtriangles", self.max_subtriangles)
        yield ("n_flagged", len(self.flagged_cells))


def mesh_quality(mesh: PolyMesh, tol: float = 0.05) -> MeshQualityReport:
    """Shape-regularity diagnostics; flags cells with ``|K| < tol * h_K^2``."""
    h = mesh.diameters
    ratio = mesh.areas / h**2
    return MeshQualityReport(
        h_max=float(h.max()),
        h_min=float(h.min()),
        h_ratio=float(h.max() / h.min()),
        area_ratio=ratio,
        max_vertices=int(mesh.n_vertices_per_cell.max()),
        max_subtriangles=max(len(t) for t in mesh.sub_triangles),
        flagged_cells=tuple(int(i) for i in np.flatnonzero(ratio < tol)),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# file IO


def write_mesh(mesh: PolyMesh, path) -> None:
    d = mesh.domain
    lines = ["polymesh 1", f"domain {d.x0:.17g} {d.y0:.17g} {d.x1:.17g} {d.y1:.17g}"]
    lines.append(f"vertices {len(mesh.vertices)}")
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(map(str, (len(c),) + c)) for c in mesh.cells]
    tags = [(f, mesh.face_tags[f]) for f in mesh.boundary_faces]
    lines.append(f"boundary_tags {len(tags)}")
    lines += [f"{mesh.face_vertices[f, 0]} {mesh.face_vertices[f, 1]} {t}" for f, t in tags]
    if any(t != "default" for t in mesh.cell_tags):
        lines.append(f"cell_tags {mesh.n_cells}")
        lines += list(mesh.cell_tags)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path) -> PolyMesh:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            s = lines[pos - 1].strip()
            if s and not s.startswith("#"):
                return s
        raise MeshFormatError("unexpected end of file", pos if lines else 1)

    def section(name):
        s = next_line()
        parts = s.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshFormatError(f"expected '{name} <count>', got {s!r}", pos)
        try:
            n = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad count {parts[1]!r}", pos) from None
        if n < 0:
            raise MeshFormatError("negative count", pos)
        return n

    if not any(line.strip() for line in lines):
        raise MeshFormatError("empty file", 1)
    if next_line() != "polymesh 1":
        raise MeshFormatError("missing 'polymesh 1' header", pos)
    s = next_line()
    domain = None
    if s.startswith("domain"):
        try:
            domain = Rectangle(*map(float, s.split()[1:5]))
        except (TypeError, ValueError) as exc:
            raise MeshFormatError(f"bad domain line: {exc}", pos) from None
    else:
        pos -= 1
    nv = section("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        s = next_line()
        parts = s.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[i] = float(parts[0]), float(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad vertex line {s!r}", pos) from None
    nc = section("cells")
    cells = []
    for _ in range(nc):
        s = next_line()
        try:
            parts = [int(t) for t in s.split()]
        except ValueError:
            raise MeshFormatError(f"bad cell line {s!r}", pos) from None
        if not parts or parts[0] != len(parts) - 1 or parts[0] < 3:
            raise MeshFormatError(f"cell vertex count mismatch in {s!r}", pos)
        if min(parts[1:]) < 0 or max(parts[1:]) >= nv:
            raise MeshFormatError("cell references a nonexistent vertex", pos)
        cells.append(parts[1:])
    btags = {}
    cell_tags = None
    if pos < len(lines) and any(line.strip() for line in lines[pos:]):
        nb = section("boundary_tags")
        for _ in range(nb):
            s = next_line()
            parts = s.split()
            try:
                a, b = int(parts[0]), int(parts[1])
                tag = parts[2]
            except (ValueError, IndexError):
                raise MeshFormatError(f"bad boundary tag line {s!r}", pos) from None
            btags[frozenset((a, b))] = tag
        if any(line.strip() for line in lines[pos:]):
            n = section("cell_tags")
            if n != nc:
                raise MeshFormatError("cell_tags count must equal cell count", pos)
            cell_tags = [next_line() for _ in range(n)]
    try:
        return PolyMesh(verts, cells, domain, btags, cell_tags)
    except MeshFormatError:
        raise
    except MeshError as exc:
        raise MeshFormatError(str(exc), pos) from None
