"""Periodic unit-cell geometry and conforming triangular meshes.

The cell is the unit square with solid inclusions removed.  Opposite sides of
the square carry identical boundary point sets so that periodic vertex pairs
match exactly; inclusion boundaries are polygons whose vertices lie on the
exact curve.  Element size grows with distance to the solid boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import triangle

from .errors import MeshError

logger = logging.getLogger(__name__)

# Boundary markers.
SOLID, LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float = 0.0  # radians

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_axes[0] * self.semi_axes[1])

    def point(self, t: np.ndarray) -> np.ndarray:
        a, b = self.semi_axes
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        x, y = a * np.cos(t), b * np.sin(t)
        return np.c_[self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]

    def level(self, pts: np.ndarray) -> np.ndarray:
        """Implicit function, zero on the curve and negative inside."""
        a, b = self.semi_axes
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        dx, dy = pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (u / a) ** 2 + (v / b) ** 2 - 1.0

    def boundary(self, spacing: float) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * np.pi, 4097)
        p = self.point(t)
        arc = np.r_[0.0, np.cumsum(np.hypot(*np.diff(p, axis=0).T))]
        count = max(16, int(np.ceil(arc[-1] / spacing)))
        ts = np.interp(np.linspace(0.0, arc[-1], count + 1)[:-1], arc, t)
        return self.point(ts)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.point(np.linspace(0, 2 * np.pi, 721))
        return p.min(axis=0), p.max(axis=0)


@dataclass(frozen=True)
class Rectangle:
    center: tuple[float, float]
    size: tuple[float, float]

    @property
    def area(self) -> float:
        return float(self.size[0] * self.size[1])

    def corners(self) -> np.ndarray:
        cx, cy = self.center
        hx, hy = self.size[0] / 2, self.size[1] / 2
        return np.array([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])

    def level(self, pts: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        hx, hy = self.size[0] / 2, self.size[1] / 2
        return np.maximum(np.abs(pts[:, 0] - cx) - hx, np.abs(pts[:, 1] - cy) - hy)

    def boundary(self, spacing: float) -> np.ndarray:
        c = self.corners()
        pieces = []
        for k in range(4):
            p, q = c[k], c[(k + 1) % 4]
            m = max(2, int(np.ceil(np.linalg.norm(q - p) / spacing)))
            s = np.linspace(0.0, 1.0, m + 1)[:-1]
            pieces.append(p + s[:, None] * (q - p))
        return np.vstack(pieces)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)


Inclusion = Ellipse | Rectangle


@dataclass(frozen=True)
class UnitCellGeometry:
    """Unit square minus solid inclusions; ``name`` labels the geometry in outputs."""

    inclusions: tuple[Inclusion, ...]
    name: str = "custom"
    min_gap: float = 1e-3

    def __post_init__(self) -> None:
        if self.porosity <= 0.0 or self.porosity > 1.0:
            raise MeshError(f"porosity {self.porosity:.4g} outside (0, 1]")
        for inc in self.inclusions:
            lo, hi = inc.bbox()
            if np.any(lo < self.min_gap) or np.any(hi > 1.0 - self.min_gap):
                raise MeshError("inclusions must lie strictly inside the unit cell")

    @property
    def porosity(self) -> float:
        return 1.0 - sum(inc.area for inc in self.inclusions)

    def inside_solid(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(len(pts), dtype=bool)
        for inc in self.inclusions:
            out |= inc.level(pts) < 0
        return out

    def distance_to_solid(self, pts: np.ndarray, spacing: float = 2e-3) -> np.ndarray:
        """Distance to the inclusion boundaries, including periodic images."""
        if not self.inclusions:
            return np.full(len(pts), np.inf)
        curve = np.vstack([inc.boundary(spacing) for inc in self.inclusions])
        shifts = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
        images = (curve[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
        d = np.full(len(pts), np.inf)
        for start in range(0, len(pts), 512):
            block = pts[start : start + 512]
            diff = block[:, None, :] - images[None, :, :]
            d[start : start + 512] = np.sqrt(np.min(np.einsum("pqk,pqk->pq", diff, diff), axis=1))
        return d


def ellipse_cell(porosity: float, aspect_ratio: float = 2.0, rotation_deg: float = 0.0) -> UnitCellGeometry:
    """Centered ellipse of the given aspect ratio whose area is 1 - porosity."""
    solid = 1.0 - porosity
    b = np.sqrt(solid / (np.pi * aspect_ratio))
    a = aspect_ratio * b
    inc = Ellipse((0.5, 0.5), (float(a), float(b)), float(np.deg2rad(rotation_deg)))
    return UnitCellGeometry((inc,), name="ellipse")


def rect_cell(porosity: float, aspect_ratio: float = 1.0) -> UnitCellGeometry:
    """Centered rectangle (square by default) whose area is 1 - porosity."""
    solid = 1.0 - porosity
    h = np.sqrt(solid / aspect_ratio)
    inc = Rectangle((0.5, 0.5), (float(aspect_ratio * h), float(h)))
    return UnitCellGeometry((inc,), name="rectangle")


@dataclass
class Mesh:
    """Triangulation of the fluid part of the unit cell.

    ``periodic_pairs`` rows are (slave, master) with the slave on the right or
    top side and its partner shifted by (1, 0) or (0, 1).  ``boundary_edges``
    rows are (a, b, marker).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    periodic_pairs: np.ndarray
    geometry: UnitCellGeometry | None = None
    _edges: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def fluid_area(self) -> float:
        return float(self.areas.sum())

    @property
    def solid_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_edges[:, 2] == SOLID, :2]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges (sorted vertex pairs) and the (nt, 3) triangle-to-edge map.

        Local edge k of a triangle joins local vertices k and (k+1) % 3.
        """
        if self._edges is None:
            t = self.triangles
            local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
            key = np.sort(local, axis=1)
            edges, inv = np.unique(key, axis=0, return_inverse=True)
            self._edges = (edges, inv.reshape(-1, 3))
        return self._edges

    def vertex_master(self) -> np.ndarray:
        """Representative vertex of each periodic equivalence class."""
        master = np.arange(self.num_vertices)
        if len(self.periodic_pairs):
            direct = master.copy()
            direct[self.periodic_pairs[:, 0]] = self.periodic_pairs[:, 1]
            for _ in range(3):
                master = direct[master]
        return master

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
        return float(np.min(angles))

    def edge_length_range(self) -> tuple[float, float]:
        e, _ = self.edges()
        length = np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)
        return float(length.min()), float(length.max())


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshSizing:
    """Far-field size ``coarse_size / 2**refine``; wall size ``wall_ratio`` times that."""

    coarse_size: float = 0.08
    wall_ratio: float = 0.15
    growth: float = 0.25
    refine: int = 0
    min_angle: float = 30.0

    @property
    def far_size(self) -> float:
        return self.coarse_size / 2**self.refine

    @property
    def wall_size(self) -> float:
        return self.wall_ratio * self.far_size

    def size_at(self, distance: np.ndarray) -> np.ndarray:
        return np.minimum(self.far_size, self.wall_size + self.growth * distance)


def _side_points(geometry: UnitCellGeometry, sizing: MeshSizing, axis: int) -> np.ndarray:
    """Parameters in [0, 1) along a side, shared by the side and its periodic image."""
    s = [0.0]
    while True:
        probe = np.array([[s[-1], 0.0], [s[-1], 1.0]]) if axis == 0 else np.array([[0.0, s[-1]], [1.0, s[-1]]])
        h = float(np.min(sizing.size_at(geometry.distance_to_solid(probe))))
        if s[-1] + 1.5 * h >= 1.0:
            break
        s.append(s[-1] + h)
    return np.array(s)


def _square_boundary(geometry: UnitCellGeometry, sizing: MeshSizing) -> np.ndarray:
    sx = _side_points(geometry, sizing, 0)
    sy = _side_points(geometry, sizing, 1)
    bottom = np.c_[sx, np.zeros_like(sx)]
    right = np.c_[np.ones_like(sy), sy]
    top = np.c_[np.r_[1.0, sx[:0:-1]], np.ones_like(sx)]
    left = np.c_[np.zeros_like(sy), np.r_[1.0, sy[:0:-1]]]
    return np.vstack([bottom, right, top, left])


def _loop_segments(start: int, count: int) -> np.ndarray:
    idx = np.arange(count) + start
    return np.c_[idx, np.roll(idx, -1)]


def build_cell(geometry: UnitCellGeometry, sizing: MeshSizing | None = None, max_passes: int = 8) -> Mesh:
    """Graded conforming triangulation of the fluid region of ``geometry``."""
    sizing = sizing or MeshSizing()
    square = _square_boundary(geometry, sizing)
    verts = [square]
    segs = [_loop_segments(0, len(square))]
    holes = []
    offset = len(square)
    for inc in geometry.inclusions:
        poly = inc.boundary(sizing.wall_size)
        verts.append(poly)
        segs.append(_loop_segments(offset, len(poly)))
        holes.append(inc.center)
        offset += len(poly)
    pslg = {"vertices": np.vstack(verts), "segments": np.vstack(segs)}
    if holes:
        pslg["holes"] = np.array(holes, dtype=float)
    far_area = np.sqrt(3.0) / 4.0 * sizing.far_size**2
    opts = f"pq{sizing.min_angle:g}a{far_area:.12g}Y"
    out = triangle.triangulate(pslg, opts)
    for _ in range(max_passes):
        p = out["vertices"][out["triangles"]]
        centroids = p.mean(axis=1)
        target = np.sqrt(3.0) / 4.0 * sizing.size_at(geometry.distance_to_solid(centroids)) ** 2
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.all(area <= 1.5 * target):
            break
        out["triangle_max_area"] = target
        out = triangle.triangulate(out, f"rpq{sizing.min_angle:g}aY")
    return _finalize(out["vertices"], out["triangles"], geometry)


def unit_square_mesh(n: int) -> Mesh:
    """Structured periodic triangulation of the full unit square (no inclusions)."""
    g = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(g, g, indexing="xy")
    verts = np.c_[x.ravel(), y.ravel()]
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.vstack([np.c_[a, b, c], np.c_[a, c, d]])
    return _finalize(verts, tris, UnitCellGeometry((), name="square"))


def _finalize(vertices: np.ndarray, triangles: np.ndarray, geometry: UnitCellGeometry | None) -> Mesh:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    # Orient counter-clockwise.
    p = vertices[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    # Drop vertices not used by any triangle.
    used = np.unique(triangles)
    if len(used) != len(vertices):
        remap = -np.ones(len(vertices), dtype=np.int64)
        remap[used] = np.arange(len(used))
        vertices, triangles = vertices[used], remap[triangles]

    mesh = Mesh(vertices, triangles, np.zeros((0, 3), dtype=np.int64), np.zeros((0, 2), dtype=np.int64), geometry)
    edges, t2e = mesh.edges()
    count = np.bincount(t2e.ravel(), minlength=len(edges))
    bnd = edges[count == 1]
    marker = np.full(len(bnd), SOLID, dtype=np.int64)
    both = lambda cond: cond(vertices[bnd[:, 0]]) & cond(vertices[bnd[:, 1]])  # noqa: E731
    marker[both(lambda v: v[:, 0] == 0.0)] = LEFT
    marker[both(lambda v: v[:, 0] == 1.0)] = RIGHT
    marker[both(lambda v: v[:, 1] == 0.0)] = BOTTOM
    marker[both(lambda v: v[:, 1] == 1.0)] = TOP
    mesh.boundary_edges = np.c_[bnd, marker]
    mesh.periodic_pairs = _periodic_pairs(vertices)
    return mesh


def _periodic_pairs(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    pairs = []
    lookup = {(float(a), float(b)): i for i, (a, b) in enumerate(vertices) if a in (0.0, 1.0) or b in (0.0, 1.0)}
    for i in np.flatnonzero(x == 1.0):
        j = lookup.get((0.0, float(y[i])))
        if j is None:
            raise MeshError(f"no periodic partner for vertex {i} at x=1, y={y[i]!r}")
        pairs.append((i, j))
    for i in np.flatnonzero((y == 1.0) & (x < 1.0)):
        j = lookup.get((float(x[i]), 0.0))
        if j is None:
            raise MeshError(f"no periodic partner for vertex {i} at y=1, x={x[i]!r}")
        pairs.append((i, j))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Validation and IO
# ---------------------------------------------------------------------------


@dataclass
class MeshReport:
    num_vertices: int
    num_triangles: int
    fluid_area: float
    porosity: float | None
    min_angle_deg: float
    min_edge: float
    max_edge: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_mesh(mesh: Mesh, area_tol: float = 5e-3, curve_tol: float = 1e-10, pair_tol: float = 1e-12) -> MeshReport:
    """Check orientation, periodic pairing, fluid area and boundary placement."""
    problems: list[str] = []
    areas = mesh.areas
    if np.any(areas <= 0):
        problems.append(f"{int(np.sum(areas <= 0))} triangles with nonpositive area")
    v = mesh.vertices
    pp = mesh.periodic_pairs
    if len(pp):
        offset = v[pp[:, 0]] - v[pp[:, 1]]
        good = (np.abs(offset - [1.0, 0.0]).max(axis=1) <= pair_tol) | (
            np.abs(offset - [0.0, 1.0]).max(axis=1) <= pair_tol
        )
        if not np.all(good):
            problems.append(f"{int(np.sum(~good))} periodic pairs with wrong offset")
        if len(np.unique(pp[:, 0])) != len(pp):
            problems.append("a periodic vertex has more than one partner")
    on_side = (v[:, 0] == 1.0) | (v[:, 1] == 1.0)
    paired = np.zeros(len(v), dtype=bool)
    paired[pp[:, 0]] = True
    if np.any(on_side & ~paired):
        problems.append(f"{int(np.sum(on_side & ~paired))} right/top vertices without partner")
    porosity = mesh.geometry.porosity if mesh.geometry is not None else None
    if porosity is not None and abs(mesh.fluid_area - porosity) > area_tol * porosity:
        problems.append(f"fluid area {mesh.fluid_area:.6f} differs from porosity {porosity:.6f}")
    if mesh.geometry is not None and mesh.geometry.inclusions:
        sv = np.unique(mesh.solid_edges)
        res = np.min(np.abs(np.stack([inc.level(v[sv]) for inc in mesh.geometry.inclusions])), axis=0)
        if np.any(res > curve_tol):
            problems.append(f"solid boundary vertices off the curve by up to {res.max():.2e}")
    emin, emax = mesh.edge_length_range()
    return MeshReport(mesh.num_vertices, mesh.num_triangles, mesh.fluid_area, porosity, mesh.min_angle_deg(), emin, emax, problems)


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    """Plain-text mesh dump with 17 significant digits."""
    lines = [f"vertices {mesh.num_vertices} / triangles {mesh.num_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    lines += [f"{a} {b} {m}" for a, b, m in mesh.boundary_edges]
    lines.append(f"periodic_pairs {len(mesh.periodic_pairs)}")
    lines += [f"{s} {m}" for s, m in mesh.periodic_pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path, geometry: UnitCellGeometry | None = None) -> Mesh:
    rows = Path(path).read_text().splitlines()
    head = rows[0].split()
    if len(head) != 5 or head[0] != "vertices" or head[3] != "triangles":
        raise MeshError(f"{path}: bad header {rows[0]!r}")
    nv, nt = int(head[1]), int(head[4])
    pos = 1
    verts = np.array([[float(t) for t in r.split()] for r in rows[pos : pos + nv]]).reshape(-1, 2)
    pos += nv
    tris = np.array([[int(t) for t in r.split()] for r in rows[pos : pos + nt]], dtype=np.int64).reshape(-1, 3)
    pos += nt
    blocks: dict[str, np.ndarray] = {}
    for name, width in (("boundary_edges", 3), ("periodic_pairs", 2)):
        tag, count = rows[pos].split()
        if tag != name:
            raise MeshError(f"{path}: expected block {name}, found {tag}")
        count = int(count)
        blocks[name] = np.array(
            [[int(t) for t in r.split()] for r in rows[pos + 1 : pos + 1 + count]], dtype=np.int64
        ).reshape(-1, width)
        pos += 1 + count
    return Mesh(verts, tris, blocks["boundary_edges"], blocks["periodic_pairs"], geometry)


def mesh_for(geometry: UnitCellGeometry, refine: int = 0, sizing: MeshSizing | None = None) -> Mesh:
    base = sizing or MeshSizing()
    return build_cell(geometry, MeshSizing(base.coarse_size, base.wall_ratio, base.growth, refine, base.min_angle))


def describe(mesh: Mesh) -> str:
    rep = validate_mesh(mesh)
    status = "ok" if rep.ok else "; ".join(rep.violations)
    return (
        f"{rep.num_vertices} vertices, {rep.num_triangles} triangles, fluid area {rep.fluid_area:.6f}, "
        f"min angle {rep.min_angle_deg:.1f} deg, edges [{rep.min_edge:.2e}, {rep.max_edge:.2e}]: {status}"
    )


__all__: Sequence[str] = [
    "Ellipse",
    "Rectangle",
    "UnitCellGeometry",
    "Mesh",
    "MeshSizing",
    "MeshReport",
    "ellipse_cell",
    "rect_cell",
    "build_cell",
    "unit_square_mesh",
    "validate_mesh",
    "write_mesh",
    "read_mesh",
    "mesh_for",
    "describe",
]
