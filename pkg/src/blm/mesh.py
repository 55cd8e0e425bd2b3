"""
Triangular meshes of a rectangular channel with an optional rectangular
obstacle, plus the geometric fields the mixing-length laws need.

The generator produces a graded structured triangulation: grid lines are
placed on the channel and obstacle faces, spacing is fine next to the
obstacle and grows geometrically away from it, quads are split into two
triangles and cells covered by the obstacle are discarded.

Node numbering for quadratic fields is vertices first, followed by edge
midpoints in edge order (node ``nv + e`` is the midpoint of edge ``e``).
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

INFLOW, OUTFLOW, WALL, OBSTACLE = "inflow", "outflow", "wall", "obstacle"
TAGS = (INFLOW, OUTFLOW, WALL, OBSTACLE)
SOLID_TAGS = (WALL, OBSTACLE)


class MeshError(ValueError):
    """Raised for invalid geometry or malformed mesh data."""


@dataclass(frozen=True)
class Geometry:
    """Channel box with an optional obstacle box.

    Defaults reproduce the channel-past-a-square benchmark:
    channel ``[0, 4] x [0, 1]`` and obstacle ``[0.5, 0.6] x [0.45, 0.55]``.
    Pass ``obstacle_min=None`` for an empty channel.
    """

    channel_min: tuple[float, float] = (0.0, 0.0)
    channel_max: tuple[float, float] = (4.0, 1.0)
    obstacle_min: tuple[float, float] | None = (0.5, 0.45)
    obstacle_max: tuple[float, float] | None = (0.6, 0.55)

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.channel_min, self.channel_max
        if not (x1 > x0 and y1 > y0):
            raise MeshError(
                f"degenerate channel box {self.channel_min} - {self.channel_max}"
            )
        if (self.obstacle_min is None) != (self.obstacle_max is None):
            raise MeshError("obstacle_min and obstacle_max must be given together")
        if self.obstacle_min is not None:
            (a0, b0), (a1, b1) = self.obstacle_min, self.obstacle_max
            if not (a1 > a0 and b1 > b0):
                raise MeshError(
                    f"degenerate obstacle box {self.obstacle_min} - {self.obstacle_max}"
                )
            if not (x0 < a0 and a1 < x1 and y0 < b0 and b1 < y1):
                raise MeshError(
                    "obstacle must lie strictly inside the channel "
                    f"(obstacle {self.obstacle_min}-{self.obstacle_max}, "
                    f"channel {self.channel_min}-{self.channel_max})"
                )

    @classmethod
    def unit_square(cls) -> "Geometry":
        return cls((0.0, 0.0), (1.0, 1.0), None, None)

    @property
    def has_obstacle(self) -> bool:
        return self.obstacle_min is not None

    @property
    def area(self) -> float:
        (x0, y0), (x1, y1) = self.channel_min, self.channel_max
        a = (x1 - x0) * (y1 - y0)
        if self.has_obstacle:
            (a0, b0), (a1, b1) = self.obstacle_min, self.obstacle_max
            a -= (a1 - a0) * (b1 - b0)
        return a


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    edges : (ne, 2) int array of unique vertex pairs (sorted within a pair)
    tri_edges : (nt, 3) int array; ``tri_edges[t, k]`` is the edge joining
        local vertices ``k`` and ``(k + 1) % 3``
    boundary_edges : (nb,) int array of edge indices
    boundary_tags : (nb,) array of tag strings
    wall_distance : (nv + ne,) distance of every P2 node to the nearest
        wall or obstacle edge
    elem_width : (nt,) longest edge of each triangle
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    boundary_edges: np.ndarray = field(init=False)
    boundary_tags: np.ndarray = field(init=False)
    wall_distance: np.ndarray | None = field(init=False, default=None)
    elem_width: np.ndarray = field(init=False)
    name: str = "mesh"

    @classmethod
    def from_arrays(cls, vertices, triangles, boundary: Iterable[tuple[int, int, str]],
                    name: str = "mesh") -> "Mesh":
        """Build a mesh from raw connectivity and tagged boundary vertex pairs."""
        m = cls(np.asarray(vertices, dtype=float).reshape(-1, 2),
                np.asarray(triangles, dtype=np.int64).reshape(-1, 3), name=name)
        m._build_topology()
        m._attach_boundary(list(boundary))
        m.elem_width = compute_elem_width(m)
        if np.any(np.isin(m.boundary_tags, SOLID_TAGS)):
            m.wall_distance = compute_wall_distance(m)
        return m

    # -- topology ---------------------------------------------------------
    def _build_topology(self):
        nv = len(self.vertices)
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= nv):
            raise MeshError("triangle references a vertex index out of range")
        areas = signed_areas(self.vertices, tri)
        if np.any(areas <= 0.0):
            bad = int(np.flatnonzero(areas <= 0.0)[0])
            raise MeshError(f"triangle {bad} has non-positive signed area")
        local = np.stack([tri, np.roll(tri, -1, axis=1)], axis=2)  # (nt, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True,
                                           return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: an edge is shared by more than 2 triangles")
        self.edges = edges.astype(np.int64)
        self.tri_edges = inverse.reshape(-1, 3).astype(np.int64)
        self._edge_counts = counts

    def _attach_boundary(self, boundary):
        lookup = {tuple(e): k for k, e in enumerate(self.edges.tolist())}
        idx, tags = [], []
        for i, j, tag in boundary:
            if tag not in TAGS:
                raise MeshError(f"unknown boundary tag {tag!r}")
            key = (min(i, j), max(i, j))
            if key not in lookup:
                raise MeshError(f"boundary pair ({i}, {j}) is not a mesh edge")
            e = lookup[key]
            if self._edge_counts[e] != 1:
                raise MeshError(f"boundary pair ({i}, {j}) is an interior edge")
            idx.append(e)
            tags.append(tag)
        idx = np.asarray(idx, dtype=np.int64)
        if len(np.unique(idx)) != len(idx):
            raise MeshError("boundary edge tagged more than once")
        topo = np.flatnonzero(self._edge_counts == 1)
        if set(topo.tolist()) != set(idx.tolist()):
            raise MeshError(
                f"{len(topo) - len(idx)} topological boundary edges carry no tag")
        self.boundary_edges = idx
        self.boundary_tags = np.asarray(tags, dtype=object)

    # -- convenience ------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_p2_nodes(self) -> int:
        return self.n_vertices + self.n_edges

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def p2_nodes(self) -> np.ndarray:
        """Coordinates of vertices followed by edge midpoints."""
        mid = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        return np.vstack([self.vertices, mid])

    @property
    def edge_triangle_counts(self) -> np.ndarray:
        return self._edge_counts.copy()

    def boundary_pairs(self):
        """Yield ``(i, j, tag)`` for each boundary edge."""
        for e, tag in zip(self.boundary_edges, self.boundary_tags):
            i, j = self.edges[e]
            yield int(i), int(j), str(tag)

    def boundary_nodes(self, tags: Iterable[str]) -> np.ndarray:
        """P2 node indices (endpoints and midpoints) on edges with the given tags."""
        sel = self.boundary_edges[np.isin(self.boundary_tags, list(tags))]
        nodes = np.concatenate([self.edges[sel].ravel(), self.n_vertices + sel])
        return np.unique(nodes)

    def segments(self, tags: Iterable[str]) -> np.ndarray:
        """(k, 2, 2) endpoint coordinates of boundary edges with the given tags."""
        sel = self.boundary_edges[np.isin(self.boundary_tags, list(tags))]
        return self.vertices[self.edges[sel]]

    def with_tags(self, mapping: dict[str, str]) -> "Mesh":
        """Copy of the mesh with boundary tags renamed by ``mapping``."""
        pairs = [(i, j, mapping.get(t, t)) for i, j, t in self.boundary_pairs()]
        return Mesh.from_arrays(self.vertices, self.triangles, pairs, name=self.name)


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def compute_elem_width(mesh: Mesh) -> np.ndarray:
    """Longest edge length of every triangle."""
    p = mesh.vertices[mesh.triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return lengths.max(axis=1)


def distance_to_segments(points: np.ndarray, segments: np.ndarray,
                         chunk: int = 4096) -> np.ndarray:
    """Euclidean distance from each point to the nearest of the segments."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(segments) == 0:
        raise MeshError("no segments to measure distance against")
    a = segments[:, 0][None]
    ab = (segments[:, 1] - segments[:, 0])[None]
    ab2 = np.einsum("ijk,ijk->ij", ab, ab)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk, None, :]
        t = np.clip(np.einsum("ijk,ijk->ij", p - a, ab) / ab2, 0.0, 1.0)
        d = p - (a + t[..., None] * ab)
        out[s:s + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", d, d)).min(axis=1)
    return out


def compute_wall_distance(mesh: Mesh, points: np.ndarray | None = None) -> np.ndarray:
    """Distance to the nearest wall or obstacle edge.

    Inflow and outflow edges are not solid and are ignored. Evaluated at the
    P2 nodes unless ``points`` is given. Nodes lying on a solid edge get
    exactly zero.
    """
    segs = mesh.segments(SOLID_TAGS)
    if len(segs) == 0:
        raise MeshError("mesh has no wall- or obstacle-tagged edges")
    if points is not None:
        return distance_to_segments(points, segs)
    d = distance_to_segments(mesh.p2_nodes, segs)
    d[mesh.boundary_nodes(SOLID_TAGS)] = 0.0
    return d


# -- generation -----------------------------------------------------------

def _graded_spacing(length: float, h_start: float, h_max: float, growth: float,
                    ) -> np.ndarray:
    """Cell sizes growing from ``h_start`` to at most ``h_max`` covering ``length``."""
    if h_start >= h_max or growth <= 1.0:
        n = max(1, math.ceil(length / h_max - 1e-12))
        return np.full(n, length / n)
    sizes = []
    h = h_start
    while sum(sizes) < length - 1e-12:
        sizes.append(min(h, h_max))
        h *= growth
    sizes = np.asarray(sizes)
    return sizes * (length / sizes.sum())


def _axis_nodes(lo: float, hi: float, obs: tuple[float, float] | None,
                h_coarse: float, h_fine: float, growth: float) -> np.ndarray:
    if obs is None:
        n = max(1, math.ceil((hi - lo) / h_coarse - 1e-12))
        return np.linspace(lo, hi, n + 1)
    a, b = obs
    n_mid = max(1, math.ceil((b - a) / h_fine - 1e-12))
    mid = np.linspace(a, b, n_mid + 1)
    left = _graded_spacing(a - lo, h_fine, h_coarse, growth)
    right = _graded_spacing(hi - b, h_fine, h_coarse, growth)
    left_nodes = a - np.concatenate([[0.0], np.cumsum(left)])[::-1]
    right_nodes = b + np.concatenate([[0.0], np.cumsum(right)])
    left_nodes[0], right_nodes[-1] = lo, hi
    return np.concatenate([left_nodes[:-1], mid, right_nodes[1:]])


def generate_channel_mesh(geometry: Geometry | None = None, target_h: float = 0.125,
                          refine_factor: float = 1.0, growth: float = 1.25,
                          name: str | None = None) -> Mesh:
    """Graded structured triangulation of the channel minus the obstacle.

    Parameters
    ----------
    geometry : Geometry, optional
        Defaults to the benchmark channel with its square obstacle.
    target_h : float
        Upper bound on the element width (longest edge) away from the obstacle.
    refine_factor : float
        Elements touching the obstacle have width at most
        ``target_h / refine_factor``.
    growth : float
        Geometric growth ratio of the grid spacing away from the obstacle.
    """
    geometry = Geometry() if geometry is None else geometry
    if not target_h > 0:
        raise MeshError(f"target_h must be positive, got {target_h}")
    if not refine_factor >= 1:
        raise MeshError(f"refine_factor must be >= 1, got {refine_factor}")
    # a cell split along its diagonal has width sqrt(dx^2 + dy^2)
    h_coarse = target_h / math.sqrt(2.0)
    h_fine = h_coarse / refine_factor
    (x0, y0), (x1, y1) = geometry.channel_min, geometry.channel_max
    obs_x = obs_y = None
    if geometry.has_obstacle:
        obs_x = (geometry.obstacle_min[0], geometry.obstacle_max[0])
        obs_y = (geometry.obstacle_min[1], geometry.obstacle_max[1])
    xs = _axis_nodes(x0, x1, obs_x, h_coarse, h_fine, growth)
    ys = _axis_nodes(y0, y1, obs_y, h_coarse, h_fine, growth)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange(nx * ny).reshape(nx, ny)

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    keep = np.ones(len(i), dtype=bool)
    if geometry.has_obstacle:
        cx = 0.5 * (xs[i] + xs[i + 1])
        cy = 0.5 * (ys[j] + ys[j + 1])
        keep = ~((cx > obs_x[0]) & (cx < obs_x[1]) & (cy > obs_y[0]) & (cy < obs_y[1]))
    i, j = i[keep], j[keep]
    v00, v10 = vid[i, j], vid[i + 1, j]
    v01, v11 = vid[i, j + 1], vid[i + 1, j + 1]
    tris = np.concatenate([np.column_stack([v00, v10, v11]),
                           np.column_stack([v00, v11, v01])])

    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    tris = remap[tris]

    m = Mesh(verts, tris, name=name or "channel")
    m._build_topology()
    bnd = np.flatnonzero(m._edge_counts == 1)
    mids = 0.5 * (verts[m.edges[bnd, 0]] + verts[m.edges[bnd, 1]])
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    pairs = []
    for e, (mx, my) in zip(bnd, mids):
        if abs(mx - x0) < tol:
            tag = INFLOW
        elif abs(mx - x1) < tol:
            tag = OUTFLOW
        elif abs(my - y0) < tol or abs(my - y1) < tol:
            tag = WALL
        else:
            tag = OBSTACLE
        pairs.append((int(m.edges[e, 0]), int(m.edges[e, 1]), tag))
    m._attach_boundary(pairs)
    m.elem_width = compute_elem_width(m)
    m.wall_distance = compute_wall_distance(m)
    return m


# -- text format ----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_mesh(mesh: Mesh, stream: TextIO | None = None) -> str | None:
    """Write ``mesh`` in the ``mesh2d 1`` text format.

    Returns the text when no stream is given.
    """
    out = io.StringIO() if stream is None else stream
    out.write("mesh2d 1\n")
    out.write(f"vertices {mesh.n_vertices}\n")
    for x, y in mesh.vertices:
        out.write(f"{_fmt(x)} {_fmt(y)}\n")
    out.write(f"triangles {mesh.n_triangles}\n")
    for a, b, c in mesh.triangles:
        out.write(f"{a} {b} {c}\n")
    pairs = list(mesh.boundary_pairs())
    out.write(f"boundary {len(pairs)}\n")
    for i, j, tag in pairs:
        out.write(f"{i} {j} {tag}\n")
    return out.getvalue() if stream is None else None


def load_mesh(stream: TextIO | str, orientation: str = "reject", name: str = "mesh") -> Mesh:
    """Parse the ``mesh2d 1`` text format.

    Parameters
    ----------
    stream : file-like or str
        Text to parse.
    orientation : {"reject", "fix"}
        What to do with clockwise triangles: raise, or reorient with a warning.
    """
    if orientation not in ("reject", "fix"):
        raise ValueError(f"orientation must be 'reject' or 'fix', got {orientation!r}")
    text = stream if isinstance(stream, str) else stream.read()
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append((lineno, s.split()))
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshError("unexpected end of mesh file")
        item = lines[pos]
        pos += 1
        return item

    def section(keyword):
        ln, tok = take()
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshError(f"line {ln}: expected '{keyword} <count>'")
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshError(f"line {ln}: bad count {tok[1]!r}") from None
        if n < 0:
            raise MeshError(f"line {ln}: negative count")
        return n

    ln, tok = take()
    if tok != ["mesh2d", "1"]:
        raise MeshError(f"line {ln}: malformed header, expected 'mesh2d 1'")

    nv = section("vertices")
    verts = np.empty((nv, 2))
    for k in range(nv):
        ln, tok = take()
        try:
            if len(tok) != 2:
                raise ValueError
            verts[k] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"line {ln}: expected 'x y'") from None
        if not np.all(np.isfinite(verts[k])):
            raise MeshError(f"line {ln}: non-finite coordinate")

    nt = section("triangles")
    tris = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        ln, tok = take()
        try:
            if len(tok) != 3:
                raise ValueError
            tri = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"line {ln}: expected 'i j k'") from None
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshError(f"line {ln}: vertex index out of range [0, {nv})")
        area = signed_areas(verts, np.asarray([tri]))[0]
        if area == 0.0:
            raise MeshError(f"line {ln}: degenerate triangle with zero area")
        if area < 0.0:
            if orientation == "reject":
                raise MeshError(f"line {ln}: clockwise triangle (non-positive area)")
            warnings.warn(f"line {ln}: clockwise triangle reoriented", stacklevel=2)
            tri = [tri[0], tri[2], tri[1]]
        tris[k] = tri

    nb = section("boundary")
    pairs = []
    for _ in range(nb):
        ln, tok = take()
        try:
            if len(tok) != 3:
                raise ValueError
            i, j = int(tok[0]), int(tok[1])
        except ValueError:
            raise MeshError(f"line {ln}: expected 'i j TAG'") from None
        if not (0 <= i < nv and 0 <= j < nv):
            raise MeshError(f"line {ln}: vertex index out of range [0, {nv})")
        if tok[2] not in TAGS:
            raise MeshError(f"line {ln}: unknown boundary tag {tok[2]!r}")
        pairs.append((i, j, tok[2]))
    if pos != len(lines):
        raise MeshError(f"line {lines[pos][0]}: trailing content after boundary section")
    return Mesh.from_arrays(verts, tris, pairs, name=name)
