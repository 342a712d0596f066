"""Discrete shapes: triangle meshes and polylines.

Meshes and polylines are immutable once built.  Edges are stored in canonical
direction (lower vertex index first); every downstream sign convention is
derived from that single choice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

AREA_EPS = 1e-12
LENGTH_EPS = 1e-12


class MeshError(ValueError):
    """Invalid mesh or polyline data."""


class ObjParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(np.flatnonzero((t < 0).any(1) | (t >= len(v)).any(1))[0])
            raise MeshError(f"triangle {bad} has a vertex index out of range")
        if len(t):
            areas2 = np.sum(_tri_cross(v, t) ** 2, axis=1)
            bad = np.flatnonzero(areas2 < 4 * AREA_EPS**2)
            if len(bad):
                raise MeshError(f"triangle {int(bad[0])} is degenerate (zero area)")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh(vertices, self.triangles)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


def _tri_cross(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return np.cross(b - a, c - a)


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray
    segments: np.ndarray
    incident: tuple = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        s = np.asarray(self.segments, dtype=np.int64).reshape(-1, 2)
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if s.size and (s.min() < 0 or s.max() >= len(v)):
            raise MeshError("segment vertex index out of range")
        if len(s):
            lengths = np.linalg.norm(v[s[:, 1]] - v[s[:, 0]], axis=1)
            bad = np.flatnonzero(lengths < LENGTH_EPS)
            if len(bad):
                raise MeshError(f"segment {int(bad[0])} has zero length")
        inc: list[list[int]] = [[] for _ in range(len(v))]
        for k, (i, j) in enumerate(s):
            inc[i].append(k)
            inc[j].append(k)
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "segments", _frozen(s))
        object.__setattr__(self, "incident", tuple(tuple(x) for x in inc))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Polyline":
        return Polyline(vertices, self.segments)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass(frozen=True)
class EdgeTable:
    """Unique edges of a mesh.

    ``edges[e]`` is the canonical pair (low, high).  ``adjacency[e]`` lists the
    triangles containing the edge; ``forward[e][t]`` is True when that triangle
    traverses the edge low -> high.
    """

    edges: np.ndarray
    adjacency: tuple
    forward: tuple
    midpoints: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency_counts(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)


def build_edge_table(mesh: TriangleMesh, strict: bool = True) -> EdgeTable:
    t = mesh.triangles
    nt = len(t)
    # directed half-edges (a -> b) of every triangle, in winding order
    a = t[:, [0, 1, 2]].ravel()
    b = t[:, [1, 2, 0]].ravel()
    tri = np.repeat(np.arange(nt), 3)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    order = np.lexsort((tri, hi, lo))
    lo, hi, tri, fwd = lo[order], hi[order], tri[order], (a < b)[order]
    if len(lo):
        new = np.ones(len(lo), dtype=bool)
        new[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        starts = np.flatnonzero(new)
    else:
        starts = np.zeros(0, dtype=np.int64)
    ends = np.append(starts[1:], len(lo))
    edges = np.stack([lo[starts], hi[starts]], axis=1) if len(starts) else np.zeros((0, 2), np.int64)
    adjacency = tuple(tuple(int(x) for x in tri[s:e]) for s, e in zip(starts, ends))
    forward = tuple(tuple(bool(x) for x in fwd[s:e]) for s, e in zip(starts, ends))
    over = [k for k, adj in enumerate(adjacency) if len(adj) > 2]
    if over:
        e = edges[over[0]]
        msg = f"non-manifold edge ({e[0]}, {e[1]}) shared by {len(adjacency[over[0]])} triangles"
        if strict:
            raise MeshError(msg)
        log.warning("%s (%d such edges); keeping all adjacencies", msg, len(over))
    v = mesh.vertices
    midpoints = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]]) if len(edges) else np.zeros((0, 3))
    return EdgeTable(_frozen(edges), adjacency, forward, _frozen(midpoints))


@dataclass(frozen=True)
class BoundaryInfo:
    vertices: tuple
    incident_edges: dict

    def __len__(self):
        return len(self.vertices)


def boundary_vertices(mesh: TriangleMesh, edges: EdgeTable) -> BoundaryInfo:
    """Boundary vertices and, for each, every mesh edge incident to it."""
    counts = edges.adjacency_counts()
    bnd_edges = edges.edges[counts == 1]
    verts = sorted(set(int(x) for x in bnd_edges.ravel()))
    vset = set(verts)
    incident: dict[int, list[int]] = {k: [] for k in verts}
    for e, (i, j) in enumerate(edges.edges):
        if int(i) in vset:
            incident[int(i)].append(e)
        if int(j) in vset:
            incident[int(j)].append(e)
    return BoundaryInfo(tuple(verts), {k: tuple(v) for k, v in incident.items()})


@dataclass(frozen=True)
class OrientationReport:
    offending_edges: tuple

    @property
    def consistent(self) -> bool:
        return not self.offending_edges


def check_orientation(mesh: TriangleMesh, edges: EdgeTable | None = None) -> OrientationReport:
    if edges is None:
        edges = build_edge_table(mesh, strict=False)
    bad = []
    for e, fwd in enumerate(edges.forward):
        if len(fwd) == 2 and fwd[0] == fwd[1]:
            bad.append((int(edges.edges[e, 0]), int(edges.edges[e, 1])))
    return OrientationReport(tuple(bad))


def euler_characteristic(mesh: TriangleMesh, edges: EdgeTable | None = None) -> int:
    if edges is None:
        edges = build_edge_table(mesh)
    used = len(np.unique(mesh.triangles))
    return used - edges.n_edges + mesh.n_triangles


# --------------------------------------------------------------------------- I/O


def _parse_floats(tokens, lineno):
    try:
        vals = [float(x) for x in tokens]
    except ValueError:
        raise ObjParseError(f"malformed numeric field in {' '.join(tokens)!r}", lineno) from None
    if not all(math.isfinite(x) for x in vals):
        raise ObjParseError("non-finite coordinate", lineno)
    return vals


def _parse_index(token: str, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(f"malformed index {token!r}", lineno) from None
    if idx < 1:
        raise ObjParseError(f"index {idx} out of range", lineno)
    return idx - 1


def _read_records(path, want: str):
    verts, elems = [], []
    with open(path, encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise ObjParseError("vertex needs 3 coordinates", lineno)
                verts.append(_parse_floats(tokens[1:4], lineno))
            elif tag == want:
                elems.append(([_parse_index(tok, lineno) for tok in tokens[1:]], lineno))
    return verts, elems


def load_obj(path) -> TriangleMesh:
    verts, faces = _read_records(path, "f")
    nv = len(verts)
    tris = []
    for idx, lineno in faces:
        if len(idx) < 3:
            raise ObjParseError("face has fewer than 3 vertices", lineno)
        if max(idx) >= nv:
            raise ObjParseError(f"index {max(idx) + 1} out of range ({nv} vertices)", lineno)
        for k in range(1, len(idx) - 1):
            tris.append((idx[0], idx[k], idx[k + 1]))
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_polyline(path) -> Polyline:
    verts, segs = _read_records(path, "l")
    nv = len(verts)
    pairs = []
    for idx, lineno in segs:
        if len(idx) < 2:
            raise ObjParseError("line element needs 2 vertices", lineno)
        if max(idx) >= nv:
            raise ObjParseError(f"index {max(idx) + 1} out of range ({nv} vertices)", lineno)
        pairs.extend(zip(idx[:-1], idx[1:]))
    return Polyline(np.array(verts, dtype=float).reshape(-1, 3), np.array(pairs, dtype=np.int64).reshape(-1, 2))


def save_polyline(curve: Polyline, path) -> None:
    lines = ["v %.17g %.17g %.17g" % tuple(v) for v in curve.vertices]
    lines += ["l %d %d" % tuple(s + 1) for s in curve.segments]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_shape(path):
    """Load an OBJ mesh, or a polyline if the file holds ``l`` records only."""
    with open(path, encoding="ascii") as fh:
        tags = {ln.split(None, 1)[0] for ln in fh if ln.strip()}
    if "l" in tags and "f" not in tags:
        return load_polyline(path)
    return load_obj(path)


# --------------------------------------------------------------------- generators


def _orient_outward(v: np.ndarray, t: np.ndarray, center=None) -> np.ndarray:
    center = v.mean(axis=0) if center is None else center
    n = _tri_cross(v, t)
    c = v[t].mean(axis=1) - center
    flip = np.sum(n * c, axis=1) < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def _icosphere(subdivisions: int):
    phi = (1 + 5**0.5) / 2
    v = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
         (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
         (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def _geodesic_sphere(frequency: int):
    """Icosahedron with every face split into ``frequency**2`` triangles."""
    base_v, base_f = _icosphere(0)
    nu = frequency
    pts, tris = [], []
    for a, b, c in base_f:
        A, B, C = base_v[a], base_v[b], base_v[c]
        local = {}
        for i in range(nu + 1):
            for j in range(nu + 1 - i):
                local[i, j] = len(pts)
                pts.append((A * (nu - i - j) + B * i + C * j) / nu)
        for i in range(nu):
            for j in range(nu - i):
                tris.append((local[i, j], local[i + 1, j], local[i, j + 1]))
                if i + j < nu - 1:
                    tris.append((local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
    P = np.array(pts)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    # shared edge points are generated once per face; merge them
    _, first, inv = np.unique(np.round(P, 9), axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return P[first[order]], remap[inv.ravel()][np.array(tris, dtype=np.int64)]


def _uv_sphere(rings: int, segments: int):
    if rings < 2 or segments < 3:
        raise MeshError("uv sphere needs rings >= 2 and segments >= 3")
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, rings):
        th = math.pi * i / rings
        for j in range(segments):
            ph = 2 * math.pi * j / segments
            verts.append((math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append((0, ring(1, j), ring(1, j + 1)))
        faces.append((south, ring(rings - 1, j + 1), ring(rings - 1, j)))
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, d), (a, d, b)]
    return np.array(verts), np.array(faces, dtype=np.int64)


def _concentrate(v: np.ndarray, factor: float) -> np.ndarray:
    """Conformal warp of the unit sphere pulling vertices toward +z."""
    if factor == 1.0:
        return v
    if factor <= 0:
        raise MeshError("concentrate must be positive")
    pole = v[:, 2] < -1 + 1e-12  # fixed point of the warp
    w = v[~pole, :2] / (1.0 + v[~pole, 2:3]) / factor
    r2 = np.sum(w**2, axis=1, keepdims=True)
    out = np.array(v, dtype=float)
    out[~pole] = np.hstack([2 * w, 1 - r2]) / (1 + r2)
    out[pole] = (0.0, 0.0, -1.0)
    return out


def _sphere(params):
    if "rings" in params or "segments" in params:
        v, t = _uv_sphere(int(params.get("rings", 12)), int(params.get("segments", 24)))
    elif "frequency" in params:
        freq = int(params["frequency"])
        if freq < 1:
            raise MeshError("frequency must be >= 1")
        v, t = _geodesic_sphere(freq)
    else:
        sub = int(params.get("subdivisions", 2))
        if sub < 0:
            raise MeshError("subdivisions must be >= 0")
        v, t = _icosphere(sub)
    v = _concentrate(v, float(params.get("concentrate", 1.0)))
    return v * float(params.get("radius", 1.0)), t


def _torus(params):
    R = float(params.get("major_radius", 1.0))
    r = float(params.get("minor_radius", 0.35))
    nu = int(params.get("n_major", 24))
    nv = int(params.get("n_minor", 12))
    if nu < 3 or nv < 3 or not (0 < r < R):
        raise MeshError("torus needs n_major, n_minor >= 3 and 0 < minor_radius < major_radius")
    u = 2 * np.pi * np.arange(nu) / nu
    w = 2 * np.pi * np.arange(nv) / nv
    U, W = np.meshgrid(u, w, indexing="ij")
    verts = np.stack([(R + r * np.cos(W)) * np.cos(U), (R + r * np.cos(W)) * np.sin(U), r * np.sin(W)], -1).reshape(-1, 3)
    idx = lambda i, j: (i % nu) * nv + (j % nv)  # noqa: E731
    faces = []
    for i in range(nu):
        for j in range(nv):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    t = np.array(faces, dtype=np.int64)
    # the grid winding is already consistent; fix the global sign by enclosed volume
    v0, v1, v2 = verts[t[:, 0]], verts[t[:, 1]], verts[t[:, 2]]
    if np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() < 0:
        t = t[:, [0, 2, 1]]
    return verts, t


def _flat_disc(params):
    radius = float(params.get("radius", 1.0))
    rings = int(params.get("rings", 4))
    seg = int(params.get("segments", 16))
    if rings < 1 or seg < 3:
        raise MeshError("flat_disc needs rings >= 1 and segments >= 3")
    verts = [(0.0, 0.0, 0.0)]
    for i in range(1, rings + 1):
        rho = radius * i / rings
        for j in range(seg):
            ph = 2 * np.pi * j / seg
            verts.append((rho * np.cos(ph), rho * np.sin(ph), 0.0))
    ring = lambda i, j: 1 + (i - 1) * seg + (j % seg)  # noqa: E731
    faces = [(0, ring(1, j), ring(1, j + 1)) for j in range(seg)]
    for i in range(1, rings):
        for j in range(seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, d), (a, d, b)]
    return np.array(verts), np.array(faces, dtype=np.int64)


def _cube(params):
    n = int(params.get("resolution", 1))
    size = float(params.get("size", 1.0))
    if n < 1:
        raise MeshError("cube resolution must be >= 1")
    index: dict[tuple[int, int, int], int] = {}
    verts, faces = [], []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for axis in range(3):
        for side in (0, n):
            o1, o2 = [k for k in range(3) if k != axis]
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis], p[o1], p[o2] = side, i + di, j + dj
                        quad.append(vid(tuple(p)))
                    faces += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    v = (np.array(verts, float) / n - 0.5) * size
    t = _orient_outward(v, np.array(faces, dtype=np.int64), center=np.zeros(3))
    return v, t


SHAPE_KINDS = ("sphere", "ellipsoid", "torus", "flat_disc", "cube", "l_polyline", "line_polyline")
_SPHERE_PARAMS = {"subdivisions", "frequency", "rings", "segments", "concentrate", "radius"}
_SHAPE_PARAMS = {
    "sphere": _SPHERE_PARAMS,
    "ellipsoid": _SPHERE_PARAMS | {"axes"},
    "torus": {"major_radius", "minor_radius", "n_major", "n_minor"},
    "flat_disc": {"radius", "rings", "segments"},
    "cube": {"resolution", "size"},
    "line_polyline": {"n_vertices", "length"},
    "l_polyline": {"n_per_leg", "length"},
}


def make_shape(kind: str, seed: int = 0, **params):
    """Procedural test shapes.

    Surfaces are closed and outward-oriented (``flat_disc`` has a boundary and
    faces +z).  ``jitter`` adds seeded Gaussian noise of that amplitude to the
    vertices; ``concentrate`` > 1 clusters sphere/ellipsoid triangles near +z.
    """
    if kind not in SHAPE_KINDS:
        raise MeshError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    unknown = set(params) - _SHAPE_PARAMS[kind] - {"jitter"}
    if unknown:
        raise MeshError(f"unknown parameter(s) for {kind}: {', '.join(sorted(unknown))}")
    params = dict(params)
    jitter = float(params.pop("jitter", 0.0))
    if kind in ("sphere", "ellipsoid"):
        axes = params.pop("axes", (1.0, 1.0, 1.0)) if kind == "ellipsoid" else (1.0, 1.0, 1.0)
        v, t = _sphere(params)
        v = v * np.asarray(axes, dtype=float)
        t = _orient_outward(v, t, center=np.zeros(3))
    elif kind == "torus":
        v, t = _torus(params)
    elif kind == "flat_disc":
        v, t = _flat_disc(params)
    elif kind == "cube":
        v, t = _cube(params)
    elif kind == "line_polyline":
        n = int(params.get("n_vertices", 5))
        if n < 2:
            raise MeshError("line_polyline needs n_vertices >= 2")
        x = np.linspace(0.0, float(params.get("length", 1.0)), n)
        v = np.stack([x, np.zeros(n), np.zeros(n)], axis=1)
        return _jittered_curve(v, np.stack([np.arange(n - 1), np.arange(1, n)], 1), jitter, seed)
    elif kind == "l_polyline":
        n = int(params.get("n_per_leg", 4))
        length = float(params.get("length", 1.0))
        if n < 1:
            raise MeshError("l_polyline needs n_per_leg >= 1")
        s = np.linspace(0, length, n + 1)
        leg1 = np.stack([s[::-1], np.zeros(n + 1), np.zeros(n + 1)], 1)
        leg2 = np.stack([np.zeros(n), s[1:], np.zeros(n)], 1)
        v = np.vstack([leg1, leg2])
        m = len(v)
        return _jittered_curve(v, np.stack([np.arange(m - 1), np.arange(1, m)], 1), jitter, seed)
    else:
        raise MeshError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if jitter:
        v = v + jitter * np.random.default_rng(seed).standard_normal(v.shape)
    return TriangleMesh(v, t)


def _jittered_curve(v, segs, jitter, seed):
    if jitter:
        v = v + jitter * np.random.default_rng(seed).standard_normal(v.shape)
    return Polyline(v, segs)
