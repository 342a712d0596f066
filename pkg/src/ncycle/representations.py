"""Dirac-delta representations of discrete shapes.

Every shape is turned into a finite sum of weighted deltas
``sum_i delta_{x_i} w_i`` so that kernel metrics reduce to double sums.
Surfaces and curves get their normal cycle; surfaces can also be encoded as
oriented-area currents (the first-order baseline).

Normal cycle of a triangulation (constant spherical kernel): the face part
vanishes, each edge carries a half-cylinder term at its midpoint and each
boundary vertex a sphere-portion term.  In R^6 = position x normal, the edge
term is ``(f/|f|, 0) ^ (0, sum_T f x beta_T)`` and lives in the nine mixed
wedge slots; the vertex term is the normal-factor bivector dual to
``sum_f f/|f|`` and lives in the three pure-normal slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exterior import MIXED_SLOTS, NORMAL_PAIR_SIGNS, NORMAL_PAIR_SLOTS, mixed_wedge, normal_bivector
from .geometry import MeshError, Polyline, TriangleMesh, boundary_vertices, build_edge_table

# Magnitudes fixed by matching the explicit pi^2/4 edge and boundary products;
# signs follow the half-cylinder / half-sphere orientation and cancel in
# every product since the two parts occupy disjoint slots.
CYLINDRICAL_SCALE = -math.pi / 2
SPHERICAL_SCALE = -math.pi / 2
CURVE_SCALE = math.pi / 2

KINDS = ("current_surface", "nc_surface", "nc_curve", "generic")
_KIND_WEIGHT_DIM = {"nc_surface": 15, "nc_curve": 3, "current_surface": 3}


@dataclass(frozen=True)
class DiracFunctional:
    points: np.ndarray
    weights: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        w = np.array(self.weights, dtype=float)
        if p.ndim != 2 or w.ndim != 2:
            raise ValueError("points and weights must be 2-D arrays")
        if len(p) != len(w):
            raise ValueError(f"row mismatch: {len(p)} points vs {len(w)} weights")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        k = _KIND_WEIGHT_DIM.get(self.kind)
        if k is not None and w.shape[1] != k:
            raise ValueError(f"kind {self.kind} needs weight dim {k}, got {w.shape[1]}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite entries in functional")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weight_dim(self) -> int:
        return self.weights.shape[1]

    def subset(self, indices) -> "DiracFunctional":
        idx = np.asarray(indices, dtype=np.int64)
        return DiracFunctional(self.points[idx], self.weights[idx], self.kind)

    def with_weights(self, weights) -> "DiracFunctional":
        return DiracFunctional(self.points, weights, self.kind)

    @classmethod
    def empty(cls, dim: int, weight_dim: int, kind: str = "generic") -> "DiracFunctional":
        return cls(np.zeros((0, dim)), np.zeros((0, weight_dim)), kind)

    # -- text format -------------------------------------------------------

    def to_text(self) -> str:
        head = f"# dirac-functional d={self.dim} k={self.weight_dim} n={self.n} kind={self.kind}"
        rows = np.hstack([self.points, self.weights])
        body = [" ".join("%.17g" % x for x in row) for row in rows]
        return "\n".join([head] + body) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="ascii")

    @classmethod
    def from_text(cls, text: str) -> "DiracFunctional":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# dirac-functional"):
            raise ValueError("missing '# dirac-functional' header")
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        try:
            d, k, n, kind = int(fields["d"]), int(fields["k"]), int(fields["n"]), fields["kind"]
        except (KeyError, ValueError) as exc:
            raise ValueError(f"bad header {lines[0]!r}") from exc
        body = [ln for ln in lines[1:] if ln.strip()]
        if len(body) != n:
            raise ValueError(f"header says n={n} but found {len(body)} rows")
        rows = np.zeros((n, d + k))
        for i, ln in enumerate(body):
            vals = ln.split()
            if len(vals) != d + k:
                raise ValueError(f"row {i + 1}: expected {d + k} numbers, got {len(vals)}")
            rows[i] = [float(x) for x in vals]
        return cls(rows[:, :d], rows[:, d:], kind)

    @classmethod
    def load(cls, path) -> "DiracFunctional":
        return cls.from_text(Path(path).read_text(encoding="ascii"))


def is_functional_file(path) -> bool:
    with open(path, encoding="ascii", errors="replace") as fh:
        return fh.readline().startswith("# dirac-functional")


# ------------------------------------------------------------------ currents


def currents_of_mesh(mesh: TriangleMesh) -> DiracFunctional:
    v, t = mesh.vertices, mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return DiracFunctional((a + b + c) / 3.0, 0.5 * np.cross(b - a, c - a), "current_surface")


# ---------------------------------------------------- surface normal cycles


def _unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / n, n


def _unit_vjp(u, norm, g):
    """Pull back ``g`` through ``x -> x/|x|``."""
    return (g - u * np.sum(u * g, axis=-1, keepdims=True)) / norm


class SurfaceNormalCycle:
    """Normal-cycle builder for a fixed triangulation topology.

    Edge tables and boundary structure are computed once; ``functional`` and
    ``vjp`` then only depend on vertex positions, which is what a deformation
    loop needs.
    """

    def __init__(self, triangles, n_vertices: int, strict: bool = True):
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.n_vertices = int(n_vertices)
        # topology only: a placeholder mesh with valid geometry is not needed
        probe = _TopologyView(self.triangles, self.n_vertices)
        et = build_edge_table(probe, strict=strict)
        self.edges = et.edges
        pe, pt = [], []
        for e, adj in enumerate(et.adjacency):
            for tri in adj:
                pe.append(e)
                pt.append(tri)
        self.pair_edge = np.array(pe, dtype=np.int64)
        self.pair_tri = np.array(pt, dtype=np.int64)
        bnd = boundary_vertices(probe, et)
        self.boundary = np.array(bnd.vertices, dtype=np.int64)
        # (boundary row, vertex, other end) for every incident edge
        br, bo = [], []
        for r, k in enumerate(bnd.vertices):
            for e in bnd.incident_edges[k]:
                i, j = self.edges[e]
                br.append(r)
                bo.append(j if i == k else i)
        self.bnd_row = np.array(br, dtype=np.int64)
        self.bnd_other = np.array(bo, dtype=np.int64)

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, strict: bool = True) -> "SurfaceNormalCycle":
        return cls(mesh.triangles, mesh.n_vertices, strict=strict)

    @property
    def n_deltas(self) -> int:
        return len(self.edges) + len(self.boundary)

    def _edge_parts(self, v):
        a, b = self.edges[:, 0], self.edges[:, 1]
        f = v[b] - v[a]
        fhat, flen = _unit(f)
        mid = 0.5 * (v[a] + v[b])
        t = self.triangles[self.pair_tri]
        x0, x1, x2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        e1, e2 = x1 - x0, x2 - x0
        nrm, nlen = _unit(np.cross(e1, e2))
        fh = fhat[self.pair_edge]
        beta, _ = _unit(np.cross(nrm, fh))
        inward = np.sum(beta * ((x0 + x1 + x2) / 3.0 - mid[self.pair_edge]), axis=1) < 0
        beta[inward] *= -1
        g = np.cross(f[self.pair_edge], beta)  # = |f| * (+/- unit normal of T)
        sign = np.where(np.sum(g * nrm, axis=1) >= 0, 1.0, -1.0)
        m = np.zeros_like(f)
        np.add.at(m, self.pair_edge, g)
        return dict(f=f, fhat=fhat, flen=flen, mid=mid, e1=e1, e2=e2, nrm=nrm, nlen=nlen, sign=sign, m=m, t=t)

    def _vertex_parts(self, v):
        k = self.boundary[self.bnd_row]
        d = v[self.bnd_other] - v[k]
        u, ulen = _unit(d)
        A = np.zeros((len(self.boundary), 3))
        np.add.at(A, self.bnd_row, u)
        return dict(u=u, ulen=ulen, A=A, k=k)

    def functional(self, vertices) -> DiracFunctional:
        v = np.asarray(vertices, dtype=float)
        ep = self._edge_parts(v)
        vp = self._vertex_parts(v)
        w_cyl = CYLINDRICAL_SCALE * mixed_wedge(ep["fhat"], ep["m"])
        w_sph = SPHERICAL_SCALE * normal_bivector(vp["A"])
        points = np.vstack([ep["mid"], v[self.boundary]])
        return DiracFunctional(points, np.vstack([w_cyl, w_sph]), "nc_surface")

    def vjp(self, vertices, grad_points, grad_weights) -> np.ndarray:
        """Gradient w.r.t. vertices of ``<grad_points, P> + <grad_weights, W>``.

        Which side of an edge each triangle lies on is locally constant, so the
        inward sign is held fixed.
        """
        v = np.asarray(vertices, dtype=float)
        ne = len(self.edges)
        gP = np.asarray(grad_points, dtype=float)
        gW = np.asarray(grad_weights, dtype=float)
        out = np.zeros_like(v)
        a, b = self.edges[:, 0], self.edges[:, 1]

        # midpoints
        np.add.at(out, a, 0.5 * gP[:ne])
        np.add.at(out, b, 0.5 * gP[:ne])

        ep = self._edge_parts(v)
        G = CYLINDRICAL_SCALE * gW[:ne][:, MIXED_SLOTS.ravel()].reshape(-1, 3, 3)
        g_fhat = np.einsum("eij,ej->ei", G, ep["m"])
        g_m = np.einsum("eij,ei->ej", G, ep["fhat"])
        # m_e = |f| * sum_T sign_T * n_T
        U = ep["m"] / ep["flen"]
        g_flen = np.sum(g_m * U, axis=1, keepdims=True)
        g_f = _unit_vjp(ep["fhat"], ep["flen"], g_fhat) + ep["fhat"] * g_flen
        g_n = (ep["sign"][:, None] * ep["flen"][self.pair_edge]) * g_m[self.pair_edge]
        g_N = _unit_vjp(ep["nrm"], ep["nlen"], g_n)
        g_e1 = np.cross(ep["e2"], g_N)
        g_e2 = np.cross(g_N, ep["e1"])
        t = ep["t"]
        np.add.at(out, t[:, 1], g_e1)
        np.add.at(out, t[:, 2], g_e2)
        np.add.at(out, t[:, 0], -(g_e1 + g_e2))
        np.add.at(out, b, g_f)
        np.add.at(out, a, -g_f)

        if len(self.boundary):
            np.add.at(out, self.boundary, gP[ne:])
            vp = self._vertex_parts(v)
            g_A = SPHERICAL_SCALE * gW[ne:][:, NORMAL_PAIR_SLOTS] * NORMAL_PAIR_SIGNS
            g_d = _unit_vjp(vp["u"], vp["ulen"], g_A[self.bnd_row])
            np.add.at(out, self.bnd_other, g_d)
            np.add.at(out, vp["k"], -g_d)
        return out


class _TopologyView:
    """Duck-typed stand-in for TriangleMesh carrying connectivity only."""

    def __init__(self, triangles, n_vertices):
        self.triangles = triangles
        self.vertices = np.zeros((n_vertices, 3))


def normal_cycle_of_mesh(mesh: TriangleMesh, strict: bool = True) -> DiracFunctional:
    return SurfaceNormalCycle.from_mesh(mesh, strict=strict).functional(mesh.vertices)


# ------------------------------------------------------- curve normal cycles


class CurveNormalCycle:
    """One delta per vertex, weighted by the sum of outward unit edges."""

    def __init__(self, segments, n_vertices: int):
        s = np.asarray(segments, dtype=np.int64).reshape(-1, 2)
        # each segment contributes once to each endpoint, pointing away from it
        self.owner = np.concatenate([s[:, 0], s[:, 1]])
        self.other = np.concatenate([s[:, 1], s[:, 0]])
        self.n_vertices = int(n_vertices)

    @classmethod
    def from_curve(cls, curve: Polyline) -> "CurveNormalCycle":
        return cls(curve.segments, curve.n_vertices)

    @property
    def n_deltas(self) -> int:
        return self.n_vertices

    def functional(self, vertices) -> DiracFunctional:
        v = np.asarray(vertices, dtype=float)
        u, _ = _unit(v[self.other] - v[self.owner])
        A = np.zeros_like(v)
        np.add.at(A, self.owner, u)
        return DiracFunctional(v, CURVE_SCALE * A, "nc_curve")

    def vjp(self, vertices, grad_points, grad_weights) -> np.ndarray:
        v = np.asarray(vertices, dtype=float)
        out = np.array(grad_points, dtype=float, copy=True)
        u, ulen = _unit(v[self.other] - v[self.owner])
        g_d = _unit_vjp(u, ulen, CURVE_SCALE * np.asarray(grad_weights)[self.owner])
        np.add.at(out, self.other, g_d)
        np.add.at(out, self.owner, -g_d)
        return out


def normal_cycle_of_curve(curve: Polyline) -> DiracFunctional:
    return CurveNormalCycle.from_curve(curve).functional(curve.vertices)


def normal_cycle_builder(shape, strict: bool = True):
    if isinstance(shape, TriangleMesh):
        return SurfaceNormalCycle.from_mesh(shape, strict=strict)
    if isinstance(shape, Polyline):
        return CurveNormalCycle.from_curve(shape)
    raise TypeError(f"unsupported shape type {type(shape).__name__}")


def normal_cycle(shape, strict: bool = True) -> DiracFunctional:
    return normal_cycle_builder(shape, strict=strict).functional(shape.vertices)

