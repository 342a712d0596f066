"""Gaussian RKHS machinery on Dirac functionals.

All double sums run over fixed row blocks: each block produces per-row partial
sums in a fixed order, and blocks write into pre-assigned slots.  Results are
therefore identical for any number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import Polyline, TriangleMesh, boundary_vertices, build_edge_table
from .representations import DiracFunctional

# entries per block (rows * cols); bounds temporary memory independent of n*m
BLOCK_ENTRIES = 4096 * 4096 // 8

_threads = 1


def set_threads(n: int) -> None:
    """Cap the number of worker threads used for row-block evaluation."""
    global _threads
    if n < 1:
        raise ValueError("threads must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class GaussianKernel:
    """``k(x, y) = exp(-|x - y|^2 / (2 sigma^2))``."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and positive, got {self.sigma}")

    @property
    def sigmas(self) -> tuple:
        return (self.sigma,)


@dataclass(frozen=True)
class GaussianKernelSum:
    """Sum of unit-weight Gaussians, one per length scale."""

    sigmas: tuple

    def __post_init__(self):
        s = tuple(float(x) for x in self.sigmas)
        if not s or not all(math.isfinite(x) and x > 0 for x in s):
            raise ValueError("need at least one finite positive sigma")
        object.__setattr__(self, "sigmas", s)


def sqdist(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = np.zeros((len(X), len(Y)))
    for d in range(X.shape[1]):
        diff = X[:, d, None] - Y[None, :, d]
        out += diff * diff
    return out


def _gram_from_sq(kernel, D2) -> np.ndarray:
    if len(kernel.sigmas) == 1:
        return np.exp(-D2 / (2.0 * kernel.sigmas[0] ** 2))
    K = np.zeros_like(D2)
    for s in kernel.sigmas:
        K += np.exp(-D2 / (2.0 * s * s))
    return K


def gram(kernel, X, Y) -> np.ndarray:
    return _gram_from_sq(kernel, sqdist(X, Y))


def _row_blocks(n: int, m: int):
    rows = max(1, BLOCK_ENTRIES // max(m, 1))
    return [(s, min(s + rows, n)) for s in range(0, n, rows)]


def _map_blocks(fn, blocks):
    if _threads == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=_threads) as ex:
        return list(ex.map(fn, blocks))


def _check_pair(mu: DiracFunctional, nu: DiracFunctional):
    if mu.dim != nu.dim:
        raise ValueError(f"point dim mismatch: {mu.dim} vs {nu.dim}")
    if mu.weight_dim != nu.weight_dim:
        raise ValueError(f"weight dim mismatch: {mu.weight_dim} vs {nu.weight_dim}")


def dual_inner(kernel, mu: DiracFunctional, nu: DiracFunctional, compensated: bool = False) -> float:
    """``sum_ij k(x_i, y_j) <a_i, b_j>``."""
    _check_pair(mu, nu)
    if mu.n == 0 or nu.n == 0:
        return 0.0
    X, A, Y, B = mu.points, mu.weights, nu.points, nu.weights

    def block(rng):
        s, e = rng
        M = gram(kernel, X[s:e], Y) * (A[s:e] @ B.T)
        if compensated:
            return np.array([math.fsum(row) for row in M])
        return M.sum(axis=1)

    rows = np.concatenate(_map_blocks(block, _row_blocks(mu.n, nu.n)))
    return math.fsum(rows) if compensated else float(rows.sum())


def dual_norm_sq(kernel, mu: DiracFunctional) -> float:
    return dual_inner(kernel, mu, mu)


def dual_distance_sq(kernel, mu: DiracFunctional, nu: DiracFunctional, tol: float = 1e-12) -> float:
    _check_pair(mu, nu)
    mm, nn = dual_inner(kernel, mu, mu), dual_inner(kernel, nu, nu)
    d = mm - 2.0 * dual_inner(kernel, mu, nu) + nn
    if d < -tol * (1.0 + mm + nn):
        # only round-off may push a true square below zero
        raise FloatingPointError(f"negative squared distance {d:.3e}")
    return max(d, 0.0)


def dual_field_eval(kernel, mu: DiracFunctional, Q) -> np.ndarray:
    """Row ``j`` is ``sum_i k(q_j, x_i) a_i``."""
    Q = np.asarray(Q, dtype=float).reshape(-1, mu.dim)
    if mu.n == 0 or len(Q) == 0:
        return np.zeros((len(Q), mu.weight_dim))

    def block(rng):
        s, e = rng
        return gram(kernel, Q[s:e], mu.points) @ mu.weights

    return np.vstack(_map_blocks(block, _row_blocks(len(Q), mu.n)))


def _field_and_jacobian(kernel, P, A, Y, B):
    """Rows ``sum_j k(P_i, Y_j) B_j`` and ``sum_j grad_1 k(P_i, Y_j) <A_i, B_j>``."""

    def block(rng):
        s, e = rng
        D2 = sqdist(P[s:e], Y)
        AB = A[s:e] @ B.T
        field = np.zeros((e - s, B.shape[1]))
        # grad_1 k = -k (x - y) / sigma^2, summed over the kernel terms
        W = np.zeros_like(D2)
        for sig in kernel.sigmas:
            K = np.exp(-D2 / (2.0 * sig * sig))
            field += K @ B
            W += K / (sig * sig)
        W *= AB
        jac = -(W.sum(axis=1)[:, None] * P[s:e] - W @ Y)
        return field, jac

    parts = _map_blocks(block, _row_blocks(len(P), len(Y)))
    return np.vstack([f for f, _ in parts]), np.vstack([j for _, j in parts])


def dual_distance_sq_grad(kernel, mu: DiracFunctional, nu: DiracFunctional, nu_norm_sq: float | None = None):
    """``|mu - nu|^2`` and its gradient w.r.t. the points and weights of ``mu``.

    ``nu_norm_sq`` may be passed when ``nu`` is fixed across calls.
    """
    _check_pair(mu, nu)
    P, A = mu.points, mu.weights
    f_self, j_self = _field_and_jacobian(kernel, P, A, P, A)
    f_cross, j_cross = _field_and_jacobian(kernel, P, A, nu.points, nu.weights)
    mm = float(np.sum(A * f_self))
    mn = float(np.sum(A * f_cross))
    nn = dual_inner(kernel, nu, nu) if nu_norm_sq is None else nu_norm_sq
    value = max(mm - 2.0 * mn + nn, 0.0)
    grad_points = 2.0 * (j_self - j_cross)
    grad_weights = 2.0 * (f_self - f_cross)
    return value, grad_points, grad_weights


# ------------------------------------------------------- theorem-form oracles


def _edge_normal_sums(mesh: TriangleMesh):
    """Per unique edge: vector f (low -> high), centre, and sum of n_{T,f}."""
    et = build_edge_table(mesh)
    v = mesh.vertices
    f = v[et.edges[:, 1]] - v[et.edges[:, 0]]
    centres = et.midpoints
    nsum = np.zeros_like(f)
    for e, adj in enumerate(et.adjacency):
        i, j = et.edges[e]
        for tri in adj:
            t = mesh.triangles[tri]
            opp = v[[k for k in t if k != i and k != j][0]]
            n = np.cross(v[t[1]] - v[t[0]], v[t[2]] - v[t[0]])
            n /= np.linalg.norm(n)
            # n x f must point from the edge into T
            if np.dot(np.cross(n, f[e]), opp - centres[e]) < 0:
                n = -n
            nsum[e] += n
    return f, centres, nsum, et


def _boundary_edge_sums(mesh: TriangleMesh, et):
    bnd = boundary_vertices(mesh, et)
    v = mesh.vertices
    pts = np.zeros((len(bnd.vertices), 3))
    A = np.zeros((len(bnd.vertices), 3))
    for r, k in enumerate(bnd.vertices):
        pts[r] = v[k]
        for e in bnd.incident_edges[k]:
            i, j = et.edges[e]
            d = v[j if i == k else i] - v[k]
            A[r] += d / np.linalg.norm(d)
    return pts, A


def nc_inner_theorem_surface(kernel, mesh_a: TriangleMesh, mesh_b: TriangleMesh) -> float:
    """Explicit edge + boundary double-sum formula for the normal-cycle product."""
    f, c, nf, et_a = _edge_normal_sums(mesh_a)
    g, d, ng, et_b = _edge_normal_sums(mesh_b)
    edge_term = np.sum(gram(kernel, c, d) * (f @ g.T) * (nf @ ng.T))
    xa, Aa = _boundary_edge_sums(mesh_a, et_a)
    yb, Bb = _boundary_edge_sums(mesh_b, et_b)
    bnd_term = np.sum(gram(kernel, xa, yb) * (Aa @ Bb.T)) if len(xa) and len(yb) else 0.0
    return float(math.pi**2 / 4 * (edge_term + bnd_term))


def _curve_outward_sums(curve: Polyline) -> np.ndarray:
    v = curve.vertices
    A = np.zeros_like(v)
    for i, j in curve.segments:
        d = v[j] - v[i]
        d = d / np.linalg.norm(d)
        A[i] += d
        A[j] -= d
    return A


def nc_inner_theorem_curve(kernel, curve_a: Polyline, curve_b: Polyline) -> float:
    A = _curve_outward_sums(curve_a)
    B = _curve_outward_sums(curve_b)
    return float(math.pi**2 / 4 * np.sum(gram(kernel, curve_a.vertices, curve_b.vertices) * (A @ B.T)))


def currents_inner_direct(kernel, mesh_a: TriangleMesh, mesh_b: TriangleMesh) -> float:
    """Triangle-by-triangle currents product (area-weighted normals at centroids)."""

    def parts(mesh):
        v, t = mesh.vertices, mesh.triangles
        return v[t].mean(axis=1), 0.5 * np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])

    c1, n1 = parts(mesh_a)
    c2, n2 = parts(mesh_b)
    return float(np.sum(gram(kernel, c1, c2) * (n1 @ n2.T)))
