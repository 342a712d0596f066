"""Geodesic shooting of control-point momenta and normal-cycle matching.

The deformation is parametrized by initial momenta ``p0`` on fixed control
points ``q0``.  Hamilton's equations for
``H(q, p) = 1/2 sum_ij K_V(q_i, q_j) <p_i, p_j>`` are integrated with forward
Euler, and template vertices ride along the induced velocity field.  The
gradient of the matching energy is accumulated backwards through the very same
Euler steps, so it is exact for the discrete scheme.
"""

from __future__ import annotations

import logging
import math
import re
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search
from scipy.spatial import cKDTree

from .compression import RlsConfig, compress
from .geometry import Polyline, TriangleMesh
from .kernels import GaussianKernel, dual_distance_sq_grad, dual_inner
from .representations import DiracFunctional, normal_cycle_builder

log = logging.getLogger(__name__)

DEFAULT_SIGMAS = (1.0, 0.5, 0.2, 0.1)
HAUSDORFF_BRUTE_LIMIT = 10_000


@dataclass
class ShootingConfig:
    control_points: np.ndarray
    sigmas: tuple = DEFAULT_SIGMAS
    steps: int = 5
    reg_weight: float = 1.0

    def __post_init__(self):
        q = np.array(self.control_points, dtype=float)
        if q.ndim != 2 or q.shape[1] != 3 or len(q) < 1:
            raise ValueError("control_points must be an (m_c, 3) array with m_c >= 1")
        if not np.all(np.isfinite(q)):
            raise ValueError("control_points must be finite")
        self.control_points = q
        self.sigmas = tuple(float(s) for s in self.sigmas)
        if not self.sigmas or not all(math.isfinite(s) and s > 0 for s in self.sigmas):
            raise ValueError("all sigmas must be finite and positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        self.steps = int(self.steps)
        if not (math.isfinite(self.reg_weight) and self.reg_weight > 0):
            raise ValueError("reg_weight must be positive")

    @property
    def n_control(self) -> int:
        return len(self.control_points)


@dataclass(frozen=True)
class ShootingState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same shape")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("state must be finite")


@dataclass
class Trajectory:
    states: list  # ShootingState per time node, len = steps + 1
    passengers: list  # passenger positions per time node

    @property
    def final_passengers(self) -> np.ndarray:
        return self.passengers[-1]


def grid_control_points(points, per_axis: int = 3, spacing: float | None = None, margin: float = 0.0) -> np.ndarray:
    """Regular grid over the bounding box of ``points``.

    With ``spacing`` the grid step is fixed and the count per axis follows;
    otherwise ``per_axis`` nodes are placed along every axis.
    """
    P = np.asarray(points, dtype=float)
    lo = P.min(axis=0) - margin
    hi = P.max(axis=0) + margin
    axes = []
    for a, b in zip(lo, hi):
        if spacing is not None:
            if spacing <= 0:
                raise ValueError("spacing must be positive")
            k = max(1, int(math.floor((b - a) / spacing + 1e-9)) + 1)
            c = 0.5 * (a + b)
            axes.append(c + spacing * (np.arange(k) - 0.5 * (k - 1)))
        else:
            if per_axis < 1:
                raise ValueError("per_axis must be >= 1")
            axes.append(np.linspace(a, b, per_axis) if per_axis > 1 else np.array([0.5 * (a + b)]))
    G = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in G], axis=1)


# ---------------------------------------------------------------- kernels


def _diff_and_terms(X, Y, sigmas):
    """Differences ``X_i - Y_j`` and one Gaussian matrix per length scale."""
    R = X[:, None, :] - Y[None, :, :]
    D2 = np.einsum("ijk,ijk->ij", R, R)
    return R, [np.exp(-D2 / (2.0 * s * s)) for s in sigmas]


def _kv(X, Y, sigmas):
    return sum(_diff_and_terms(X, Y, sigmas)[1])


def hamiltonian(cfg: ShootingConfig, q, p) -> float:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError("q and p must have the same shape")
    return 0.5 * float(np.sum(_kv(q, q, cfg.sigmas) * (p @ p.T)))


def _step(q, p, x, sigmas, h):
    R, Ks = _diff_and_terms(q, q, sigmas)
    K = sum(Ks)
    W = sum(Kt / (s * s) for Kt, s in zip(Ks, sigmas))
    P = p @ p.T
    dq = K @ p
    dp = np.einsum("ij,ijk->ik", W * P, R)
    dx = _kv(x, q, sigmas) @ p if len(x) else np.zeros_like(x)
    return q + h * dq, p + h * dp, x + h * dx


def shoot_and_flow(cfg: ShootingConfig, p0, passengers=None) -> Trajectory:
    """Forward Euler on Hamilton's equations; passengers use pre-step velocities."""
    q = cfg.control_points
    p = np.array(p0, dtype=float).reshape(q.shape)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("p0 is not finite")
    x = np.zeros((0, 3)) if passengers is None else np.array(passengers, dtype=float).reshape(-1, 3)
    h = 1.0 / cfg.steps
    states, xs = [ShootingState(q, p)], [x]
    for k in range(cfg.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            q, p, x = _step(q, p, x, cfg.sigmas, h)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(x))):
            raise FloatingPointError(f"non-finite state after Euler step {k + 1}")
        states.append(ShootingState(q, p))
        xs.append(x)
    return Trajectory(states, xs)


def _step_vjp(q, p, x, gq, gp, gx, sigmas, h):
    """Pull (gq, gp, gx) at step k+1 back to step k."""
    R, Ks = _diff_and_terms(q, q, sigmas)
    K = sum(Ks)
    P = p @ p.T
    inv2 = [1.0 / (s * s) for s in sigmas]
    W = sum(Kt * c for Kt, c in zip(Ks, inv2))

    # q' = q + h K p
    C = gq @ p.T
    Csym = C + C.T
    hq = -np.einsum("ij,ijk->ik", W * Csym, R)
    hp = K @ gq

    # p' = p + h sum_j W_ij r_ij <p_i, p_j>
    Aij = np.einsum("ik,ijk->ij", gp, R)
    hp += (W * (Aij + Aij.T)) @ p
    Dsc = sum(Kt * c * c for Kt, c in zip(Ks, inv2)) * Aij * P
    D = (W * P)[:, :, None] * gp[:, None, :] - Dsc[:, :, None] * R
    hq += D.sum(axis=1) - D.sum(axis=0)

    gx_prev = gx
    if len(x):
        Rx, Kxs = _diff_and_terms(x, q, sigmas)
        Kx = sum(Kxs)
        Wx = sum(Kt * c for Kt, c in zip(Kxs, inv2))
        E = gx @ p.T
        Gx = -np.einsum("aj,ajk->ak", Wx * E, Rx)
        hq += np.einsum("aj,ajk->jk", Wx * E, Rx)
        hp += Kx.T @ gx
        gx_prev = gx + h * Gx
    return gq + h * hq, gp + h * hp, gx_prev


def _flow_vjp(cfg: ShootingConfig, traj: Trajectory, gx_final) -> np.ndarray:
    h = 1.0 / cfg.steps
    gq = np.zeros_like(cfg.control_points)
    gp = np.zeros_like(gq)
    gx = np.asarray(gx_final, dtype=float)
    for k in range(cfg.steps - 1, -1, -1):
        st = traj.states[k]
        gq, gp, gx = _step_vjp(st.q, st.p, traj.passengers[k], gq, gp, gx, cfg.sigmas, h)
    return gp


# ---------------------------------------------------------------- problem


_FROZEN_RE = re.compile(r"^frozen(?:_support)?[:(](\d+)\)?$")


def parse_template_compression(spec: str):
    """``none`` / ``target_only`` / ``frozen:<m>`` -> (mode, m)."""
    s = spec.strip().lower().replace("-", "_")
    if s in ("none", "target_only"):
        return s, None
    m = _FROZEN_RE.match(s)
    if m and int(m.group(1)) >= 1:
        return "frozen_support", int(m.group(1))
    raise ValueError(f"bad template compression {spec!r}; expected none, target-only or frozen:<m>")


@dataclass
class MatchProblem:
    template: TriangleMesh | Polyline
    target_functional: DiracFunctional
    shooting: ShootingConfig
    data_kernel: GaussianKernel = field(default_factory=lambda: GaussianKernel(0.2))
    template_compression: str = "target_only"
    seed: int = 0
    target_points: np.ndarray | None = None  # for Hausdorff reporting only

    def __post_init__(self):
        want = "nc_surface" if isinstance(self.template, TriangleMesh) else "nc_curve"
        if not isinstance(self.template, (TriangleMesh, Polyline)):
            raise TypeError("template must be a TriangleMesh or Polyline")
        if self.target_functional.kind != want:
            raise ValueError(f"target kind {self.target_functional.kind!r} does not match template ({want})")
        self.mode, self.frozen_m = parse_template_compression(self.template_compression)
        self.builder = normal_cycle_builder(self.template)
        self.target_norm_sq = dual_inner(self.data_kernel, self.target_functional, self.target_functional)
        self.support = None
        self.mass_ratio = 1.0
        if self.mode == "frozen_support":
            self._freeze_support()

    def _freeze_support(self):
        mu0 = self.builder.functional(self.template.vertices)
        m = min(self.frozen_m, mu0.n)
        res = compress(self.data_kernel, mu0, RlsConfig(m, seed=self.seed), with_trace_bound=False)
        self.support = res.selected
        a = np.linalg.norm(mu0.weights[self.support])
        # heuristic: keep the compressed mass, re-read the geometry
        self.mass_ratio = float(np.linalg.norm(res.compressed.weights) / a) if a > 0 else 1.0

    def template_functional(self, vertices) -> DiracFunctional:
        mu = self.builder.functional(vertices)
        if self.support is None:
            return mu
        return DiracFunctional(mu.points[self.support], self.mass_ratio * mu.weights[self.support], mu.kind)

    def _template_vjp(self, vertices, gP, gW):
        if self.support is None:
            return self.builder.vjp(vertices, gP, gW)
        n = self.builder.n_deltas
        fullP = np.zeros((n, 3))
        fullW = np.zeros((n, gW.shape[1]))
        fullP[self.support] = gP
        fullW[self.support] = self.mass_ratio * gW
        return self.builder.vjp(vertices, fullP, fullW)


@dataclass
class MatchEval:
    objective: float
    data_term: float
    reg_term: float
    vertices: np.ndarray
    gradient: np.ndarray | None = None


def _evaluate(problem: MatchProblem, p0, with_grad: bool) -> MatchEval:
    cfg = problem.shooting
    p0 = np.asarray(p0, dtype=float).reshape(cfg.control_points.shape)
    traj = shoot_and_flow(cfg, p0, problem.template.vertices)
    verts = traj.final_passengers
    mu = problem.template_functional(verts)
    data, gP, gW = dual_distance_sq_grad(problem.data_kernel, mu, problem.target_functional, problem.target_norm_sq)
    q0 = cfg.control_points
    Kp = _kv(q0, q0, cfg.sigmas) @ p0
    reg = cfg.reg_weight * 0.5 * float(np.sum(p0 * Kp))
    grad = None
    if with_grad:
        gx = problem._template_vjp(verts, gP, gW)
        grad = _flow_vjp(cfg, traj, gx) + cfg.reg_weight * Kp
    return MatchEval(reg + data, data, reg, verts, grad)


def match_objective(problem: MatchProblem, p0) -> MatchEval:
    return _evaluate(problem, p0, with_grad=False)


def match_gradient(problem: MatchProblem, p0) -> np.ndarray:
    return _evaluate(problem, p0, with_grad=True).gradient


def match_value_and_grad(problem: MatchProblem, p0):
    ev = _evaluate(problem, p0, with_grad=True)
    return ev.objective, ev.gradient


# -------------------------------------------------------------- optimizer


class MatchAborted(FloatingPointError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class MatchResult:
    p0: np.ndarray
    objective_trace: list
    deformed: TriangleMesh | Polyline
    iters: int
    final: MatchEval
    wall_ms: float
    evals: int
    eval_ms: list = field(default_factory=list)
    converged: bool = False


def _two_loop(g, hist):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if hist:
        s, y, _ = hist[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def optimize_match(problem: MatchProblem, iters: int, seed: int = 0, gtol: float = 1e-10,
                   history: int = 10, c1: float = 1e-4, c2: float = 0.9, p0=None,
                   callback=None) -> MatchResult:
    """L-BFGS with a strong-Wolfe line search, Armijo backtracking as fallback.

    ``seed`` only matters for randomized problem set-up and is kept so runs are
    reproducible end to end; the iteration itself is deterministic.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    del seed
    t0 = time.perf_counter()
    shape = problem.shooting.control_points.shape
    x = np.zeros(shape).ravel() if p0 is None else np.array(p0, dtype=float).ravel()
    cache: dict = {}
    eval_ms: list = []

    def fg(z):
        key = z.tobytes()
        if key not in cache:
            te = time.perf_counter()
            try:
                ev = _evaluate(problem, z.reshape(shape), with_grad=True)
                val, grad = ev.objective, ev.gradient.ravel()
            except FloatingPointError:
                ev, val, grad = None, math.inf, np.full(z.size, np.nan)
            eval_ms.append((time.perf_counter() - te) * 1e3)
            cache.clear()
            cache[key] = (val, grad, ev)
        return cache[key]

    f, g, ev = fg(x)
    if not math.isfinite(f):
        raise MatchAborted("objective is not finite at the starting point", [f])
    trace = [f]
    hist: deque = deque(maxlen=history)
    converged = False
    it = 0
    for it in range(1, iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol * max(1.0, abs(f)):
            converged = True
            it -= 1
            break
        d = _two_loop(g, hist)
        if np.dot(d, g) >= 0:
            hist.clear()
            d = -g
        alpha = None
        try:
            with np.errstate(all="ignore"):
                res = line_search(lambda z: fg(z)[0], lambda z: fg(z)[1], x, d, g, f, c1=c1, c2=c2, maxiter=20)
            alpha = res[0]
        except (FloatingPointError, ValueError):
            alpha = None
        x_new = None
        if alpha is not None:
            cand = x + alpha * d
            fc, gc, evc = fg(cand)
            if math.isfinite(fc) and fc <= f:
                x_new, f_new, g_new, ev_new = cand, fc, gc, evc
        if x_new is None:
            # Armijo backtracking along steepest descent
            hist.clear()
            d = -g
            step = 1.0 / max(1.0, float(np.linalg.norm(d)))
            for _ in range(40):
                cand = x + step * d
                fc, gc, evc = fg(cand)
                if math.isfinite(fc) and fc <= f + c1 * step * np.dot(g, d):
                    x_new, f_new, g_new, ev_new = cand, fc, gc, evc
                    break
                step *= 0.5
        if x_new is None:
            log.info("no descent step found at iteration %d; stopping", it)
            it -= 1
            converged = True
            break
        s, y = x_new - x, g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            hist.append((s, y, 1.0 / sy))
        x, f, g, ev = x_new, f_new, g_new, ev_new
        trace.append(f)
        if callback is not None:
            callback(it, f)
    deformed = problem.template.with_vertices(ev.vertices)
    return MatchResult(
        p0=x.reshape(shape),
        objective_trace=trace,
        deformed=deformed,
        iters=len(trace) - 1,
        final=ev,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        evals=len(eval_ms),
        eval_ms=eval_ms,
        converged=converged,
    )


# --------------------------------------------------------------- quality


def hausdorff_distance(A, B) -> float:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if len(A) == 0 or len(B) == 0:
        raise ValueError("point sets must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    if len(A) + len(B) < HAUSDORFF_BRUTE_LIMIT:
        def directed(X, Y):
            best = 0.0
            for s in range(0, len(X), 1024):
                D = np.sqrt(np.sum((X[s:s + 1024, None, :] - Y[None, :, :]) ** 2, axis=2))
                best = max(best, float(D.min(axis=1).max()))
            return best
    else:
        def directed(X, Y):
            return float(cKDTree(Y).query(X, k=1)[0].max())
    return max(directed(A, B), directed(B, A))


def match_report(result: MatchResult, hausdorff_init: float, hausdorff_final: float) -> dict:
    return {
        "iters": result.iters,
        "final_objective": result.final.objective,
        "data_term": result.final.data_term,
        "reg_term": result.final.reg_term,
        "hausdorff_init": hausdorff_init,
        "hausdorff_final": hausdorff_final,
        "wall_ms": result.wall_ms,
        "objective": list(result.objective_trace),
    }
