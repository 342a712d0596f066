"""Nystrom compression of Dirac functionals with ridge-leverage-score sampling.

A functional ``mu = sum_i delta_{x_i} a_i`` is projected onto the span of
deltas at ``m`` of its own centres.  The projection weights solve
``K_CC beta = Y`` with ``Y_j = sum_i k(c_j, x_i) a_i``; because this is an
orthogonal projection in the dual norm, the squared error is
``|mu|^2 - |mu_hat|^2``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .kernels import dual_field_eval, dual_inner, gram
from .representations import DiracFunctional

log = logging.getLogger(__name__)

EXACT_RLS_CAP = 4000
TRACE_CAP = 20000
EIGEN_CAP = 3000
AUTO_LAMBDA_SUBSAMPLE = 2000
METHODS = ("rls_recursive", "rls_exact", "uniform")
REFINE_STEPS = 3
DECAY_COLUMNS = ("method", "seed", "m", "error_sq", "rel_error", "trace_bound", "wall_ms")


def _kernel_diag(kernel) -> float:
    return float(len(kernel.sigmas))


@dataclass
class RlsConfig:
    target_m: int
    lambda_: float | None = None  # None selects lambda automatically
    seed: int = 0
    oversample: float = 2.0
    method: str = "rls_recursive"

    def __post_init__(self):
        if self.target_m < 1:
            raise ValueError("target_m must be >= 1")
        if self.lambda_ is not None and self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.oversample > 0:
            raise ValueError("oversample must be positive")


@dataclass
class CompressionResult:
    selected: np.ndarray
    compressed: DiracFunctional
    error_sq: float
    source_norm_sq: float
    trace_bound: float | None
    method: str
    seed: int
    wall_ms: float
    lambda_: float | None = None
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.selected)

    @property
    def rel_error(self) -> float:
        if self.source_norm_sq <= 0:
            return 0.0
        return math.sqrt(self.error_sq / self.source_norm_sq)

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "m": self.m,
            "error_sq": self.error_sq,
            "source_norm_sq": self.source_norm_sq,
            "trace_bound": self.trace_bound,
            "wall_ms": self.wall_ms,
        }


# ----------------------------------------------------------------- scores


def _spectrum(kernel, X, vectors: bool):
    K = gram(kernel, X, X)
    if vectors:
        w, U = np.linalg.eigh(K)
        return np.clip(w, 0.0, None), U
    return np.clip(np.linalg.eigvalsh(K), 0.0, None), None


def _scores_from_eigh(w, U, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, w / (w + lam), 0.0)
    return np.clip((U * U) @ ratio, np.finfo(float).tiny, 1.0)


def exact_rls_scores(kernel, X, lam: float, cap: int = EXACT_RLS_CAP) -> np.ndarray:
    """Diagonal of ``K (K + lam I)^-1`` from a symmetric eigendecomposition."""
    X = np.asarray(X, dtype=float)
    if len(X) > cap:
        raise ValueError(f"exact scores limited to n <= {cap}, got {len(X)}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    w, U = _spectrum(kernel, X, vectors=True)
    return _scores_from_eigh(w, U, lam)


def effective_dimension(eigenvalues, lam: float) -> float:
    e = np.asarray(eigenvalues)
    return float(np.sum(e / (e + lam)))


def auto_lambda(kernel, X, target_m: int, eigenvalues=None, max_subsample: int = AUTO_LAMBDA_SUBSAMPLE,
                seed: int = 0, max_steps: int = 50) -> float:
    """Ridge parameter whose effective dimension lies in ``[m, 2m]``.

    Above ``max_subsample`` points the spectrum is estimated on a uniform
    subsample with eigenvalues rescaled by ``n / subsample``.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= target_m < n:
        raise ValueError(f"need 1 <= target_m < n, got m={target_m}, n={n}")
    if eigenvalues is None:
        eigenvalues = spectrum_estimate(kernel, X, max_subsample, seed)
    e = np.asarray(eigenvalues)
    tr = n * _kernel_diag(kernel)
    lo, hi = 1e-10 * tr, tr
    if effective_dimension(e, lo) < target_m:
        log.warning("effective dimension below m=%d even at lambda=%.3g", target_m, lo)
        return lo
    if effective_dimension(e, hi) > 2 * target_m:
        log.warning("effective dimension above 2m=%d even at lambda=%.3g", 2 * target_m, hi)
        return hi
    for _ in range(max_steps):
        mid = math.sqrt(lo * hi)
        d = effective_dimension(e, mid)
        if d > 2 * target_m:
            lo = mid
        elif d < target_m:
            hi = mid
        else:
            return mid
    log.warning("lambda bisection did not reach the [m, 2m] window")
    return math.sqrt(lo * hi)


def spectrum_estimate(kernel, X, max_subsample: int = AUTO_LAMBDA_SUBSAMPLE, seed: int = 0) -> np.ndarray:
    n = len(X)
    if n <= max_subsample:
        return _spectrum(kernel, X, vectors=False)[0]
    rng = np.random.default_rng(seed)
    sub = np.sort(rng.choice(n, size=max_subsample, replace=False))
    return _spectrum(kernel, X[sub], vectors=False)[0] * (n / max_subsample)


def _estimate_scores(kernel, X, idx, S, lam, probs=None):
    """``(k(x,x) - k_xS (K_SS + lam P)^-1 k_Sx) / lam`` for every x in idx.

    ``P`` holds the inclusion probabilities of the sample ``S`` (identity when
    ``S`` is exhaustive); down-weighting the ridge on rarely drawn points
    compensates for the thinner sample.
    """
    XS = X[S]
    p = np.ones(len(S)) if probs is None else np.asarray(probs, dtype=float)
    L = sla.cholesky(gram(kernel, XS, XS) + lam * np.diag(p), lower=True)
    diag = _kernel_diag(kernel)
    out = np.empty(len(idx))
    step = max(1, (1 << 22) // max(len(S), 1))
    for s in range(0, len(idx), step):
        Z = sla.solve_triangular(L, gram(kernel, XS, X[idx[s:s + step]]), lower=True)
        out[s:s + step] = (diag - np.sum(Z * Z, axis=0)) / lam
    return np.clip(out, np.finfo(float).tiny, 1.0)


def _draw_distinct(rng, scores, m, oversample):
    """m distinct indices, probability proportional to min(1, oversample * score)."""
    q = np.minimum(1.0, oversample * scores)
    sel = rng.choice(len(q), size=m, replace=False, p=q / q.sum())
    return np.sort(sel)


def recursive_rls_sample(kernel, X, cfg: RlsConfig):
    """Recursive ridge-leverage sampling; returns (sorted indices, approximate scores)."""
    X = np.asarray(X, dtype=float)
    n, m = len(X), cfg.target_m
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= target_m < n, got m={m}, n={n}")
    lam = cfg.lambda_ if cfg.lambda_ is not None else auto_lambda(kernel, X, m, seed=cfg.seed)
    if lam <= 0:
        raise ValueError("recursive sampling needs lambda > 0")
    rng = np.random.default_rng(cfg.seed)
    s_max = max(64, int(math.ceil(2 * cfg.oversample * m)))

    def level(idx):
        # returns (sample, inclusion probabilities)
        if len(idx) <= s_max:
            return idx, np.ones(len(idx))
        half = np.sort(rng.choice(idx, size=len(idx) // 2, replace=False))
        S, pS = level(half)
        lt = _estimate_scores(kernel, X, idx, S, lam, pS)
        q = np.minimum(1.0, cfg.oversample * lt)
        keep = rng.random(len(idx)) < q
        if keep.sum() < m:
            missing = np.flatnonzero(~keep)
            top = missing[np.argsort(-lt[missing], kind="stable")[: m - keep.sum()]]
            keep[top] = True
            q[top] = 1.0
        pos = np.flatnonzero(keep)
        if len(pos) > s_max:
            thin = s_max / len(pos)
            pos = np.sort(rng.choice(pos, size=s_max, replace=False, p=q[pos] / q[pos].sum()))
            q = q * thin
        return idx[pos], q[pos]

    all_idx = np.arange(n)
    if n <= s_max:
        S, pS = all_idx, None
    else:
        S, pS = level(np.sort(rng.choice(all_idx, size=n // 2, replace=False)))
    scores = _estimate_scores(kernel, X, all_idx, S, lam, pS)
    return _draw_distinct(rng, scores, m, cfg.oversample), scores


# ------------------------------------------------------------- projection


def _solve_cc(kernel, C, Y, refine: int = REFINE_STEPS):
    """Jittered Cholesky solve of ``K_CC beta = Y`` plus iterative refinement.

    Refinement against the unjittered matrix removes the jitter bias along
    every eigendirection with eigenvalue well above the jitter.
    """
    m = len(C)
    K = gram(kernel, C, C)
    jitter = 1e-10 * m * float(np.mean(np.diag(K)))
    try:
        fac = sla.cho_factor(K + jitter * np.eye(m), lower=True)
    except np.linalg.LinAlgError:
        log.warning("K_CC factorization failed; using least squares")
        return np.linalg.lstsq(K, Y, rcond=None)[0], K
    beta = sla.cho_solve(fac, Y)
    for _ in range(refine):
        beta = beta + sla.cho_solve(fac, Y - K @ beta)
    return beta, K


def _check_selection(selected, n):
    sel = np.asarray(selected, dtype=np.int64)
    if len(np.unique(sel)) != len(sel):
        raise ValueError("selected indices must be distinct")
    if len(sel) and (sel.min() < 0 or sel.max() >= n):
        raise ValueError("selected index out of range")
    return sel


def nystrom_weights(kernel, mu: DiracFunctional, selected) -> np.ndarray:
    sel = _check_selection(selected, mu.n)
    if len(sel) == mu.n:
        # the span of all source deltas contains mu itself
        return mu.weights[np.argsort(sel)].copy()
    C = mu.points[sel]
    Y = dual_field_eval(kernel, mu, C)
    return _solve_cc(kernel, C, Y)[0]


def compression_error_sq(kernel, mu: DiracFunctional, mu_hat: DiracFunctional, mode: str = "pythagoras") -> float:
    """Squared dual error.  ``pythagoras`` assumes ``mu_hat`` is the Nystrom projection."""
    mm = dual_inner(kernel, mu, mu)
    hh = dual_inner(kernel, mu_hat, mu_hat)
    if mode == "pythagoras":
        err = mm - hh
    elif mode == "direct":
        err = mm - 2.0 * dual_inner(kernel, mu, mu_hat) + hh
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return max(err, 0.0)


def trace_bound(kernel, X, selected, cap: int = TRACE_CAP) -> float:
    """``tr(K_XX - K_XC K_CC^-1 K_CX)`` without forming ``K_XX``."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n > cap:
        raise ValueError(f"trace bound limited to n <= {cap}, got {n}")
    sel = _check_selection(selected, n)
    diag = _kernel_diag(kernel)
    if len(sel) == 0:
        return n * diag
    if len(sel) == n:
        return 0.0
    C = X[sel]
    K = gram(kernel, C, C)
    jitter = 1e-10 * len(sel) * float(np.mean(np.diag(K)))
    L = sla.cholesky(K + jitter * np.eye(len(sel)), lower=True)
    total = 0.0
    step = max(1, (1 << 22) // len(sel))
    for s in range(0, n, step):
        Z = sla.solve_triangular(L, gram(kernel, C, X[s:s + step]), lower=True)
        total += float(np.sum(diag - np.sum(Z * Z, axis=0)))
    if total < -1e-9 * n:
        log.warning("trace bound %.3e below round-off tolerance", total)
    return max(total, 0.0)


def eigen_tail(kernel, X, S: int, cap: int = EIGEN_CAP) -> float:
    """Sum of the eigenvalues of ``K_XX`` beyond the ``S`` largest."""
    X = np.asarray(X, dtype=float)
    if len(X) > cap:
        raise ValueError(f"eigen tail limited to n <= {cap}, got {len(X)}")
    if S < 0:
        raise ValueError("S must be >= 0")
    w = np.sort(_spectrum(kernel, X, vectors=False)[0])[::-1]
    return float(np.sum(w[S:]))


# --------------------------------------------------------------- pipeline


def select_indices(kernel, mu: DiracFunctional, cfg: RlsConfig, exact_spectrum=None):
    """Pick ``cfg.target_m`` distinct centres; returns (indices, scores or None, lambda)."""
    n, m = mu.n, cfg.target_m
    if m > n:
        raise ValueError(f"target_m={m} exceeds n={n}")
    if m == n:
        return np.arange(n), None, cfg.lambda_
    rng = np.random.default_rng(cfg.seed)
    if cfg.method == "uniform":
        return np.sort(rng.choice(n, size=m, replace=False)), None, cfg.lambda_
    if cfg.method == "rls_exact":
        if exact_spectrum is None:
            if n > EXACT_RLS_CAP:
                raise ValueError(f"exact scores limited to n <= {EXACT_RLS_CAP}, got {n}")
            exact_spectrum = _spectrum(kernel, mu.points, vectors=True)
        w, U = exact_spectrum
        lam = cfg.lambda_ if cfg.lambda_ is not None else auto_lambda(kernel, mu.points, m, eigenvalues=w)
        scores = _scores_from_eigh(w, U, lam)
        return _draw_distinct(rng, scores, m, cfg.oversample), scores, lam
    lam = cfg.lambda_ if cfg.lambda_ is not None else auto_lambda(kernel, mu.points, m, seed=cfg.seed)
    run = RlsConfig(m, lam, cfg.seed, cfg.oversample, cfg.method)
    sel, scores = recursive_rls_sample(kernel, mu.points, run)
    return sel, scores, lam


def compress(kernel, mu: DiracFunctional, cfg: RlsConfig, *, source_norm_sq: float | None = None,
             with_trace_bound: bool | None = None, exact_spectrum=None) -> CompressionResult:
    """Sample control points, project, and evaluate the exact squared error."""
    t0 = time.perf_counter()
    sel, scores, lam = select_indices(kernel, mu, cfg, exact_spectrum=exact_spectrum)
    C = mu.points[sel]
    if source_norm_sq is None:
        source_norm_sq = dual_inner(kernel, mu, mu)
    if len(sel) == mu.n:
        beta, raw = mu.weights[sel].copy(), 0.0
    else:
        Y = dual_field_eval(kernel, mu, C)
        beta, Kcc = _solve_cc(kernel, C, Y)
        raw = source_norm_sq - float(np.sum(beta * (Kcc @ beta)))
    if raw < -1e-10 * max(source_norm_sq, 1e-300):
        log.warning("negative compression error %.3e beyond tolerance", raw)
    if with_trace_bound is None:
        with_trace_bound = mu.n <= TRACE_CAP
    tb = trace_bound(kernel, mu.points, sel) if with_trace_bound else None
    wall_ms = (time.perf_counter() - t0) * 1e3
    return CompressionResult(
        selected=sel,
        compressed=DiracFunctional(C, beta, mu.kind),
        error_sq=max(raw, 0.0),
        source_norm_sq=float(source_norm_sq),
        trace_bound=tb,
        method=cfg.method,
        seed=cfg.seed,
        wall_ms=wall_ms,
        lambda_=lam,
        scores=scores,
    )


def decay_curve(kernel, mu: DiracFunctional, m_list, methods=("rls_recursive", "uniform"), seeds=range(5),
                lambda_: float | None = None, oversample: float = 2.0, with_trace_bound: bool | None = None):
    """Run ``compress`` over every (m, method, seed); returns a list of row dicts."""
    m_list = [int(m) for m in m_list]
    if m_list != sorted(m_list):
        raise ValueError("m_list must be sorted ascending")
    norm_sq = dual_inner(kernel, mu, mu)
    exact = _spectrum(kernel, mu.points, vectors=True) if "rls_exact" in methods and mu.n <= EXACT_RLS_CAP else None
    eigs = exact[0] if exact is not None else spectrum_estimate(kernel, mu.points)
    rows = []
    for m in m_list:
        lam = lambda_
        if lam is None and m < mu.n:
            lam = auto_lambda(kernel, mu.points, m, eigenvalues=eigs)
        for method in methods:
            for seed in seeds:
                cfg = RlsConfig(m, lam, int(seed), oversample, method)
                res = compress(kernel, mu, cfg, source_norm_sq=norm_sq, with_trace_bound=with_trace_bound,
                               exact_spectrum=exact)
                rows.append({
                    "method": method,
                    "seed": int(seed),
                    "m": m,
                    "error_sq": res.error_sq,
                    "rel_error": res.rel_error,
                    "trace_bound": res.trace_bound,
                    "wall_ms": res.wall_ms,
                    "weight_norm_sq": float(np.sum(mu.weights**2)),
                })
    return rows


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % x


def decay_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECAY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in DECAY_COLUMNS])
    return buf.getvalue()


def read_decay_csv(text: str):
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({
            "method": r["method"],
            "seed": int(r["seed"]),
            "m": int(r["m"]),
            "error_sq": float(r["error_sq"]),
            "rel_error": float(r["rel_error"]),
            "trace_bound": None if r["trace_bound"] == "nan" else float(r["trace_bound"]),
            "wall_ms": float(r["wall_ms"]),
        })
    return rows
