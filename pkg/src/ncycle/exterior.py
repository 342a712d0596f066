"""Coordinates for 2-wedges of R^n.

A simple wedge ``a ^ b`` is stored as its coefficients on the basis
``e_i ^ e_j`` (i < j), with pairs enumerated lexicographically.  The map is
an isometry: dot products of coefficient vectors equal the Gram-determinant
inner product of the wedges.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def basis_index(i: int, j: int, n: int) -> int:
    """0-based position of the pair ``(i, j)`` (1-based dims, ``i < j``)."""
    if not (1 <= i < j <= n):
        raise ValueError(f"need 1 <= i < j <= n, got i={i}, j={j}, n={n}")
    # pairs starting with 1..i-1 come first
    before = (i - 1) * n - (i - 1) * i // 2
    return before + (j - i - 1)


@lru_cache(maxsize=None)
def _pair_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


@dataclass(frozen=True)
class WedgeCoeffs:
    ambient_dim: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape[-1] != n_pairs(self.ambient_dim):
            raise ValueError(
                f"expected {n_pairs(self.ambient_dim)} coefficients, "
                f"got {self.coeffs.shape[-1]}"
            )


def wedge_coefficients(a, b) -> np.ndarray:
    """Batched ``B(a ^ b)``: ``a``, ``b`` of shape (..., n) -> (..., n(n-1)/2)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    iu, ju = _pair_arrays(a.shape[-1])
    return a[..., iu] * b[..., ju] - a[..., ju] * b[..., iu]


def wedge_embed(a, b) -> WedgeCoeffs:
    a = np.asarray(a, dtype=float)
    return WedgeCoeffs(a.shape[-1], wedge_coefficients(a, b))


def wedge_inner(a, b, c, d) -> float:
    """``<a ^ b, c ^ d>`` as the 2x2 Gram determinant."""
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    if not (a.shape == b.shape == c.shape == d.shape):
        raise ValueError("dimension mismatch")
    return float(np.dot(a, c) * np.dot(b, d) - np.dot(a, d) * np.dot(b, c))


# Slot layout used by the normal cycle in R^6 = R^3 (position) x R^3 (normal).
# Mixed slots (i, j+3) carry the cylindrical part; pure normal slots carry the
# spherical part, so the two parts are orthogonal by construction.
MIXED_SLOTS = np.array(
    [[basis_index(i, j + 3, 6) for j in range(1, 4)] for i in range(1, 4)]
)
NORMAL_PAIR_SLOTS = np.array(
    [basis_index(5, 6, 6), basis_index(4, 6, 6), basis_index(4, 5, 6)]
)
# (0,e1)^(0,e2) <-> e3 etc.: the Hodge identification u = e1 x e2 on the
# normal factor; the (4,6) slot carries -u_2.
NORMAL_PAIR_SIGNS = np.array([1.0, -1.0, 1.0])


def mixed_wedge(u, v) -> np.ndarray:
    """Batched ``B((u, 0) ^ (0, v))`` for 3-vectors ``u``, ``v`` -> (..., 15)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(u.shape[:-1] + (15,))
    out[..., MIXED_SLOTS.ravel()] = (u[..., :, None] * v[..., None, :]).reshape(
        u.shape[:-1] + (9,)
    )
    return out


def normal_bivector(u) -> np.ndarray:
    """Batched 15-vector of the bivector in the normal factor dual to ``u``."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (15,))
    out[..., NORMAL_PAIR_SLOTS] = u * NORMAL_PAIR_SIGNS
    return out
