"""Dense float32 matrix helpers and a one-sided Jacobi SVD.

Everything operates on plain 2-D numpy arrays. Stored results are float32;
intermediate math runs in float64 where precision matters, so repeated calls
on identical inputs are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FactorPair",
    "SvdResult",
    "frobenius_norm",
    "matmul",
    "svd",
    "truncate",
]

# Jacobi iteration stops once every column pair is orthogonal to this level,
# or after the sweep cap, whichever comes first.
_JACOBI_TOL = 1e-10
_JACOBI_SWEEPS = 60


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be 2-D with positive dims, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product, accumulated in float64 and rounded to float32.

    The float64 accumulation keeps the per-element summation order fixed, so
    the result is deterministic for identical inputs.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    prod = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return prod.astype(np.float32)


def frobenius_norm(a) -> float:
    a = _as_matrix(a)
    return float(np.sqrt(np.sum(np.square(a.astype(np.float64, copy=False)))))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ v.T`` with k = min(m, n) columns."""

    u: np.ndarray       # (m, k), orthonormal columns
    sigma: np.ndarray   # (k,), non-negative, non-increasing
    v: np.ndarray       # (n, k), orthonormal columns


@dataclass(frozen=True)
class FactorPair:
    """Rank-r factorization ``w ~= u_fold @ v_t`` with singular values folded
    into the left factor, so a factorized layer stores exactly two matrices."""

    u_fold: np.ndarray  # (m, r)
    v_t: np.ndarray     # (r, n)

    def __post_init__(self):
        if self.u_fold.ndim != 2 or self.v_t.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.u_fold.shape[1] != self.v_t.shape[0]:
            raise ValueError(
                f"factor shapes {self.u_fold.shape} x {self.v_t.shape} do not chain"
            )
        r = self.u_fold.shape[1]
        if r < 1 or r > min(self.u_fold.shape[0], self.v_t.shape[1]):
            raise ValueError(f"rank {r} outside [1, min(m, n)]")

    @property
    def rank(self) -> int:
        return self.u_fold.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u_fold.shape[0], self.v_t.shape[1])

    @property
    def param_count(self) -> int:
        m, n = self.shape
        return self.rank * (m + n)

    def reconstruct(self) -> np.ndarray:
        """Materialize the full m x n matrix (float32)."""
        return matmul(self.u_fold, self.v_t)


def svd(a) -> SvdResult:
    """Singular value decomposition via one-sided Jacobi rotations.

    Columns of the working matrix are orthogonalized pairwise until every
    pair's normalized inner product falls below 1e-10 (or 60 sweeps pass).
    Singular values are the column norms, sorted descending with a stable
    sort so equal values keep their input-derived order. Internally float64;
    outputs rounded to float32.
    """
    a = _as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("svd: input contains non-finite entries")

    work = a.astype(np.float64)
    m, n = work.shape
    flipped = m < n
    if flipped:
        work = work.T
        m, n = n, m

    # Row-major working set: row k holds what will become the k-th left
    # singular direction scaled by sigma_k; vt accumulates the rotations.
    rows = np.ascontiguousarray(work.T)
    vt = np.eye(n)

    for _ in range(_JACOBI_SWEEPS):
        worst = 0.0
        for left, right in _round_robin_pairs(n):
            worst = max(worst, _rotate_pairs(rows, vt, left, right))
        if worst <= _JACOBI_TOL:
            break

    sigma = np.sqrt(np.sum(rows * rows, axis=1))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    rows = rows[order]
    vt = vt[order]

    # Rows whose norm is at noise level get sigma = 0 exactly and an
    # orthonormal basis completion so u stays orthonormal.
    cutoff = sigma[0] * 1e-12 if sigma[0] > 0 else 0.0
    u = np.zeros((m, n))
    live = sigma > cutoff
    u[:, live] = (rows[live] / sigma[live, None]).T
    sigma[~live] = 0.0
    for k in np.flatnonzero(~live):
        u[:, k] = _complete_column(u, k, m)
    v = vt.T

    if flipped:
        u, v = v, u
    return SvdResult(
        u=u.astype(np.float32),
        sigma=sigma.astype(np.float32),
        v=v.astype(np.float32),
    )


def _round_robin_pairs(n: int):
    """Tournament schedule covering all column pairs in n-1 rounds of
    disjoint pairs, so each round's rotations can run as one vector op."""
    if n < 2:
        return
    slots = list(range(n)) + ([n] if n % 2 else [])   # n is a dummy when odd
    half = len(slots) // 2
    for _ in range(len(slots) - 1):
        left, right = [], []
        for k in range(half):
            i, j = slots[k], slots[-1 - k]
            if i < n and j < n:
                left.append(min(i, j))
                right.append(max(i, j))
        yield np.array(left), np.array(right)
        slots = [slots[0], slots[-1]] + slots[1:-1]


def _rotate_pairs(rows: np.ndarray, vt: np.ndarray, left: np.ndarray,
                  right: np.ndarray) -> float:
    """Jacobi-rotate the disjoint row pairs (left[k], right[k]) so each
    pair's inner product becomes zero. Returns the worst pre-rotation
    coupling |gamma| / sqrt(alpha*beta) among the pairs actually rotated."""
    ri_ = rows[left]
    rj_ = rows[right]
    alpha = np.einsum("ij,ij->i", ri_, ri_)
    beta = np.einsum("ij,ij->i", rj_, rj_)
    gamma = np.einsum("ij,ij->i", ri_, rj_)
    live = (alpha > 0.0) & (beta > 0.0)
    coupling = np.zeros_like(alpha)
    np.divide(np.abs(gamma), np.sqrt(alpha * beta), out=coupling, where=live)
    spin = coupling > _JACOBI_TOL
    if not np.any(spin):
        return 0.0

    zeta = (beta[spin] - alpha[spin]) / (2.0 * gamma[spin])
    root = np.sqrt(1.0 + zeta * zeta)
    denom = np.where(zeta >= 0.0, zeta + root, zeta - root)
    t = 1.0 / denom
    c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
    s = c * t[:, None]
    li, rj = left[spin], right[spin]
    pi = ri_[spin]
    pj = rj_[spin]
    rows[li] = c * pi - s * pj
    rows[rj] = s * pi + c * pj
    pi = vt[li]
    pj = vt[rj]
    vt[li] = c * pi - s * pj
    vt[rj] = s * pi + c * pj
    return float(coupling[spin].max())


def _complete_column(u: np.ndarray, k: int, m: int) -> np.ndarray:
    # Deterministic basis completion: first canonical vector with a usable
    # residual after projecting out the columns already fixed.
    for cand in range(m):
        w = np.zeros(m)
        w[cand] = 1.0
        for _ in range(2):  # re-orthogonalize once for stability
            w -= u @ (u.T @ w)
        norm = np.linalg.norm(w)
        if norm > 1e-3:
            return w / norm
    raise RuntimeError("basis completion failed")  # unreachable for m >= k


def truncate(dec: SvdResult, r: int) -> FactorPair:
    """Keep the top-r singular triplets, folding sigma into the left factor.

    The Frobenius error of ``u_fold @ v_t`` against the original matrix is
    sqrt(sum of the discarded squared singular values).
    """
    k = len(dec.sigma)
    if not 1 <= r <= k:
        raise ValueError(f"rank {r} out of range [1, {k}]")
    u_fold = (dec.u[:, :r].astype(np.float64) * dec.sigma[:r].astype(np.float64))
    v_t = dec.v[:, :r].T
    return FactorPair(
        u_fold=u_fold.astype(np.float32),
        v_t=np.ascontiguousarray(v_t, dtype=np.float32),
    )
