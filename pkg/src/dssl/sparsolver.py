"""Sparse self-expressive segment fits in covariance form.

Each channel i of a segment is regressed on the other channels with an l1
penalty,

    min_b  0.5 * sum_t (Y[i,t] - sum_{j!=i} b[j] Y[j,t])^2 + lam * ||b||_1,
    b[i] = 0,

and everything (coordinate updates, objective, KKT certificate) is computed
from the segment Gram matrix alone, so the per-sweep cost is independent of
the segment length.  The p per-channel problems are independent; they are
solved batched, one soft-threshold update per Gram column across all rows at
once.

The sparsity penalty grows linearly with segment length:
``lam = lambda1_0 * length``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gramstore import SegmentGram

# Entries below this magnitude count as structural zeros when reporting
# support / degrees of freedom.
SUPPORT_EPS = 1e-10


@dataclass
class SolverConfig:
    """Coordinate-descent controls.

    tol is a relative max-coefficient-change threshold; convergence also
    requires the KKT residual to drop below ``10 * tol * (1 + lam)``.
    """

    tol: float = 1e-6
    max_iter: int = 1000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SparseCoefVector:
    """Fitted coefficients for one response channel (self-coefficient zero)."""

    response_index: int
    coefs: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.coefs) > SUPPORT_EPS)


@dataclass
class CoefficientMatrix:
    """All p self-expressive rows of one segment; diagonal identically zero."""

    coefs: np.ndarray
    segment: tuple[int, int]
    converged: bool = True
    n_iter: int = 0

    @property
    def p(self) -> int:
        return self.coefs.shape[0]

    def row(self, i: int) -> SparseCoefVector:
        return SparseCoefVector(i, self.coefs[i].copy(), self.converged, self.n_iter)

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(np.abs(self.coefs) > SUPPORT_EPS))


def lambda1_of_length(lambda1_0: float, seg_len: int) -> float:
    """Sparsity penalty for a segment of the given length: lambda1_0 * len."""
    if lambda1_0 < 0:
        raise ValueError("lambda1_0 must be >= 0")
    if seg_len < 1:
        raise ValueError("segment length must be >= 1")
    return lambda1_0 * seg_len


def _as_gram(seg) -> np.ndarray:
    return seg.gram if isinstance(seg, SegmentGram) else np.asarray(seg, dtype=float)


def _cd_batch(G, rows, lam, B0, tol, max_iter):
    """Cyclic coordinate descent over Gram columns for m independent rows.

    Sweeping column j applies the soft-threshold update to coordinate j of
    every row simultaneously (the rows do not interact).  After two full
    sweeps the iteration restricts to columns with support, with a full sweep
    every 10 iterations to admit new coordinates; convergence is only declared
    on a full sweep, and requires both a small coefficient move and the KKT
    bound.

    Returns (B, n_iter, converged).
    """
    rows = np.asarray(rows, dtype=int)
    m, p = len(rows), G.shape[0]
    diag = np.diag(G).copy()
    Gr = G[rows, :]

    B = np.array(B0, dtype=float, copy=True)
    B[np.arange(m), rows] = 0.0
    Q = B @ G

    kkt_bound = 10.0 * tol * (1.0 + lam)
    self_mask = rows[:, None] == np.arange(p)[None, :]

    def kkt_now():
        grad = Q - Gr
        on = np.abs(B) > 0
        res = np.where(on, np.abs(grad + lam * np.sign(B)), np.maximum(np.abs(grad) - lam, 0.0))
        res[self_mask] = 0.0
        return float(res.max(initial=0.0))

    n_iter = 0
    converged = False
    active: np.ndarray | None = None
    while n_iter < max_iter:
        full = active is None or n_iter < 2 or n_iter % 10 == 0
        cols = range(p) if full else active
        max_step = 0.0
        for j in cols:
            gjj = diag[j]
            bj = B[:, j]
            if gjj <= 0.0:
                if np.any(bj):
                    Q -= np.outer(bj, G[j])
                    max_step = max(max_step, float(np.max(np.abs(bj))))
                    B[:, j] = 0.0
                continue
            r = Gr[:, j] - Q[:, j] + bj * gjj
            new = np.sign(r) * np.maximum(np.abs(r) - lam, 0.0) / gjj
            new[rows == j] = 0.0
            delta = new - bj
            if np.any(delta):
                B[:, j] = new
                Q += np.outer(delta, G[j])
                max_step = max(max_step, float(np.max(np.abs(delta))))
        n_iter += 1
        if full:
            active = np.flatnonzero(np.any(B, axis=0))
            scale = max(1.0, float(np.max(np.abs(B), initial=0.0)))
            if max_step <= tol * scale and kkt_now() <= kkt_bound:
                converged = True
                break
    return B, n_iter, converged


def lasso_fit(seg, i, lambda1, cfg: SolverConfig | None = None, warm=None) -> SparseCoefVector:
    """Fit the l1-penalized self-expressive regression of channel i.

    ``warm`` may be a coefficient vector, a SparseCoefVector, or a
    CoefficientMatrix from a previous (typically one-sample-shorter) solve.
    An all-zero segment returns the zero vector, converged.  On hitting
    max_iter the best iterate is returned flagged non-converged.
    """
    cfg = cfg or SolverConfig()
    G = _as_gram(seg)
    p = G.shape[0]
    if not 0 <= i < p:
        raise ValueError(f"response index {i} out of range for p={p}")
    if lambda1 < 0:
        raise ValueError("lambda1 must be >= 0")
    if warm is None:
        b0 = np.zeros((1, p))
    elif isinstance(warm, CoefficientMatrix):
        b0 = warm.coefs[i][None, :]
    elif isinstance(warm, SparseCoefVector):
        b0 = warm.coefs[None, :]
    else:
        b0 = np.asarray(warm, dtype=float)[None, :]
    B, n_iter, converged = _cd_batch(G, [i], float(lambda1), b0, cfg.tol, cfg.max_iter)
    return SparseCoefVector(int(i), B[0], converged, n_iter)


def kkt_residual(seg, beta: SparseCoefVector, lambda1) -> float:
    """Max violation of the subgradient optimality conditions; 0 iff optimal.

    For j with a nonzero coefficient this is |grad_j + lam * sign(b_j)|; for
    zero coefficients it is max(0, |grad_j| - lam).  The gradient comes from
    Gram entries only.
    """
    G = _as_gram(seg)
    i, b = beta.response_index, np.asarray(beta.coefs, dtype=float)
    grad = G @ b - G[:, i]
    on = np.abs(b) > 0
    res = np.where(on, np.abs(grad + lambda1 * np.sign(b)), np.maximum(np.abs(grad) - lambda1, 0.0))
    res[i] = 0.0
    return float(res.max(initial=0.0))


def lasso_objective(seg, i, coefs, lambda1) -> float:
    """Gram-form objective value 0.5*RSS + lam*||b||_1 for one response row."""
    G = _as_gram(seg)
    b = np.asarray(coefs, dtype=float)
    rss = G[i, i] - 2.0 * b @ G[:, i] + b @ G @ b
    return 0.5 * max(rss, 0.0) + lambda1 * float(np.sum(np.abs(b)))


def segment_cost(seg: SegmentGram, lambda1_0, cfg: SolverConfig | None = None, warm=None):
    """Total segment cost and the fitted coefficient matrix.

    cost = sum_i [ RSS_i / 2 + lam * ||b_i||_1 ] with lam = lambda1_0 * len,
    each row from the batched coordinate-descent fit.  RSS comes from Gram
    identities; no raw-data pass.  Non-convergence is flagged on the returned
    matrix, the cost is still returned.
    """
    cfg = cfg or SolverConfig()
    G = _as_gram(seg)
    p = G.shape[0]
    lam = lambda1_of_length(lambda1_0, seg.length)
    if warm is None:
        B0 = np.zeros((p, p))
    elif isinstance(warm, CoefficientMatrix):
        B0 = warm.coefs
    else:
        B0 = np.asarray(warm, dtype=float)
    B, n_iter, converged = _cd_batch(G, np.arange(p), lam, B0, cfg.tol, cfg.max_iter)
    rss = np.diag(G) - 2.0 * np.einsum("ij,ij->i", B, G) + np.einsum("ij,ij->i", B, B @ G)
    cost = float(np.sum(0.5 * np.maximum(rss, 0.0)) + lam * np.sum(np.abs(B)))
    return cost, CoefficientMatrix(B, (seg.start, seg.end), converged, n_iter)
