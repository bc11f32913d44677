"""Pure-numpy implementations of the embedding-projection hot kernels.

Same contracts as the compiled module `_ckernels`; `kernels` picks one
at import time. Keep the two in lockstep — the parity tests compare them
element-wise.
"""

import numpy as np

BACKEND = "python"

_EPS = 1e-12


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Dense n x n matrix of squared euclidean distances."""
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def affinity_search(dists: np.ndarray, perplexity: float, tol: float = 1e-5,
                    max_iter: int = 100) -> np.ndarray:
    """Per-row precision binary search so each row's perplexity hits target.

    Returns the conditional affinity matrix (rows sum to 1, zero diagonal).
    """
    n = dists.shape[0]
    target = np.log(perplexity)
    p = np.zeros_like(dists)
    for i in range(n):
        beta, lo, hi = 1.0, 0.0, np.inf
        d = np.delete(dists[i], i)
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            s = w.sum()
            if s <= 0.0:
                w = np.full_like(d, _EPS)
                s = w.sum()
            # H = log s + beta * <d> under w
            h = np.log(s) + beta * (d * w).sum() / s
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        row = w / s
        p[i, :i] = row[:i]
        p[i, i + 1:] = row[i:]
    return p


def tsne_gradient(p: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of the KL objective at embedding y, plus current KL value.

    `p` is the symmetrized joint affinity matrix (sums to 1, zero diag).
    """
    d = pairwise_sq_dists(y)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    q = num / max(num.sum(), _EPS)
    np.maximum(q, _EPS, out=q)
    pq = (p - q) * num
    grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
    mask = p > 0.0
    kl = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    return grad, kl
