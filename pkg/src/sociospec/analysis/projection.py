"""Exact t-SNE projection of encoder representations plus k-means cluster
purity as a quantitative stand-in for eyeballing the scatter plots.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import kernels
from ..corpus import Review, plain_batch
from ..encoder import EncoderModel, cls_representation, encode
from ..errors import ContractError, DataError
from ..seeding import rng_for

EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_EARLY = 0.5
MOMENTUM_LATE = 0.8
_EPS = 1e-12


@dataclass
class Projection2D:
    coords: np.ndarray                      # [n x 2]
    metadata: dict[str, list] = field(default_factory=dict)
    kl_trace: list[float] = field(default_factory=list)
    exaggeration_end: int = EXAGGERATION_ITERS


def joint_affinities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint affinity matrix P (sums to 1, zero diagonal)."""
    dists = kernels.pairwise_sq_dists(np.ascontiguousarray(points, dtype=np.float64))
    cond = kernels.affinity_search(dists, perplexity)
    if not np.all(np.isfinite(cond)):
        warnings.warn("degenerate neighborhoods; applying affinity floor",
                      RuntimeWarning, stacklevel=2)
        cond = np.where(np.isfinite(cond), cond, _EPS)
    p = (cond + cond.T) / (2.0 * points.shape[0])
    np.fill_diagonal(p, 0.0)
    total = p.sum()
    if total <= 0.0:
        warnings.warn("zero-variance affinities; applying affinity floor",
                      RuntimeWarning, stacklevel=2)
        p = np.full_like(p, _EPS)
        np.fill_diagonal(p, 0.0)
        total = p.sum()
    return p / total


def tsne(points: np.ndarray, perplexity: float = 30.0, iterations: int = 1000,
         seed: int = 0, learning_rate: float = 200.0) -> Projection2D:
    """Exact (dense O(n^2)) t-SNE to 2-D with early exaggeration and the
    standard momentum switch; deterministic given the seed."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n, d = points.shape
    if n < 3 * perplexity:
        raise ContractError(f"need n >= 3*perplexity ({3 * perplexity:.0f}), got {n}")
    if d < 2:
        raise ContractError("input dimensionality must be >= 2")

    p = joint_affinities(points, perplexity)
    rng = rng_for(seed, "tsne-init")
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    trace: list[float] = []

    for it in range(iterations):
        exaggerated = it < EXAGGERATION_ITERS
        p_eff = np.ascontiguousarray(p * EXAGGERATION) if exaggerated else p
        grad, kl = kernels.tsne_gradient(p_eff, y)
        if exaggerated:
            # re-measure against the true P so the trace is comparable
            # across the exaggeration boundary
            _, kl = kernels.tsne_gradient(p, y)
        trace.append(kl)
        momentum = MOMENTUM_EARLY if it < EXAGGERATION_ITERS else MOMENTUM_LATE
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)

    _, kl = kernels.tsne_gradient(p, y)
    trace.append(kl)
    return Projection2D(coords=y, kl_trace=trace)


# -- cluster purity -----------------------------------------------------------


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 100) -> tuple[np.ndarray, float]:
    n = points.shape[0]
    centers = points[rng.choice(n, size=k, replace=False)].copy()
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    inertia = float(((points - centers[assign]) ** 2).sum())
    return assign, inertia


def cluster_purity(coords: np.ndarray, labels: list, seed: int = 0,
                   restarts: int = 10) -> float:
    """k-means (k = #label values, best of `restarts`), each cluster takes
    its majority label; returns the covered fraction."""
    labels = np.asarray([str(l) for l in labels])
    values = sorted(set(labels))
    if len(values) < 2:
        raise ContractError("cluster_purity needs >= 2 distinct labels")
    k = len(values)
    coords = np.asarray(coords, dtype=np.float64)
    best_assign, best_inertia = None, np.inf
    for r in range(restarts):
        assign, inertia = _kmeans(coords, k, rng_for(seed, f"kmeans:{r}"))
        if inertia < best_inertia:
            best_assign, best_inertia = assign, inertia
    correct = 0
    for c in range(k):
        members = labels[best_assign == c]
        if len(members):
            _, counts = np.unique(members, return_counts=True)
            correct += int(counts.max())
    return correct / len(labels)


# -- projection inputs and outputs -------------------------------------------


def sample_projection_inputs(model: EncoderModel, dev: list[Review], n: int = 2000,
                             seed: int = 0, batch_size: int = 64,
                             max_len: int = 128) -> tuple[np.ndarray, dict[str, list]]:
    """Stratified sample, equal per (language, group) cell, encoded to CLS
    vectors in eval mode."""
    if len(dev) < n:
        raise DataError(f"need {n} dev instances, have {len(dev)}")
    cells: dict[tuple[int, int], list[Review]] = {}
    for r in dev:
        cells.setdefault((r.language, r.group), []).append(r)
    per_cell, rem = divmod(n, len(cells))
    if rem:
        raise DataError(f"n={n} not divisible by {len(cells)} (language, group) cells")
    rng = rng_for(seed, "projection-sample")
    chosen: list[Review] = []
    for key in sorted(cells):
        members = cells[key]
        if len(members) < per_cell:
            raise DataError(f"cell {key} has {len(members)} < {per_cell} instances")
        idx = rng.permutation(len(members))[:per_cell]
        chosen.extend(members[i] for i in sorted(idx))

    vecs = []
    for start in range(0, len(chosen), batch_size):
        chunk = chosen[start:start + batch_size]
        ids, lengths = plain_batch(chunk, max_len=max_len)
        hidden = encode(model, ids, lengths)
        vecs.append(cls_representation(hidden).data)
    points = np.concatenate(vecs)
    metadata = {
        "language": [r.language for r in chosen],
        "group": [r.group for r in chosen],
        "domain": [r.domain for r in chosen],
    }
    return points, metadata


def save_projection_csv(proj: Projection2D, path: str | Path,
                        factor: str = "gender") -> None:
    lines = ["x,y,language,group,factor"]
    lang = proj.metadata.get("language", [""] * len(proj.coords))
    grp = proj.metadata.get("group", [""] * len(proj.coords))
    for i, (x, y) in enumerate(proj.coords):
        lines.append(f"{x:.6f},{y:.6f},{lang[i]},{grp[i]},{factor}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
            "#aa3377", "#bbbbbb", "#000000")


def save_projection_svg(proj: Projection2D, path: str | Path,
                        panel_size: int = 320) -> None:
    """One scatter panel per metadata field, colored by that field."""
    fields = list(proj.metadata) or ["all"]
    coords = proj.coords
    lo = coords.min(axis=0)
    span = np.maximum(coords.max(axis=0) - lo, 1e-9)
    pad, radius = 24, 2.0
    width = len(fields) * (panel_size + pad) + pad
    height = panel_size + 2 * pad + 16
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for pi, fld in enumerate(fields):
        x0 = pad + pi * (panel_size + pad)
        values = proj.metadata.get(fld, [0] * len(coords))
        levels = sorted(set(str(v) for v in values))
        color = {v: _PALETTE[i % len(_PALETTE)] for i, v in enumerate(levels)}
        parts.append(f'<text x="{x0}" y="{pad - 8}" font-size="12">{fld}</text>')
        parts.append(f'<rect x="{x0}" y="{pad}" width="{panel_size}" '
                     f'height="{panel_size}" fill="none" stroke="#999"/>')
        for (x, y), v in zip(coords, values):
            px = x0 + (x - lo[0]) / span[0] * panel_size
            py = pad + (1.0 - (y - lo[1]) / span[1]) * panel_size
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="{radius}" '
                         f'fill="{color[str(v)]}" fill-opacity="0.6"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
