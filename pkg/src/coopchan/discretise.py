"""Grouping of idealised conductance levels into open-channel counts.

The channel count L is chosen by splitting the sorted unique levels at large
gaps; the level ladder (offset + spacing per open channel) is then fitted by
duration-weighted least squares under the equal-spacing constraint, and each
sample maps to its nearest rung.
"""

from __future__ import annotations

import numpy as np

from .core import DiscreteTrace, LevelLadder
from .idealise import Idealisation


class Empty(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(values[order][min(k, len(values) - 1)])


def level_groups(levels, gap_factor: float = 3.0, max_groups: int = 21,
                 weights=None) -> list[np.ndarray]:
    """Split sorted unique levels at large gaps.

    A gap splits when it exceeds gap_factor times the weight-median gap and
    the span-scale floor span / (2 * max_groups).  Gap weights are the
    smaller of the two adjacent levels' total weights, so stray levels with
    negligible dwell cannot drag the splitting scale down; the floor keeps
    the tail of the within-cluster gap distribution from fragmenting dense
    level sets.  At most max_groups - 1 splits are kept (largest gaps win).
    When no gap qualifies but all gaps are of comparable size (within
    gap_factor of each other), the levels already form a ladder and every
    unique level is its own group.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise Empty("need at least one level")
    if weights is None:
        weights = np.ones_like(levels)
    weights = np.asarray(weights, dtype=float)
    uniq, inverse = np.unique(levels, return_inverse=True)
    agg = np.zeros(len(uniq))
    np.add.at(agg, inverse, weights)
    if len(uniq) == 1:
        return [uniq]
    gaps = np.diff(uniq)
    gap_weights = np.minimum(agg[:-1], agg[1:])
    threshold = max(
        gap_factor * _weighted_median(gaps, gap_weights),
        (uniq[-1] - uniq[0]) / (2.0 * max_groups),
    )
    split_after = np.nonzero(gaps > threshold)[0]
    if len(split_after) == 0 and gaps.max() <= gap_factor * gaps.min():
        return [uniq[i:i + 1] for i in range(len(uniq))]
    if len(split_after) > max_groups - 1:
        order = np.argsort(-gaps[split_after], kind="stable")
        split_after = np.sort(split_after[order[:max_groups - 1]])
    groups = np.split(uniq, split_after + 1)
    group_weights = [agg[np.searchsorted(uniq, g)].sum() for g in groups]
    return _merge_stray_groups(groups, group_weights)


def _merge_stray_groups(groups, group_weights, min_share: float = 0.02,
                        closeness: float = 0.75):
    """Fold groups that a histogram reader would not see as peaks into their
    nearest neighbour: negligible total weight and closer than a typical
    inter-group gap.  Distant light groups (rarely visited ladder rungs)
    survive."""
    while len(groups) > 1:
        centroids = np.array([float(np.mean(g)) for g in groups])
        weights = np.asarray(group_weights, dtype=float)
        gaps = np.diff(centroids)
        typical = float(np.median(gaps))
        shares = weights / weights.sum()
        candidates = []
        for j in range(len(groups)):
            dists = []
            if j > 0:
                dists.append((gaps[j - 1], j - 1))
            if j < len(groups) - 1:
                dists.append((gaps[j], j + 1))
            dist, neighbour = min(dists)
            if shares[j] < min_share and dist < closeness * typical:
                candidates.append((shares[j], j, neighbour))
        if not candidates:
            break
        _, j, neighbour = min(candidates)
        lo, hi = min(j, neighbour), max(j, neighbour)
        groups[lo:hi + 1] = [np.concatenate([groups[lo], groups[hi]])]
        group_weights[lo:hi + 1] = [group_weights[lo] + group_weights[hi]]
    return groups


def select_L(levels, weights=None, max_L: int = 20, gap_factor: float = 3.0) -> int:
    """Number of open-channel states minus one, from the level grouping,
    clamped to [1, max_L]."""
    groups = level_groups(levels, gap_factor, max_groups=max_L + 1, weights=weights)
    return int(np.clip(len(groups) - 1, 1, max_L))


def _assign(levels: np.ndarray, L: int, offset: float, spacing: float) -> np.ndarray:
    t = (levels - offset) / spacing
    return np.clip(np.ceil(t - 0.5).astype(np.int64), 0, L)


def _weighted_ls(levels, weights, idx):
    """Least squares (offset, spacing) for fixed rung assignments; returns
    None when the system is singular (all weight on one rung)."""
    w = weights
    sw = w.sum()
    si = (w * idx).sum()
    sii = (w * idx * idx).sum()
    sx = (w * levels).sum()
    six = (w * idx * levels).sum()
    det = sw * sii - si * si
    if det <= 1e-12 * max(sw * sii, 1e-300):
        return None
    offset = (sii * sx - si * six) / det
    spacing = (sw * six - si * sx) / det
    return offset, spacing


def _sse(levels, weights, L, offset, spacing):
    idx = _assign(levels, L, offset, spacing)
    resid = levels - (offset + spacing * idx)
    return float((weights * resid * resid).sum()), idx


def _polish(levels, weights, L, offset, spacing, max_iter=60):
    best_sse, idx = _sse(levels, weights, L, offset, spacing)
    best = (offset, spacing)
    for _ in range(max_iter):
        fit = _weighted_ls(levels, weights, idx)
        if fit is None or fit[1] <= 0:
            break
        sse, new_idx = _sse(levels, weights, L, *fit)
        if sse < best_sse - 1e-15:
            best_sse, best = sse, fit
        if np.array_equal(new_idx, idx):
            break
        idx = new_idx
    return best_sse, best


def grid_sse(levels, weights, L, offsets, spacings) -> np.ndarray:
    """Vectorized nearest-rung SSE over an (offset, spacing) candidate grid;
    returns a (len(offsets) * len(spacings),) array in C order."""
    levels = np.asarray(levels, float)
    weights = np.asarray(weights, float)
    off = np.repeat(offsets, len(spacings))
    spc = np.tile(spacings, len(offsets))
    t = (levels[None, :] - off[:, None]) / spc[:, None]
    idx = np.clip(np.ceil(t - 0.5), 0, L)
    resid = levels[None, :] - (off[:, None] + spc[:, None] * idx)
    return (weights[None, :] * resid * resid).sum(axis=1), off, spc


def equal_spacing_cluster(levels, weights=None, L: int = 1, n_polish: int = 20) -> LevelLadder:
    """Fit rungs offset + i*spacing, i = 0..L, minimizing the weighted sum of
    squared deviations of each level from its nearest rung.

    A candidate grid of (offset, spacing) pairs built from the data range
    (hence affine equivariant) is scanned, and the best candidates are
    polished by alternating nearest-rung assignment and weighted least
    squares; the lowest polished SSE wins.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise Empty("need at least one level")
    if L < 1:
        raise DegenerateInput("L must be >= 1")
    weights = np.ones_like(levels) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != levels.shape or (weights < 0).any() or weights.sum() <= 0:
        raise DegenerateInput("weights must be nonnegative with positive total")
    lo, hi = float(levels.min()), float(levels.max())
    span = hi - lo
    if span <= 0:
        raise DegenerateInput("need at least two distinct levels")

    spacing_cands = span / L * np.linspace(0.15, 1.25, 23)
    centroids = np.sort([float(np.mean(g)) for g in level_groups(levels)])
    gaps = np.diff(centroids)
    spacing_cands = np.concatenate([spacing_cands, gaps[gaps > 0]])
    offset_cands = lo + span * np.linspace(-0.25, 0.35, 25)

    sse, off, spc = grid_sse(levels, weights, L, offset_cands, spacing_cands)
    order = np.argsort(sse, kind="stable")[:n_polish]
    best_sse, best = np.inf, None
    for k in order:
        polished_sse, fit = _polish(levels, weights, L, float(off[k]), float(spc[k]))
        if polished_sse < best_sse - 1e-15:
            best_sse, best = polished_sse, fit
    offset, spacing = best
    return LevelLadder(L=L, offset=float(offset), spacing=float(spacing), sse=float(best_sse))


def segment_levels_and_durations(ideal: Idealisation) -> tuple[np.ndarray, np.ndarray]:
    """Level multiset of an idealisation, weighted by segment duration."""
    return ideal.fit.levels, ideal.fit.durations()


def discretise_trace(ideal: Idealisation, ladder: LevelLadder, sample_rate: float) -> DiscreteTrace:
    """Per-sample open-channel counts: each sample's idealised level maps to
    the nearest rung (midpoints round down)."""
    n = int(round(ideal.fit.t_max * sample_rate))
    times = np.arange(1, n + 1) / sample_rate
    values = ladder.nearest_rung(ideal.fit.sample(times))
    return DiscreteTrace(values=values, ladder=ladder)
