"""Replay-buffer compression: reward-clustering coresets and sampling baselines.

Every compressor returns a :class:`~erbtool.replay.CompressedERB` whose
integer weights sum to the source size, so that unpacking by repetition
restores a buffer of the original length.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cluster1d import kmeanspp_1d
from .replay import METHODS, CompressedERB, ReplayBuffer, reward_vector


@dataclass(frozen=True)
class CompressionSpec:
    method: str = "coreset"
    ratio: float = 10.0
    seed: int = 0
    max_iter: int = 100
    scores: Sequence[float] | None = None
    group_labels: Sequence[int] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (isinstance(self.ratio, (int, float)) and math.isfinite(self.ratio) and self.ratio >= 1):
            raise ValueError(f"ratio must be a finite number >= 1, got {self.ratio!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def target_size(n: int, ratio: float) -> int:
    """Entries kept for a buffer of size `n` at compression `ratio`."""
    return max(1, math.floor(n / ratio))


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Round positive real weights to positive integers summing to `total`.

    Weights are first rescaled to sum to `total`. Every entry keeps at least
    one unit; the remaining units are apportioned by largest remainder, ties
    going to the earlier entry. When all rescaled weights are >= 1 this is
    the plain largest-remainder rule.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    if n == 0:
        if total != 0:
            raise ValueError("cannot distribute a nonzero total over no entries")
        return np.zeros(0, dtype=np.int64)
    if total < n:
        raise ValueError(f"total {total} smaller than number of entries {n}")
    if not np.all(w > 0):
        raise ValueError("weights must be positive")
    w = w * (total / w.sum())
    spare = total - n
    excess = np.maximum(w - 1.0, 0.0)
    if spare == 0:
        return np.ones(n, dtype=np.int64)
    if excess.sum() > 0:
        share = excess * (spare / excess.sum())
    else:
        share = np.full(n, spare / n)
    floor = np.floor(share)
    left = int(round(spare - floor.sum()))
    order = np.lexsort((np.arange(n), -(share - floor)))
    floor[order[:left]] += 1
    return floor.astype(np.int64) + 1


def _build(buffer: ReplayBuffer, spec: CompressionSpec, idx: Sequence[int], weights: Sequence[int]) -> CompressedERB:
    idx = np.asarray(idx, dtype=np.int64).tolist()
    return CompressedERB(
        experiences=list(map(buffer.experiences.__getitem__, idx)),
        weights=np.asarray(weights, dtype=np.int64).tolist(),
        method=spec.method,
        ratio=float(spec.ratio),
        original_size=len(buffer),
        obs_dim=buffer.obs_dim,
        num_actions=buffer.num_actions,
        env_id=buffer.env_id,
        seed=spec.seed,
        source_index=idx,
        check_records=False,
    )


def _require_nonempty(buffer: ReplayBuffer) -> int:
    n = len(buffer)
    if n == 0:
        raise ValueError("cannot compress an empty buffer")
    return n


def compress_coreset(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    """Cluster rewards into floor(N/R) groups and keep one weighted member each.

    The kept member is the one whose reward is nearest its cluster mean (ties
    to the lowest buffer index); its weight is the cluster size. Entries are
    ordered by ascending cluster center.
    """
    n = _require_nonempty(buffer)
    k = target_size(n, spec.ratio)
    r = reward_vector(buffer)
    cl = kmeanspp_1d(r, k, seed=spec.seed, max_iter=spec.max_iter)
    with np.errstate(over="ignore"):
        dist = np.abs(r - cl.centers[cl.assignment])
    if not np.all(np.isfinite(dist)):
        dist = np.abs(r / 2 - cl.centers[cl.assignment] / 2)
    order = np.lexsort((np.arange(n), dist, cl.assignment))
    first = np.ones(n, dtype=bool)
    first[1:] = cl.assignment[order][1:] != cl.assignment[order][:-1]
    reps = np.empty(k, dtype=np.int64)
    reps[cl.assignment[order][first]] = order[first]
    by_center = np.lexsort((reps, cl.centers))
    return _build(buffer, spec, reps[by_center], cl.sizes[by_center])


def compress_uniform(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    n = _require_nonempty(buffer)
    m = target_size(n, spec.ratio)
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    return _build(buffer, spec, idx, largest_remainder(np.full(m, n / m), n))


def icdf_ranks(n: int, m: int) -> np.ndarray:
    """1-based nearest ranks of the quantile levels (j - 0.5)/m, j = 1..m."""
    j = np.arange(1, m + 1, dtype=np.int64)
    # ceil((2j - 1) n / 2m) in exact integer arithmetic
    return np.maximum(((2 * j - 1) * n + 2 * m - 1) // (2 * m), 1)


def compress_icdf(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    """Keep the experiences sitting at evenly spaced reward quantiles."""
    n = _require_nonempty(buffer)
    m = target_size(n, spec.ratio)
    r = reward_vector(buffer)
    by_reward = np.lexsort((np.arange(n), r))
    picks = by_reward[icdf_ranks(n, m) - 1]
    raw = np.full(m, n / m)
    # ranks are strictly increasing whenever m <= n, so picks never repeat;
    # merge defensively if they ever do
    uniq, first = np.unique(picks, return_index=True)
    if len(uniq) < m:
        keep = np.sort(first)
        raw = np.bincount(np.searchsorted(keep, np.arange(m), side="right") - 1, weights=raw)
        picks = picks[keep]
    return _build(buffer, spec, picks, largest_remainder(raw, n))


def default_scores(rewards) -> np.ndarray:
    """Importance scores |r - mean(r)| + 0.01 used when none are supplied."""
    r = np.asarray(rewards, dtype=np.float64)
    # scores only matter up to a common factor; dividing keeps huge rewards finite
    scale = max(1.0, float(np.abs(r).max()))
    r = r / scale
    return np.abs(r - r.mean()) + 0.01 / scale


def sensitivity_draws(buffer: ReplayBuffer, spec: CompressionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Indices drawn with replacement (p_i = q_i / T) and their real weights T / (m q_i)."""
    n = _require_nonempty(buffer)
    if spec.scores is None:
        raise ValueError("sensitivity sampling needs scores")
    q = np.asarray(spec.scores, dtype=np.float64)
    if q.shape != (n,):
        raise ValueError(f"expected {n} scores, got shape {q.shape}")
    if not np.all(np.isfinite(q)) or not np.all(q > 0):
        raise ValueError("scores must be finite and positive")
    m = target_size(n, spec.ratio)
    total = q.sum()
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(n, size=m, replace=True, p=q / total)
    return idx, total / (m * q[idx])


def sensitivity_sample(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    """Importance sampling with replacement, reweighted by inverse probability.

    Each draw is its own entry (ordered by source index), so the entry count
    is always floor(N/R).
    """
    n = len(buffer)
    idx, raw = sensitivity_draws(buffer, spec)
    order = np.argsort(idx, kind="stable")
    return _build(buffer, spec, idx[order], largest_remainder(raw[order], n))


def reward_groups(rewards, groups: int) -> np.ndarray:
    """Equal-frequency reward bins (ties by buffer index), labelled 0..g-1."""
    r = np.asarray(rewards, dtype=np.float64)
    n = len(r)
    g = max(1, min(groups, n))
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort((np.arange(n), r))] = np.arange(n)
    return rank * g // n


def _group_allocation(sizes: np.ndarray, m: int) -> np.ndarray:
    """floor(m/g) draws per group, then leftovers to the largest groups with room."""
    g = len(sizes)
    alloc = np.minimum(m // g, sizes)
    left = m - int(alloc.sum())
    heap = [(-int(s), i) for i, s in enumerate(sizes) if alloc[i] < s]
    heapq.heapify(heap)
    while left > 0:
        # one extra draw per group per pass, largest groups first
        nxt = []
        while heap and left > 0:
            s, i = heapq.heappop(heap)
            alloc[i] += 1
            left -= 1
            if alloc[i] < sizes[i]:
                nxt.append((s, i))
        for item in nxt:
            heapq.heappush(heap, item)
    return alloc


def group_sample(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    """Uniform draws within a-priori groups, weighted by group size."""
    n = _require_nonempty(buffer)
    if spec.group_labels is None:
        raise ValueError("group sampling needs group_labels")
    labels = np.asarray(spec.group_labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} group labels, got shape {labels.shape}")
    groups, inv, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    g = len(groups)
    m = max(g, math.floor(n / spec.ratio))
    alloc = _group_allocation(sizes, m)
    rng = np.random.default_rng(spec.seed)
    idx, weights = [], []
    for gi in range(g):
        members = np.flatnonzero(inv == gi)
        d = int(alloc[gi])
        picked = np.sort(rng.choice(members, size=d, replace=False))
        idx.extend(picked.tolist())
        weights.extend(largest_remainder(np.full(d, sizes[gi] / d), int(sizes[gi])).tolist())
    return _build(buffer, spec, idx, weights)


_DISPATCH = {
    "coreset": compress_coreset,
    "uniform": compress_uniform,
    "icdf": compress_icdf,
    "sensitivity": sensitivity_sample,
    "group": group_sample,
}


def compress(buffer: ReplayBuffer, spec: CompressionSpec) -> CompressedERB:
    """Dispatch on ``spec.method``.

    Sensitivity and group sampling fall back to reward-derived scores and
    equal-frequency reward groups (at most four, never more than the target
    entry count) when none are supplied.
    """
    _require_nonempty(buffer)
    if spec.method == "sensitivity" and spec.scores is None:
        spec = replace(spec, scores=default_scores(reward_vector(buffer)))
    if spec.method == "group" and spec.group_labels is None:
        spec = replace(spec, group_labels=reward_groups(reward_vector(buffer), min(4, target_size(len(buffer), spec.ratio))))
    return _DISPATCH[spec.method](buffer, spec)


def unpack(compressed: CompressedERB) -> ReplayBuffer:
    """Expand by repeating each entry `weight` times, in entry order."""
    compressed.validate(records=False)
    exps = np.fromiter(compressed.experiences, dtype=object, count=len(compressed))
    out = np.repeat(exps, compressed.weights).tolist()
    return ReplayBuffer.trusted(compressed.obs_dim, compressed.num_actions, compressed.env_id, out)
