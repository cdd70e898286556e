"""Seeded k-means++ for 1-D values, plus an exact DP solver used as an oracle."""

from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Clustering1D:
    centers: np.ndarray
    assignment: np.ndarray
    sizes: np.ndarray
    iterations: int
    converged: bool
    cost_trace: tuple[float, ...] | None = None

    @property
    def k(self) -> int:
        return len(self.centers)

    def __eq__(self, other):
        if not isinstance(other, Clustering1D):
            return NotImplemented
        return (
            np.array_equal(self.centers, other.centers)
            and np.array_equal(self.assignment, other.assignment)
            and np.array_equal(self.sizes, other.sizes)
            and self.iterations == other.iterations
            and self.converged == other.converged
        )


def _check_inputs(values, k: int) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("values must be 1-D")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(x):
        raise ValueError(f"k={k} exceeds number of values n={len(x)}")
    return x


def wcss(values, clustering: Clustering1D) -> float:
    """Within-cluster sum of squared deviations from the centers."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return 0.0
    if len(clustering.assignment) != len(x):
        raise ValueError("assignment length does not match values")
    d = x - clustering.centers[clustering.assignment]
    return float(np.dot(d, d))


def _means(x: np.ndarray, assignment: np.ndarray, k: int, w: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.bincount(assignment, weights=w, minlength=k)
    sums = np.bincount(assignment, weights=x if w is None else x * w, minlength=k)
    return sums / sizes, sizes


def _draw(cum: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(i, len(cum) - 1)


def _seed_centers(u: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on sorted distinct values `u` with multiplicities `w`.

    Drawing a distinct value with probability proportional to w * D^2 is the
    same as drawing a point of the full data with probability proportional
    to D^2. Masses are kept in blocks so a draw costs O(sqrt n), and a new
    center only lowers D^2 between its two neighbouring centers.
    """
    n = len(u)
    centers = np.empty(k)
    centers[0] = u[_draw(np.cumsum(w), rng)]
    size = max(64, int(np.sqrt(n)))
    nb = -(-n // size)
    # zero padding to whole blocks lets block sums be a reshape
    d2 = np.zeros(nb * size)
    d2[:n] = (u - centers[0]) ** 2
    unit = bool(np.all(w == 1))
    mass = d2 if unit else np.concatenate([w * d2[:n], np.zeros(nb * size - n)])
    grid = mass.reshape(nb, size)
    blocks = grid.sum(1)
    placed = [float(centers[0])]
    ulist = u.tolist()
    last = nb - 1
    for j, r in enumerate(rng.random(k - 1), start=1):
        cb = blocks.cumsum()
        i = -1
        if cb[-1] > 0:
            t = r * cb[-1]
            b = min(int(cb.searchsorted(t, side="right")), last)
            lo = b * size
            inner = mass[lo : lo + size].cumsum()
            off = t - cb[b - 1] if b else t
            i = lo + min(int(inner.searchsorted(off, side="right")), size - 1)
            # rounding can land on a zero-mass slot; step back to a real one
            while i >= 0 and d2[i] == 0:
                i -= 1
        if i < 0:
            # every squared gap underflowed; take the value farthest from the centers
            i = _farthest(u, centers[:j])
        c = ulist[i]
        centers[j] = c
        pos = bisect.bisect(placed, c)
        a = bisect.bisect_left(ulist, placed[pos - 1]) if pos else 0
        z = bisect.bisect_right(ulist, placed[pos]) if pos < len(placed) else n
        placed.insert(pos, c)
        gap = u[a:z] - c
        gap *= gap
        seg = d2[a:z]
        np.minimum(seg, gap, out=seg)
        if not unit:
            np.multiply(w[a:z], seg, out=mass[a:z])
        ba, bz = a // size, (z - 1) // size + 1
        if bz - ba == 1:
            blocks[ba] = mass[ba * size : bz * size].sum()
        else:
            blocks[ba:bz] = grid[ba:bz].sum(1)
    return centers


def _farthest(u: np.ndarray, centers: np.ndarray) -> int:
    gap = np.abs(u - centers[_nearest(u, centers)])
    return int(np.argmax(gap))


def _nearest(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest center per point; ties go to the lowest center index."""
    k = len(centers)
    order = np.lexsort((np.arange(k), centers))
    sc = centers[order]
    # collapse equal center values onto their lowest original index
    first = np.ones(k, dtype=bool)
    first[1:] = sc[1:] != sc[:-1]
    uvals = sc[first]
    uidx = order[first]
    m = len(uvals)
    pos = np.searchsorted(uvals, x)
    left = np.clip(pos - 1, 0, m - 1)
    right = np.clip(pos, 0, m - 1)
    dl = np.abs(x - uvals[left])
    dr = np.abs(x - uvals[right])
    il, ir = uidx[left], uidx[right]
    take_right = (dr < dl) | ((dr == dl) & (ir < il))
    return np.where(take_right, ir, il)


def _repair_empty(u: np.ndarray, centers: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Reseed every empty cluster at the value farthest from its own center.

    Values are only taken from clusters holding at least two distinct values,
    so a repair never empties another cluster. Ties go to the lowest value.
    """
    held = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(held == 0)
    if len(empty) == 0:
        return labels
    labels = labels.copy()
    dist = np.abs(u - centers[labels])
    for j in empty:
        cand = np.where(held[labels] >= 2, dist, -1.0)
        i = int(np.argmax(cand))
        held[labels[i]] -= 1
        labels[i] = j
        held[j] = 1
        dist[i] = 0.0
    return labels


def _assign(u: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return _repair_empty(u, centers, _nearest(u, centers), len(centers))


def _split_duplicates(x: np.ndarray, u: np.ndarray, inv: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Optimal (zero-cost) clustering when k >= number of distinct values.

    Each distinct value gets at least one cluster; spare clusters go to the
    most crowded values (D'Hondt allocation, ties to the smaller value).
    Members of a value are split into near-equal runs in index order.
    """
    alloc = np.ones(len(u), dtype=np.int64)
    heap = [(-float(c), i) for i, c in enumerate(counts) if c > 1]
    heapq.heapify(heap)
    for _ in range(k - len(u)):
        _, i = heapq.heappop(heap)
        alloc[i] += 1
        if alloc[i] < counts[i]:
            heapq.heappush(heap, (-counts[i] / alloc[i], i))
    first_label = np.concatenate(([0], np.cumsum(alloc)[:-1]))
    assignment = first_label[inv]
    order = np.argsort(inv, kind="stable")  # grouped by value, index order within
    bounds = np.concatenate(([0], np.cumsum(counts)))
    for v in np.flatnonzero(alloc > 1):
        members = order[bounds[v] : bounds[v + 1]]
        # near-equal runs, the first (size % parts) of them one longer
        q, rem = divmod(len(members), int(alloc[v]))
        p = np.arange(len(members))
        cut = rem * (q + 1)
        run = np.where(p < cut, p // (q + 1), rem + (p - cut) // max(q, 1))
        assignment[members] = first_label[v] + run
    return assignment


def _lloyd(u: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, trace: bool):
    centers = _seed_centers(u, w, k, rng)
    labels = _assign(u, centers)
    costs = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        centers, _ = _means(u, labels, k, w)
        if trace:
            d = u - centers[labels]
            costs.append(float(np.dot(w * d, d)))
            if len(costs) > 1 and costs[-1] > costs[-2] * (1 + 1e-12) + 1e-12:
                raise AssertionError(f"Lloyd cost increased: {costs[-2]} -> {costs[-1]}")
        new = _assign(u, centers)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    return labels, it, converged, costs


def kmeanspp_1d(
    values, k: int, seed: int = 0, max_iter: int = 100, n_init: int = 1, trace: bool = False
) -> Clustering1D:
    """k-means++ seeding followed by Lloyd iterations on 1-D data.

    Iterates until the assignment stops changing or `max_iter` is reached.
    Identical values always share a nearest center, so the work is done on
    distinct values weighted by multiplicity. With ``n_init > 1`` the
    lowest-cost of several independently seeded runs is kept. With
    ``trace=True`` the per-iteration cost is recorded and checked to be
    non-increasing.
    """
    x = _check_inputs(values, k)
    if max_iter < 1 or n_init < 1:
        raise ValueError("max_iter and n_init must be >= 1")
    u, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    # k-means commutes with scaling; a power-of-two shift keeps squares finite
    shift = _overflow_shift(u)
    if k >= len(u):
        assignment = _split_duplicates(x, u, inv, counts, k)
        centers, sizes = _scaled_means(x, assignment, k, shift)
        return Clustering1D(centers, assignment, sizes.astype(np.int64), 1, True, (0.0,) if trace else None)
    u = np.ldexp(u, -shift)

    w = counts.astype(np.float64)
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init) if n_init > 1 else [seed]:
        run = _lloyd(u, w, k, np.random.default_rng(child), max_iter, trace)
        centers, _ = _means(u, run[0], k, w)
        d = u - centers[run[0]]
        cost = float(np.dot(w * d, d))
        if best is None or cost < best[0]:
            best = (cost, run)
    _, (labels, it, converged, costs) = best
    assignment = labels[inv]
    centers, sizes = _scaled_means(x, assignment, k, shift)
    return Clustering1D(centers, assignment, sizes.astype(np.int64), it, converged, tuple(costs) if trace else None)


def _overflow_shift(u: np.ndarray) -> int:
    """Binary exponent to divide by so that squared distances cannot overflow."""
    top = float(np.abs(u).max())
    return max(0, int(np.frexp(top)[1]) - 480)


def _scaled_means(x: np.ndarray, assignment: np.ndarray, k: int, shift: int) -> tuple[np.ndarray, np.ndarray]:
    if not shift:
        return _means(x, assignment, k)
    centers, sizes = _means(np.ldexp(x, -shift), assignment, k)
    return np.ldexp(centers, shift), sizes


def exact_kmeans_1d(values, k: int) -> Clustering1D:
    """Globally optimal 1-D k-means by dynamic programming over sorted values.

    Among optimal partitions, the one with lexicographically smallest
    boundary indices wins. O(k n^2) time.
    """
    x = _check_inputs(values, k)
    n = len(x)
    order = np.argsort(x, kind="stable")
    s = x[order]
    p1 = np.concatenate(([0.0], np.cumsum(s)))
    p2 = np.concatenate(([0.0], np.cumsum(s * s)))

    def seg_cost(i, j):
        # cost of s[i:j] for arrays of i (j scalar)
        cnt = j - i
        tot = p1[j] - p1[i]
        return np.maximum((p2[j] - p2[i]) - tot * tot / cnt, 0.0)

    inf = np.inf
    # best[c][j]: optimal cost of the first j sorted points in c clusters
    best = np.full((k + 1, n + 1), inf)
    arg = np.zeros((k + 1, n + 1), dtype=np.int64)
    best[0][0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            i = np.arange(c - 1, j)
            tot = best[c - 1][i] + seg_cost(i, j)
            t = int(np.argmin(tot))  # first minimum = smallest boundary
            best[c][j] = tot[t]
            arg[c][j] = i[t]

    bounds = [n]
    j = n
    for c in range(k, 0, -1):
        j = int(arg[c][j])
        bounds.append(j)
    bounds.reverse()

    sorted_assign = np.empty(n, dtype=np.int64)
    for c in range(k):
        sorted_assign[bounds[c] : bounds[c + 1]] = c
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = sorted_assign
    centers, sizes = _means(x, assignment, k)
    return Clustering1D(centers, assignment, sizes, 0, True)


def is_contiguous(values, clustering: Clustering1D) -> bool:
    """True when some value-sorted order puts each cluster in one run.

    Equal values may be split between clusters, so this checks that the
    clusters' [min, max] intervals chain without overlapping.
    """
    x = np.asarray(values, dtype=np.float64)
    a = np.asarray(clustering.assignment)
    if len(x) == 0:
        return True
    labels = np.unique(a)
    lo = np.array([x[a == c].min() for c in labels])
    hi = np.array([x[a == c].max() for c in labels])
    order = np.lexsort((hi, lo))
    return bool(np.all(hi[order][:-1] <= lo[order][1:]))
