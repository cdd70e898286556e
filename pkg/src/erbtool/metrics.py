"""Distribution distances between weighted reward samples, and the paired t-test."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .replay import CompressedERB, ReplayBuffer, reward_vector


class EmptySampleError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    """Paired differences are constant, so the t statistic is undefined."""


@dataclass(frozen=True, eq=False)
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(v) == 0:
            raise EmptySampleError("empty sample")
        if v.shape != w.shape:
            raise ValueError("values and weights differ in length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("values and weights must be finite")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit(cls, values) -> "WeightedSample":
        v = np.asarray(values, dtype=np.float64)
        return cls(v, np.ones_like(v))

    @classmethod
    def of(cls, buffer: ReplayBuffer | CompressedERB) -> "WeightedSample":
        """Rewards of a buffer; compressed entries carry their weights."""
        r = reward_vector(buffer)
        if isinstance(buffer, CompressedERB):
            return cls(r, np.asarray(buffer.weights, dtype=np.float64))
        return cls.unit(r)


def _as_sample(x) -> WeightedSample:
    if isinstance(x, WeightedSample):
        return x
    if isinstance(x, (ReplayBuffer, CompressedERB)):
        return WeightedSample.of(x)
    return WeightedSample.unit(x)


def _cdfs(a: WeightedSample, b: WeightedSample):
    """Both CDFs evaluated on the merged sorted support."""
    support = np.unique(np.concatenate([a.values, b.values]))
    out = []
    for s in (a, b):
        order = np.argsort(s.values, kind="stable")
        cum = np.cumsum(s.weights[order])
        cum /= cum[-1]
        pos = np.searchsorted(s.values[order], support, side="right")
        out.append(np.where(pos > 0, cum[np.maximum(pos - 1, 0)], 0.0))
    return support, out[0], out[1]


def wasserstein1(a, b) -> float:
    """Exact W1 between two weighted empirical distributions."""
    a, b = _as_sample(a), _as_sample(b)
    support, fa, fb = _cdfs(a, b)
    if len(support) < 2:
        return 0.0
    return float(np.sum(np.abs(fa[:-1] - fb[:-1]) * np.diff(support)))


def ks_stat(a, b) -> float:
    """Largest gap between the two right-continuous weighted CDFs."""
    a, b = _as_sample(a), _as_sample(b)
    _, fa, fb = _cdfs(a, b)
    return float(min(1.0, np.max(np.abs(fa - fb))))


# ---------------------------------------------------------------- t-test


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 500) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only on one side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with `df` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    n: int
    mean_diff: float


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on a - b."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be 1-D and equally long")
    n = len(x)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = x - y
    if np.all(d == d[0]):
        raise ZeroVarianceError("paired differences have zero variance")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=t_two_sided_p(t, n - 1), n=n, mean_diff=mean)


# ---------------------------------------------------------------- reports


@dataclass
class DistributionReport:
    w1: float
    ks: float
    bin_edges: np.ndarray
    density_original: np.ndarray
    density_compressed: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "w1": self.w1,
            "ks": self.ks,
            **self.extra,
            "histogram": [
                [float(lo), float(hi), float(p), float(q)]
                for lo, hi, p, q in zip(
                    self.bin_edges[:-1], self.bin_edges[1:], self.density_original, self.density_compressed
                )
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def write_histogram_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "density_original", "density_compressed"])
        for lo, hi, p, q in zip(self.bin_edges[:-1], self.bin_edges[1:], self.density_original, self.density_compressed):
            writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(p)), repr(float(q))])


def _density(s: WeightedSample, edges: np.ndarray) -> np.ndarray:
    mass, _ = np.histogram(s.values, bins=edges, weights=s.weights)
    return mass / s.weights.sum() / np.diff(edges)


def distribution_report(original, compressed, bins: int = 50) -> DistributionReport:
    """W1, KS and shared-edge histograms of two reward distributions."""
    a, b = _as_sample(original), _as_sample(compressed)
    lo = float(min(a.values.min(), b.values.min()))
    hi = float(max(a.values.max(), b.values.max()))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return DistributionReport(
        w1=wasserstein1(a, b),
        ks=ks_stat(a, b),
        bin_edges=edges,
        density_original=_density(a, edges),
        density_compressed=_density(b, edges),
    )
