import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erbtool.cluster1d import exact_kmeans_1d, is_contiguous, kmeanspp_1d, wcss


def brute_force_cost(values, k):
    """Cheapest split of the sorted values into k contiguous nonempty runs."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0, *cuts, n)
        cost = sum(((x[a:b] - x[a:b].mean()) ** 2).sum() for a, b in zip(bounds, bounds[1:]))
        best = min(best, cost)
    return best


def check_clustering(values, cl, k):
    x = np.asarray(values, dtype=float)
    assert cl.k == k
    assert cl.sizes.sum() == len(x)
    assert np.all(cl.sizes >= 1)
    assert np.all((cl.assignment >= 0) & (cl.assignment < k))
    assert np.array_equal(np.bincount(cl.assignment, minlength=k), cl.sizes)
    for j in range(k):
        assert abs(cl.centers[j] - x[cl.assignment == j].mean()) <= 1e-9


def test_two_separated_groups():
    cl = kmeanspp_1d([0, 0, 0, 10, 10], 2, seed=0)
    order = np.argsort(cl.centers)
    assert cl.centers[order].tolist() == [0.0, 10.0]
    assert cl.sizes[order].tolist() == [3, 2]


def test_singleton():
    cl = kmeanspp_1d([5.0], 1)
    assert cl.centers.tolist() == [5.0]
    assert cl.sizes.tolist() == [1]
    assert cl.converged and cl.iterations == 1


@pytest.mark.parametrize("k", [0, 4])
def test_bad_k(k):
    with pytest.raises(ValueError):
        kmeanspp_1d([1.0, 2.0, 3.0], k)
    with pytest.raises(ValueError):
        exact_kmeans_1d([1.0, 2.0, 3.0], k)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite(bad):
    with pytest.raises(ValueError):
        kmeanspp_1d([1.0, bad], 1)


def test_dp_example():
    cl = exact_kmeans_1d([1, 2, 8, 9], 2)
    assert cl.centers.tolist() == [1.5, 8.5]
    assert cl.assignment.tolist() == [0, 0, 1, 1]


def test_dp_k_equals_n_and_k_one():
    x = [3.0, -1.0, 2.5, 7.0]
    assert wcss(x, exact_kmeans_1d(x, 4)) == 0.0
    one = exact_kmeans_1d(x, 1)
    assert one.centers[0] == pytest.approx(np.mean(x))


def test_dp_tie_prefers_smallest_boundaries():
    # every split of three equal points costs 0; the first boundary wins
    cl = exact_kmeans_1d([4.0, 4.0, 4.0], 2)
    assert cl.sizes.tolist() == [1, 2]


def test_dp_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(150):
        n = int(rng.integers(1, 10))
        k = int(rng.integers(1, n + 1))
        x = np.round(rng.normal(size=n) * 3, 1)
        cl = exact_kmeans_1d(x, k)
        check_clustering(x, cl, k)
        assert wcss(x, cl) == pytest.approx(brute_force_cost(x, k), abs=1e-9)


def test_wcss_examples():
    assert wcss([0, 0, 10, 10], exact_kmeans_1d([0, 0, 10, 10], 2)) == 0.0
    cl = exact_kmeans_1d([0, 1], 1)
    assert wcss([0, 1], cl) == pytest.approx(0.5)
    assert wcss([], cl) == 0.0


values_st = st.lists(
    st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 2)), min_size=1, max_size=40
)


@given(values_st, st.integers(1, 8), st.integers(0, 2**64 - 1))
def test_kmeanspp_invariants(values, k, seed):
    k = min(k, len(values))
    cl = kmeanspp_1d(values, k, seed=seed)
    check_clustering(values, cl, k)
    assert is_contiguous(values, cl)
    assert kmeanspp_1d(values, k, seed=seed) == cl


@given(values_st, st.integers(1, 8), st.integers(0, 1000))
def test_lloyd_cost_never_increases(values, k, seed):
    k = min(k, len(values))
    cl = kmeanspp_1d(values, k, seed=seed, trace=True)
    trace = cl.cost_trace
    assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def test_duplicate_heavy_input_has_no_empty_clusters():
    x = np.repeat([0.0, 1.0, 2.0], [500, 3, 1])
    cl = kmeanspp_1d(x, 10, seed=3)
    check_clustering(x, cl, 10)
    assert wcss(x, cl) == 0.0
    assert is_contiguous(x, cl)


def test_max_iter_respected():
    x = np.random.default_rng(0).normal(size=300)
    cl = kmeanspp_1d(x, 20, seed=0, max_iter=1)
    assert cl.iterations == 1
    check_clustering(x, cl, 20)


def test_more_restarts_never_cost_more():
    # restart seeds for n_init=n are a prefix of those for any larger n
    x = np.random.default_rng(4).normal(size=200)
    costs = [wcss(x, kmeanspp_1d(x, 12, seed=9, n_init=n)) for n in (2, 3, 5, 8)]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_contiguity_detector_rejects_interleaving():
    from erbtool.cluster1d import Clustering1D

    bad = Clustering1D(
        centers=np.array([2.0, 2.5]),
        assignment=np.array([0, 1, 0, 1]),
        sizes=np.array([2, 2]),
        iterations=0,
        converged=True,
    )
    assert not is_contiguous([1.0, 2.0, 3.0, 3.0], bad)


@pytest.mark.xfail(
    strict=True,
    reason="k-means++ with Lloyd refinement typically lands ~20% above the optimum here; "
    "only ~10% of seeds reach the 1.05 bound",
)
def test_normal_256_k16_within_five_percent_of_optimum():
    x = np.random.default_rng(0).standard_normal(256)
    opt = wcss(x, exact_kmeans_1d(x, 16))
    ratios = [wcss(x, kmeanspp_1d(x, 16, seed=s)) / opt for s in range(10)]
    assert max(ratios) <= 1.05


@pytest.mark.filterwarnings("error")
@pytest.mark.parametrize(
    "values",
    [
        [1e-200, 2e-200, 3e-200, 5e-200, 8e-200],
        [1.7976931348623157e308, -1e308, 3.0, 1e-12, 0.0, -2.5, 1e-300, 1.7976931348623157e308],
    ],
)
def test_extreme_dynamic_range(values):
    for k in range(1, len(set(values)) + 1):
        for seed in range(5):
            cl = kmeanspp_1d(values, k, seed=seed)
            assert cl.k == k and np.all(cl.sizes >= 1)
            assert is_contiguous(values, cl)
            assert np.all(np.isfinite(cl.centers))
