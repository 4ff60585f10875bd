import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import gaussian_blobs, separated_centers
from uvcl import _backend
from uvcl.errors import ConfigError, IsolatedSeedError
from uvcl.kde import (
    MeanShiftConfig,
    Mode,
    assign_to_modes,
    find_modes,
    find_modes_with_stats,
    kde_density,
    kde_density_many,
    mean_shift_step,
    merge_modes,
)
from uvcl.metrics import cluster_accuracy


def naive_density(x, data, h):
    total = 0.0
    for row in data:
        total += math.exp(-sum((a - b) ** 2 for a, b in zip(x, row)) / (2 * h * h))
    return total


class TestDensity:
    def test_own_center(self, backend):
        assert kde_density([0.0], [[0.0]], 1.0) == 1.0

    def test_sqrt2_distance(self, backend):
        np.testing.assert_allclose(kde_density([1.0, 1.0], [[0.0, 0.0]], 1.0), 0.367879441171, rtol=1e-11)

    def test_symmetric_pair(self, backend):
        a = np.array([0.7, -1.2, 2.0])
        data = np.stack([-a, a])
        h = 1.3
        expected = 2 * math.exp(-a @ a / (2 * h * h))
        np.testing.assert_allclose(kde_density(np.zeros(3), data, h), expected, rtol=1e-14)
        x = np.array([0.3, 0.1, -0.4])
        np.testing.assert_allclose(kde_density(x, data, h), kde_density(-x, data, h), rtol=1e-14)

    def test_matches_naive_sum(self, backend, rng):
        for _ in range(20):
            n, d = rng.integers(1, 60), rng.integers(1, 9)
            data = rng.normal(size=(n, d))
            x = rng.normal(size=d)
            h = rng.uniform(0.3, 3.0)
            np.testing.assert_allclose(kde_density(x, data, h), naive_density(x, data, h), rtol=1e-12)

    @pytest.mark.parametrize("h", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_bandwidth(self, h):
        with pytest.raises(ConfigError, match="bandwidth must be positive"):
            kde_density([0.0], [[0.0]], h)

    def test_backends_agree(self, rng):
        if "cython" not in _backend.BACKENDS:
            pytest.skip("compiled backend not built")
        data = rng.normal(size=(300, 7))
        pts = rng.normal(size=(40, 7))
        a = _backend.BACKENDS["python"].kde_density_many(pts, data, 0.9)
        b = _backend.BACKENDS["cython"].kde_density_many(pts, data, 0.9)
        np.testing.assert_allclose(a, b, rtol=1e-12)


class TestMeanShiftStep:
    def test_single_datum(self):
        np.testing.assert_array_equal(mean_shift_step([5.0, 5.0], [[1.0, 2.0]], 10.0), [1.0, 2.0])

    def test_symmetric_fixed_point(self):
        data = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
        np.testing.assert_allclose(mean_shift_step([0.0, 0.0], data, 1.0), [0.0, 0.0], atol=1e-15)

    def test_two_points_oracle(self):
        w0, w4 = math.exp(-0.5), math.exp(-4.5)
        expected = (0 * w0 + 4 * w4) / (w0 + w4)
        got = mean_shift_step([1.0], [[0.0], [4.0]], 1.0)
        np.testing.assert_allclose(got, [expected], rtol=1e-14)
        assert got[0] < 1.0

    def test_isolated_seed(self):
        with pytest.raises(IsolatedSeedError):
            mean_shift_step([1e6], [[0.0]], 1.0)

    def test_backend_iterates_match_numpy(self, rng):
        data = rng.normal(size=(80, 3))
        seeds = data[:10]
        for name, k in _backend.BACKENDS.items():
            ends, iters, iso = k.mean_shift_seeds(seeds, data, 0.8, 1e-4 * 0.8, 300)
            assert not iso.any()
            for s, e, it in zip(seeds, ends, iters):
                mu = s
                for _ in range(it):
                    mu = mean_shift_step(mu, data, 0.8)
                np.testing.assert_allclose(e, mu, atol=1e-12, err_msg=name)


class TestFindModes:
    def test_three_gaussians(self, backend):
        rng = np.random.default_rng(0)
        centers = separated_centers(rng, 3, 8, 10.0)
        x, y = gaussian_blobs(rng, centers, 100, 0.5)
        modes = find_modes(x, 1.5)
        assert len(modes) == 3
        got = np.array([m.center for m in modes])
        dist = np.linalg.norm(got[:, None] - centers[None], axis=-1)
        assert np.all(dist.min(axis=1) < 0.2)
        # independent optimiser oracle for each component's density peak
        for k in range(3):
            res = minimize(lambda p: -kde_density(p, x, 1.5), x[y == k].mean(axis=0),
                           method="Nelder-Mead",
                           options=dict(xatol=1e-8, fatol=1e-14, maxiter=20000, maxfev=40000))
            assert np.linalg.norm(got - res.x, axis=1).min() < 1e-4
        assert cluster_accuracy(assign_to_modes(x, modes), y) >= 0.99
        assert sum(m.support_count for m in modes) == len(x)

    def test_single_point(self, backend):
        modes = find_modes([[2.0, -3.0]], 1.0)
        assert len(modes) == 1
        np.testing.assert_array_equal(modes[0].center, [2.0, -3.0])

    def test_uniform_blob_unimodal(self, backend):
        x = np.linspace(0.0, 1.0, 101)[:, None]
        # dense-scan oracle: the density has a single local maximum
        grid = np.linspace(-3, 4, 2001)[:, None]
        dens = kde_density_many(grid, x, 1.0)
        peaks = np.flatnonzero((dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:]))
        assert peaks.size == 1
        assert len(find_modes(x, 1.0)) == 1

    def test_canonical_order_and_permutation_invariance(self, backend, rng):
        centers = separated_centers(rng, 4, 2, 8.0)
        x, _ = gaussian_blobs(rng, centers, 30, 0.5)
        a = find_modes(x, 1.0)
        b = find_modes(x[rng.permutation(len(x))], 1.0)
        ca = np.array([m.center for m in a])
        assert np.all(np.diff(ca[:, 0]) >= 0)
        np.testing.assert_allclose(ca, np.array([m.center for m in b]), atol=1e-3)

    def test_subsample_strategy(self, rng):
        centers = separated_centers(rng, 2, 3, 10.0)
        x, _ = gaussian_blobs(rng, centers, 100, 0.5)
        cfg = MeanShiftConfig(seed_strategy="subsample", subsample_fraction=0.2, seed=3)
        assert len(find_modes(x, 1.5, cfg)) == 2

    def test_stats_count_merges(self, rng):
        # bandwidth small relative to the blob so many basins exist before merging
        x = rng.normal(size=(200, 1))
        modes, merged = find_modes_with_stats(x, 0.15)
        assert merged >= 0
        assert sum(m.support_count for m in modes) == 200


class TestMergeModes:
    def test_separated_distinct(self, rng):
        centers = np.array([[0.0, 0.0], [10.0, 0.0]])
        x, _ = gaussian_blobs(rng, centers, 50, 0.5)
        a, b = Mode(centers[0]), Mode(centers[1])
        # segment scan oracle: the midpoint density is far below both ends
        mid = kde_density([5.0, 0.0], x, 1.0)
        assert mid < 1e-3 * min(kde_density(centers[0], x, 1.0), kde_density(centers[1], x, 1.0))
        assert merge_modes(a, b, x, 1.0, MeanShiftConfig()) is None

    def test_identical_candidates(self):
        x = np.array([[0.0], [0.1]])
        a, b = Mode(np.array([0.05])), Mode(np.array([0.05 + 1e-9]))
        assert merge_modes(a, b, x, 1.0, MeanShiftConfig()) is not None

    def test_same_gaussian_merged(self, rng):
        x = rng.normal(size=(200, 2)) * 0.5
        a, b = Mode(np.array([-0.3, 0.0])), Mode(np.array([0.3, 0.1]))
        t = np.linspace(0, 1, 201)
        seg = a.center + t[:, None] * (b.center - a.center)
        dens = kde_density_many(seg, x, 1.5)
        top = np.argmax(dens)
        assert np.all(np.diff(dens[:top + 1]) >= 0) and np.all(np.diff(dens[top:]) <= 0)
        assert merge_modes(a, b, x, 1.5, MeanShiftConfig()) is not None


class TestAssign:
    def test_datum_at_center(self):
        modes = [Mode(np.array([0.0])), Mode(np.array([5.0]))]
        np.testing.assert_array_equal(assign_to_modes([[5.0]], modes), [1])

    def test_tie_goes_to_lower_index(self, backend):
        modes = [Mode(np.array([-1.0, 0.0])), Mode(np.array([1.0, 0.0]))]
        np.testing.assert_array_equal(assign_to_modes([[0.0, 3.0]], modes), [0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.floats(0.3, 3.0))
def test_mean_shift_never_decreases_density(seed, d, h):
    r = np.random.default_rng(seed)
    data = r.normal(scale=2.0, size=(int(r.integers(2, 40)), d))
    mu = data[0] + r.normal(size=d)
    prev = kde_density(mu, data, h)
    for _ in range(50):
        mu = mean_shift_step(mu, data, h)
        cur = kde_density(mu, data, h)
        assert cur >= prev * (1 - 1e-12)
        prev = cur
