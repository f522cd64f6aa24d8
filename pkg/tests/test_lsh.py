"""Index behavior: insert/remove, nearest search, split-projection queries."""

import math

import numpy as np
import pytest

from ochstream import InputError, LshIndex, LshParams, StateError, UsageError
from ochstream.lsh import ALWAYS_EXACT


def brute_nearest(points, ids, query):
    d2 = ((np.stack(points) - query) ** 2).sum(axis=1)
    pos = int(np.argmin(d2))
    return ids[pos], math.sqrt(d2[pos])


class TestInsertRemove:
    def test_insert_then_search_returns_it(self):
        idx = LshIndex(4, LshParams(seed=1))
        v = np.array([0.2, -0.3, 0.9, 0.0])
        idx.insert(7, v)
        got, dist = idx.nearest(v)
        assert got == 7
        assert dist == 0.0

    def test_wrong_dimension_rejected(self):
        idx = LshIndex(4)
        with pytest.raises(InputError):
            idx.insert(0, np.zeros(3))

    def test_duplicate_id_rejected(self):
        idx = LshIndex(2)
        idx.insert(0, np.zeros(2))
        with pytest.raises(UsageError):
            idx.insert(0, np.ones(2))

    def test_thousand_inserts(self):
        idx = LshIndex(8, LshParams(seed=3))
        rng = np.random.default_rng(3)
        for i in range(1000):
            idx.insert(i, rng.uniform(size=8))
        assert len(idx) == 1000

    def test_removed_id_never_returned(self):
        idx = LshIndex(3, LshParams(seed=5))
        rng = np.random.default_rng(5)
        target = rng.uniform(size=3)
        idx.insert(0, target)
        for i in range(1, 30):
            idx.insert(i, rng.uniform(size=3))
        idx.remove(0)
        for _ in range(50):
            got, _ = idx.nearest(target + 1e-9 * rng.standard_normal(3))
            assert got != 0

    def test_remove_unknown_id(self):
        idx = LshIndex(2)
        with pytest.raises(UsageError):
            idx.remove(42)

    def test_remove_all_empties_index(self):
        idx = LshIndex(2, LshParams(seed=9))
        rng = np.random.default_rng(9)
        for i in range(100):
            idx.insert(i, rng.uniform(size=2))
        for i in range(100):
            idx.remove(i)
        assert len(idx) == 0
        assert list(idx.iter_buckets()) == []

    def test_remove_scrubs_every_bucket(self):
        idx = LshIndex(6, LshParams(num_hashes=8, seed=11))
        rng = np.random.default_rng(11)
        for i in range(50):
            idx.insert(i, rng.uniform(size=6))
        idx.remove(17)
        for _, _, bucket in idx.iter_buckets():
            assert 17 not in bucket


class TestNearest:
    def test_single_entry(self):
        idx = LshIndex(2, LshParams(seed=2))
        idx.insert(5, np.array([1.0, 1.0]))
        got, dist = idx.nearest(np.array([4.0, 5.0]))
        assert got == 5
        assert dist == pytest.approx(5.0)

    def test_points_on_a_line(self):
        idx = LshIndex(1, LshParams(seed=4))
        for i, x in enumerate([0.0, 1.0, 2.0]):
            idx.insert(i, np.array([x]))
        got, dist = idx.nearest(np.array([0.9]))
        assert got == 1
        assert dist == pytest.approx(0.1)

    def test_empty_index_is_state_error(self):
        with pytest.raises(StateError):
            LshIndex(2).nearest(np.zeros(2))

    def test_tie_breaks_to_lowest_id(self):
        idx = LshIndex(2, LshParams(seed=6))
        idx.insert(3, np.array([1.0, 0.0]))
        idx.insert(1, np.array([-1.0, 0.0]))
        got, _ = idx.nearest(np.zeros(2))
        assert got == 1

    def test_fallback_exactness_when_triggered(self):
        # tiny buckets leave sparse candidate unions; queries whose union is
        # below the threshold must land on the exact scan path
        threshold = 8
        idx = LshIndex(
            16, LshParams(num_hashes=4, bucket_width=0.01, seed=8,
                          exact_fallback_threshold=threshold)
        )
        rng = np.random.default_rng(8)
        pts = [rng.uniform(size=16) for _ in range(200)]
        for i, p in enumerate(pts):
            idx.insert(i, p)
        triggered = 0
        for _ in range(100):
            q = rng.uniform(size=16)
            keys = idx._keys_for(idx._project(q))
            union = set()
            for table, key in zip(idx._tables, keys):
                union.update(table.get(int(key), ()))
            got_id, got_dist = idx.nearest(q)
            if len(union) < threshold:
                triggered += 1
                want_id, want_dist = brute_nearest(pts, list(range(200)), q)
                assert got_id == want_id
                assert got_dist == pytest.approx(want_dist, rel=1e-12)
        assert triggered > 50  # the scenario actually exercises the fallback

    def test_always_exact_threshold_matches_brute_force(self):
        idx = LshIndex(
            8,
            LshParams(num_hashes=4, bucket_width=4.0, seed=10,
                      exact_fallback_threshold=ALWAYS_EXACT),
        )
        rng = np.random.default_rng(10)
        pts = [rng.standard_normal(8) for _ in range(300)]
        for i, p in enumerate(pts):
            idx.insert(i, p)
        for _ in range(100):
            q = rng.standard_normal(8)
            got_id, got_dist = idx.nearest(q)
            want_id, want_dist = brute_nearest(pts, list(range(300)), q)
            assert got_id == want_id
            assert got_dist == pytest.approx(want_dist, rel=1e-12)

    @pytest.mark.parametrize("dim", [8, 32])
    def test_recall_smoke(self, dim):
        # full three-dim 1000-point version lives in the acceptance suite
        rng = np.random.default_rng(dim)
        pts = rng.uniform(size=(300, dim))
        idx = LshIndex(dim, LshParams(seed=7))
        for i, p in enumerate(pts):
            idx.insert(i, p)
        hits = 0
        for _ in range(200):
            q = rng.uniform(size=dim)
            got, _ = idx.nearest(q)
            hits += got == brute_nearest(list(pts), list(range(300)), q)[0]
        assert hits / 200 >= 0.95


class TestSplitQueries:
    def make_split_index(self, data_dim=3, weight_dim=5, n=40, seed=13):
        dim = data_dim + weight_dim
        idx = LshIndex(dim, LshParams(num_hashes=8, seed=seed), split_dim=data_dim)
        rng = np.random.default_rng(seed)
        weights = {f"w{j}": rng.standard_normal(weight_dim) for j in range(4)}
        for wid, vec in weights.items():
            idx.register_weight_sample(wid, vec)
        for i in range(n):
            d = rng.standard_normal(data_dim)
            w = weights[f"w{i % 4}"]
            idx.insert(i, np.concatenate([d, w]))
        return idx, weights, rng

    def test_projection_identity(self):
        idx, weights, rng = self.make_split_index()
        for _ in range(100):
            d = rng.standard_normal(3)
            w = rng.standard_normal(5)
            x = np.concatenate([d, w])
            full = idx._a @ x + idx._b
            split = idx._a0 @ d + idx._a1 @ w + idx._b
            np.testing.assert_allclose(full, split, atol=1e-9)

    def test_split_query_matches_concatenated(self):
        idx, weights, rng = self.make_split_index()
        for _ in range(500):
            d = rng.standard_normal(3)
            wid = f"w{int(rng.integers(0, 4))}"
            split_res = idx.nearest_split(d, wid)
            concat_res = idx.nearest(np.concatenate([d, weights[wid]]))
            assert split_res == concat_res  # bit-identical, not approximate

    def test_uncached_weight_sample_rejected(self):
        idx, _, _ = self.make_split_index()
        with pytest.raises(UsageError):
            idx.nearest_split(np.zeros(3), "nope")

    def test_register_on_unsplit_index_rejected(self):
        idx = LshIndex(4)
        with pytest.raises(UsageError):
            idx.register_weight_sample("w", np.zeros(2))
