"""Histogram core: construction, the documented update steps, queries."""

import math

import numpy as np
import pytest

from ochstream import Och, OchParams, ConfigError, InputError, StateError

GATES_OFF = -math.inf


def make_two_entry_och(lam, counts=(6.0, 4.0), phi_logit=GATES_OFF, seed=7):
    """Histogram primed with entries at known counts (white-box setup)."""
    och = Och(2, OchParams(k_target=5, lambda_=lam, phi_logit=phi_logit, rng_seed=seed))
    och._add_entry(np.array([0.0, 0.0]), counts[0])
    och._add_entry(np.array([10.0, 10.0]), counts[1])
    och.total_count = float(sum(counts))
    return och


class TestConstruction:
    def test_empty_initial_state(self):
        och = Och(4)
        assert len(och) == 0
        assert och.total_count == 0.0

    def test_zero_dimension_rejected(self):
        with pytest.raises(ConfigError):
            Och(0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            Och(4, OchParams(lambda_=-1.0))

    def test_zero_k_target_rejected(self):
        with pytest.raises(ConfigError):
            Och(4, OchParams(k_target=0))

    def test_nonpositive_count_floor_rejected(self):
        with pytest.raises(ConfigError):
            Och(4, OchParams(count_floor=0.0))


class TestUpdate:
    def test_first_insert(self):
        och = Och(3, OchParams(rng_seed=1))
        v = np.array([1.0, 2.0, 3.0])
        out = och.update(v, 1.0)
        assert len(och) == 1
        assert och.total_count == 1.0
        assert out.delta_count == 1.0
        assert out.alpha == 1.0
        assert out.matched_id == out.inserted_id
        np.testing.assert_array_equal(och.entries[out.matched_id].vector, v)

    def test_no_decay_no_gates_increments_matched(self):
        och = Och(2, OchParams(k_target=5, lambda_=0.0, phi_logit=GATES_OFF, rng_seed=3))
        c = np.array([1.0, 1.0])
        och.update(c, 10.0)
        out = och.update(c + 0.01, 1.0)
        assert len(och) == 1
        assert och.entries[out.matched_id].count == 11.0
        assert out.delta_count == 1.0
        assert out.alpha == pytest.approx(1.0 / 11.0, abs=0.0)

    def test_hand_computed_decay_trace(self):
        # two entries (6, 4), lambda=5, gates off, input nearest the first
        och = make_two_entry_och(lam=5.0)
        out = och.update(np.array([0.1, 0.0]), 1.0)
        f = math.exp(-5.0 / 11.0)
        assert out.matched_id == 0
        assert out.inserted_id is None
        assert out.deleted_ids == []
        assert och.entries[0].count == pytest.approx(7.0 * f, rel=1e-12)
        assert och.entries[1].count == pytest.approx(4.0 * f, rel=1e-12)
        assert out.delta_count == pytest.approx(7.0 * f - 6.0, rel=1e-12)
        assert out.total_count_after == pytest.approx(11.0 * f, rel=1e-12)
        assert out.alpha == pytest.approx((7.0 * f - 6.0) / (11.0 * f), rel=1e-12)

    def test_dimension_mismatch(self):
        och = Och(3)
        with pytest.raises(InputError):
            och.update(np.zeros(2), 1.0)

    def test_nonpositive_count(self):
        och = Och(2)
        with pytest.raises(InputError):
            och.update(np.zeros(2), 0.0)

    def test_forced_insert_splits_matched_mass(self):
        och = Och(2, OchParams(k_target=5, lambda_=2.0, phi_logit=GATES_OFF, rng_seed=9))
        och.update(np.array([0.0, 0.0]), 5.0)
        out = och.update(np.array([3.0, 0.0]), 1.0, force_insert=True)
        assert out.inserted_id is not None
        assert len(och) == 2
        f = math.exp(-2.0 / 6.0)
        # the new entry got n_i * f of the matched mass, then decayed once more
        assert och.entries[out.inserted_id].count == pytest.approx(6.0 * f * f, rel=1e-12)

    def test_deletion_never_empties(self):
        # lambda huge: the floor would remove everything without protection
        och = Och(1, OchParams(k_target=2, lambda_=500.0, phi_logit=GATES_OFF, rng_seed=5))
        och.update(np.array([0.0]), 1.0)
        for t in range(20):
            och.update(np.array([float(t % 3)]), 1.0)
            assert len(och) >= 1
            assert och.total_count > 0


class TestGateSentinels:
    def test_minus_inf_disables_gates(self):
        och = Och(1, OchParams(k_target=1, lambda_=0.0, phi_logit=GATES_OFF, rng_seed=0))
        och.update(np.array([0.0]), 1.0)
        for _ in range(200):
            och.update(np.array([0.0]), 1.0)
        assert len(och) == 1  # no insertions, no deletions, ever

    def test_plus_inf_always_inserts(self):
        och = Och(1, OchParams(k_target=50, lambda_=1.0, phi_logit=math.inf, rng_seed=0))
        och.update(np.array([0.0]), 1.0)
        sizes = []
        for t in range(30):
            before = len(och)
            out = och.update(np.array([float(t)]), 1.0)
            assert out.inserted_id is not None or out.inserted_id in out.deleted_ids or len(och) >= before
            sizes.append(len(och))
        assert sizes[-1] > 10  # insertions dominate the occasional deletion


class TestDensity:
    def test_single_entry_mass_is_one(self):
        och = Och(2, OchParams(rng_seed=2))
        och.update(np.array([1.0, 1.0]), 3.0)
        assert och.density(np.array([50.0, -2.0])) == 1.0

    def test_two_entry_masses(self):
        och = make_two_entry_och(lam=5.0)
        assert och.density(np.array([9.0, 10.0])) == pytest.approx(0.4)
        assert och.density(np.array([0.0, 0.1])) == pytest.approx(0.6)

    def test_masses_after_decay_trace(self):
        och = make_two_entry_och(lam=5.0)
        och.update(np.array([0.1, 0.0]), 1.0)
        f = math.exp(-5.0 / 11.0)
        assert och.density(np.array([0.0, 0.0])) == pytest.approx(7.0 * f / (11.0 * f), rel=1e-12)
        assert och.density(np.array([10.0, 10.0])) == pytest.approx(4.0 * f / (11.0 * f), rel=1e-12)

    def test_empty_histogram_is_state_error(self):
        with pytest.raises(StateError):
            Och(2).density(np.zeros(2))


class TestSample:
    def test_single_entry_always_returned(self):
        och = Och(2, OchParams(rng_seed=11))
        och.update(np.array([1.0, 0.0]), 2.0)
        ids = {och.sample().id for _ in range(50)}
        assert ids == {0}

    def test_empirical_frequencies(self):
        och = make_two_entry_och(lam=0.0, seed=123)
        rng = np.random.default_rng(np.random.Philox(key=99))
        n = 10_000
        hits = sum(1 for _ in range(n) if och.sample(rng).id == 0)
        # binomial 3-sigma band around p=0.6
        sigma = math.sqrt(0.6 * 0.4 / n)
        assert abs(hits / n - 0.6) <= 3 * sigma

    def test_empty_histogram_is_state_error(self):
        with pytest.raises(StateError):
            Och(2).sample()


class TestSplitUpdates:
    def make_split_och(self, seed):
        och = Och(5, OchParams(k_target=4, lambda_=3.0, phi_logit=1.0, rng_seed=seed))
        och.enable_split(2)
        rng = np.random.default_rng(seed)
        weights = {f"w{j}": rng.standard_normal(3) for j in range(3)}
        for wid, vec in weights.items():
            och.index.register_weight_sample(wid, vec)
        return och, weights

    def test_split_update_equals_concatenated_update(self):
        a, weights = self.make_split_och(seed=31)
        b, _ = self.make_split_och(seed=31)
        rng = np.random.default_rng(31)
        for _ in range(200):
            d = rng.standard_normal(2)
            wid = f"w{int(rng.integers(0, 3))}"
            out_a = a.update_split(d, wid, 1.0)
            out_b = b.update(np.concatenate([d, weights[wid]]), 1.0)
            assert out_a == out_b
        assert list(a.entries) == list(b.entries)
        for key in a.entries:
            assert a.entries[key].count == b.entries[key].count

    def test_unregistered_weight_sample_rejected(self):
        och, _ = self.make_split_och(seed=32)
        with pytest.raises(InputError):
            och.update_split(np.zeros(2), "nope", 1.0)

    def test_unsplit_histogram_rejects_split_updates(self):
        och = Och(4)
        with pytest.raises(StateError):
            och.update_split(np.zeros(2), "w0", 1.0)


class CountingRng:
    def __init__(self, rng):
        self._rng = rng
        self.calls = 0

    def random(self):
        self.calls += 1
        return self._rng.random()


class TestRngSchedule:
    def test_draw_counts_documented(self):
        och = Och(1, OchParams(k_target=3, lambda_=0.0, phi_logit=GATES_OFF, rng_seed=4))
        counter = CountingRng(och._rng)
        och._rng = counter
        och.update(np.array([0.0]), 1.0)  # bootstrap: no draws
        assert counter.calls == 0
        och.update(np.array([0.0]), 1.0)  # 1 insertion draw + 1 deletion draw
        assert counter.calls == 2
        och.update(np.array([5.0]), 1.0, force_insert=True)
        # forced insert still burns the insertion draw; deletion pass now sees 2 entries
        assert counter.calls == 2 + 1 + 2
