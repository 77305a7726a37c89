from itertools import combinations
import math

import numpy as np
import pytest
from scipy import sparse

from conftest import make_set
from curio_rank.curiosity import (
    CooccurrenceIndex,
    CuriosityProfile,
    aggregate_vector,
    build_cooccurrence_index,
    compute_profiles,
    cooccurrence_cosine,
    curiosity_profile,
    curiosity_score,
    preference_difference,
    profiles_frame,
    short_term_diversity,
)
from curio_rank.errors import CurioRankWarning, DataValidationError, UnknownEntityError


def random_index(rng, n_items=30, n_users=15):
    users = np.arange(1, n_users + 1)
    users_by_item = {}
    for item in range(1, n_items + 1):
        picked = rng.choice(users, size=rng.integers(1, 8), replace=False)
        users_by_item[item] = frozenset(picked.tolist())

    return CooccurrenceIndex(users_by_item)


class TestAggregateVector:
    def test_identical_vectors(self, rng):
        v = rng.normal(size=80)
        pset = make_set(1, range(20), vectors=np.tile(v, (20, 1)))
        np.testing.assert_allclose(aggregate_vector(pset), v, atol=1e-12)

    def test_symmetric_vectors_cancel(self):
        e1 = np.eye(3)[0]
        vectors = np.vstack([np.tile(e1, (10, 1)), -np.tile(e1, (10, 1))])
        pset = make_set(1, range(20), vectors=vectors)
        assert not np.any(aggregate_vector(pset))

    def test_summation_oracle(self, rng):
        vectors = rng.normal(size=(20, 80))
        expected = np.zeros(80)
        for v in vectors:
            expected = expected + v
        np.testing.assert_allclose(
            aggregate_vector(make_set(1, range(20), vectors=vectors)), expected / 20, atol=1e-12
        )

    def test_wrong_size(self):
        with pytest.raises(ValueError):
            aggregate_vector(make_set(1, range(5)))


class TestPreferenceDifference:
    def test_identical(self, rng):
        v = rng.normal(size=80)
        assert preference_difference(v, 3 * v) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_orthogonal(self):
        raw, norm = preference_difference(np.eye(80)[0], np.eye(80)[1])
        assert raw == pytest.approx(math.sqrt(2), abs=1e-12)
        assert norm == pytest.approx(0.707107, abs=1e-6)

    def test_opposite(self, rng):
        v = rng.normal(size=80)
        assert preference_difference(v, -v) == pytest.approx((2.0, 1.0), abs=1e-12)

    def test_symmetric_and_scale_invariant(self, rng):
        for _ in range(50):
            a, b = rng.normal(size=(2, 80))
            s, t = rng.uniform(1e-3, 1e3, size=2)
            raw, norm = preference_difference(a, b)
            assert preference_difference(b, a) == pytest.approx((raw, norm), abs=1e-12)
            assert preference_difference(s * a, t * b) == pytest.approx((raw, norm), abs=1e-12)

    def test_zero_vector_is_degenerate(self):
        with pytest.warns(CurioRankWarning):
            assert preference_difference(np.zeros(4), np.ones(4)) == (0.0, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            preference_difference(np.ones(4), np.ones(5))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            preference_difference(np.array([np.nan, 1.0]), np.ones(2))


class TestCooccurrence:
    def test_identical_user_sets(self):
        index = CooccurrenceIndex({1: frozenset({1, 2, 3}), 2: frozenset({1, 2, 3})})
        assert cooccurrence_cosine(index, 1, 2) == 1.0

    def test_disjoint_user_sets(self):
        index = CooccurrenceIndex({1: frozenset({1, 2}), 2: frozenset({3})})
        assert cooccurrence_cosine(index, 1, 2) == 0.0

    def test_partial_overlap(self):
        index = CooccurrenceIndex({1: frozenset({1, 2, 3, 10}), 2: frozenset(range(1, 10))})
        assert cooccurrence_cosine(index, 1, 2) == pytest.approx(0.5, abs=1e-12)

    def test_unknown_item(self):
        index = CooccurrenceIndex({1: frozenset({1})})
        with pytest.raises(UnknownEntityError):
            cooccurrence_cosine(index, 1, 2)

    def test_index_from_short_sets(self):
        index = build_cooccurrence_index([make_set(1, [5, 6]), make_set(2, [6, 7])])
        assert index.users_by_item == {5: {1}, 6: {1, 2}, 7: {2}}
        assert index.membership.shape == (3, 2)
        assert index.membership.nnz == 4

    def test_large_index_is_sparse(self, rng):
        users_by_item = {
            item: frozenset(rng.choice(np.arange(5000), size=3, replace=False).tolist())
            for item in range(4000)
        }
        index = CooccurrenceIndex(users_by_item)
        assert sparse.issparse(index.membership)
        assert index.membership.nnz == 3 * 4000
        items = list(range(20))
        expected = [
            len(users_by_item[m] & users_by_item[n]) / 3 for m, n in combinations(items, 2)
        ]
        assert [cooccurrence_cosine(index, m, n) for m, n in combinations(items, 2)] == (
            pytest.approx(expected, abs=1e-12)
        )


class TestShortTermDiversity:
    def test_identical_sets(self):
        index = CooccurrenceIndex({item: frozenset({1, 2, 3}) for item in range(20)})
        assert short_term_diversity(index, make_set(1, range(20))) == 0.0

    def test_disjoint_sets(self):
        index = CooccurrenceIndex({item: frozenset({item}) for item in range(20)})
        assert short_term_diversity(index, make_set(1, range(20))) == 1.0

    def test_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            index = random_index(rng)
            items = rng.choice(np.arange(1, 31), size=20, replace=False).tolist()
            cosines = [
                len(index.users_by_item[m] & index.users_by_item[n])
                / math.sqrt(len(index.users_by_item[m]) * len(index.users_by_item[n]))
                for m, n in combinations(items, 2)
            ]
            expected = 1.0 - sum(cosines) / len(cosines)
            assert short_term_diversity(index, make_set(1, items)) == pytest.approx(
                expected, abs=1e-12
            )


class TestCuriosityScore:
    @pytest.mark.parametrize("diff, div, expected", [(0, 0, 0), (0.4, 0.6, 0.5), (1, 1, 1)])
    def test_mean(self, diff, div, expected):
        assert curiosity_score(diff, div) == pytest.approx(expected, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            curiosity_score(1.2, 0.5)

    def test_profile_validation(self):
        with pytest.raises(DataValidationError):
            CuriosityProfile(1, 0.0, 0.0, 1.5, 0.75)


class TestProfiles:
    def sets(self, rng, n_users=12, n_items=40, dim=5):
        vectors = rng.normal(size=(n_items + 1, dim))
        long_sets, short_sets = {}, {}
        for u in range(1, n_users + 1):
            for kind, target in (("long", long_sets), ("short", short_sets)):
                items = rng.choice(np.arange(1, n_items + 1), size=20, replace=False).tolist()
                target[u] = make_set(u, items, kind, vectors=vectors[items])
        return long_sets, short_sets

    def test_bounds_and_mean(self, rng):
        long_sets, short_sets = self.sets(rng)
        profiles = compute_profiles(long_sets, short_sets, x=30)
        assert sorted(profiles) == list(range(1, 13))
        for p in profiles.values():
            assert 0.0 <= p.diff_norm <= 1.0 and 0.0 <= p.div <= 1.0
            assert 0.0 <= p.curiosity <= 1.0
            assert p.curiosity == pytest.approx((p.diff_norm + p.div) / 2, abs=1e-12)
            assert p.x_used == 30

    def test_threads_do_not_change_profiles(self, rng):
        long_sets, short_sets = self.sets(rng)
        assert compute_profiles(long_sets, short_sets, threads=1) == compute_profiles(
            long_sets, short_sets, threads=4
        )

    def test_degenerate_flag(self):
        long_set = make_set(1, range(20), "long", vectors=np.zeros((20, 3)))
        short_set = make_set(1, range(20), "short", vectors=np.ones((20, 3)))
        index = build_cooccurrence_index([short_set])
        with pytest.warns(CurioRankWarning):
            profile = curiosity_profile(long_set, short_set, index)
        assert profile.degenerate
        assert profile.diff_raw == 0.0 and profile.div == 0.0

    def test_user_mismatch(self):
        short_set = make_set(2, range(20))
        with pytest.raises(ValueError):
            curiosity_profile(
                make_set(1, range(20), "long"), short_set, build_cooccurrence_index([short_set])
            )

    def test_frame(self, rng):
        long_sets, short_sets = self.sets(rng, n_users=3)
        frame = profiles_frame(compute_profiles(long_sets, short_sets))
        assert list(frame.columns) == ["user_id", "diff_raw", "diff_norm", "div", "curiosity"]
        assert frame["user_id"].tolist() == [1, 2, 3]
