from dataclasses import dataclass

import numpy as np
import pytest

from conftest import make_events, make_factor_model
from curio_rank.corpus import Interaction
from curio_rank.errors import CurioRankWarning, UnknownEntityError
from curio_rank.factorization import (
    FactorModel,
    PreferenceSet,
    long_term_preferences,
    long_term_sets,
    predict_affinity,
    train_factors,
)


@dataclass(frozen=True)
class Rating:
    user_id: int
    item_id: int
    rating: float


def zero_model(n_users=2, n_items=3, dim=4, mean=3.5):
    return FactorModel(
        user_ids=np.arange(1, n_users + 1),
        item_ids=np.arange(1, n_items + 1),
        user_factors=np.zeros((n_users, dim)),
        item_factors=np.zeros((n_items, dim)),
        user_bias=np.zeros(n_users),
        item_bias=np.zeros(n_items),
        global_mean=mean,
    )


class TestPredictAffinity:
    def test_zero_model(self):
        model = zero_model()
        assert predict_affinity(model, 1, 2) == 3.5

    def test_unit_basis(self):
        model = zero_model(mean=0.0)
        model.user_factors[0, 0] = 1.0
        model.item_factors[0, 0] = 1.0
        assert predict_affinity(model, 1, 1) == 1.0

    def test_dot_product_oracle(self, rng):
        model = make_factor_model(rng, 5, 7, 80)
        u, i = 3, 6
        expected = model.global_mean + model.user_bias[u - 1] + model.item_bias[i - 1]
        p, q = model.user_factors[u - 1], model.item_factors[i - 1]
        expected += sum(a * b for a, b in zip(p, q))
        assert predict_affinity(model, u, i) == pytest.approx(expected, abs=1e-12)

    def test_cold_item_warns(self):
        model = zero_model()
        with pytest.warns(CurioRankWarning, match="cold"):
            assert predict_affinity(model, 1, 99) == 3.5


class TestTrainFactors:
    def train(self, **kwargs):
        train = {u: make_events(u, range(1, 9), rating=1 + u % 5) for u in range(1, 7)}
        return train, train_factors(train, dim=4, epochs=3, **kwargs)

    def test_shapes_and_mean(self):
        train, model = self.train(seed=0)
        ratings = [e.rating for events in train.values() for e in events]
        assert model.user_factors.shape == (6, 4)
        assert model.item_factors.shape == (8, 4)
        assert np.all(np.isfinite(model.item_factors))
        assert model.global_mean == pytest.approx(np.mean(ratings), abs=1e-9)
        assert len(model.loss_history) == 3

    def test_default_dimension(self):
        model = train_factors({1: make_events(1, [1, 2])}, epochs=1)
        assert model.item_factors.shape == (2, 80)

    def test_deterministic(self):
        _, first = self.train(seed=5)
        _, second = self.train(seed=5)
        np.testing.assert_array_equal(first.item_factors, second.item_factors)
        np.testing.assert_array_equal(first.user_bias, second.user_bias)

    def test_zero_residual_fixed_point(self):
        model = train_factors([Interaction(1, 1, 5, 100)], dim=3, epochs=1, init_std=0.0)
        assert model.global_mean == 5.0
        assert not np.any(model.user_factors)
        assert not np.any(model.item_factors)
        assert model.user_bias[0] == 0.0
        assert model.item_bias[0] == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            train_factors({})

    def test_recovers_low_rank_matrix(self):
        rng = np.random.default_rng(8)
        n_users, n_items, rank = 200, 300, 8
        truth = rng.normal(0, 0.5, (n_users, rank)) @ rng.normal(0, 0.5, (rank, n_items))
        observed = truth + rng.normal(0, 0.1, truth.shape)
        draw = rng.random(truth.shape)
        train_cells = np.argwhere(draw < 0.5)
        test_cells = np.argwhere(draw >= 0.9)

        train = [Rating(int(u) + 1, int(i) + 1, float(observed[u, i])) for u, i in train_cells]
        model = train_factors(train, dim=8, lr=0.03, reg=0.005, epochs=20, seed=0, init_std=0.3)

        u_rows = np.array([model.user_index[int(u) + 1] for u, _ in test_cells])
        i_rows = np.array([model.item_index[int(i) + 1] for _, i in test_cells])
        predicted = (
            model.global_mean
            + model.user_bias[u_rows]
            + model.item_bias[i_rows]
            + np.einsum("ij,ij->i", model.user_factors[u_rows], model.item_factors[i_rows])
        )
        actual = observed[test_cells[:, 0], test_cells[:, 1]]
        assert np.sqrt(np.mean((predicted - actual) ** 2)) < 0.15

    def test_regularization_shrinks_factors(self):
        rng = np.random.default_rng(3)
        truth = rng.normal(0, 0.7, (60, 4)) @ rng.normal(0, 0.7, (4, 80))
        cells = np.argwhere(rng.random(truth.shape) < 0.5)
        train = [Rating(int(u) + 1, int(i) + 1, float(3 + truth[u, i])) for u, i in cells]

        norms = []
        for reg in (0.0, 0.1, 1.0):
            model = train_factors(train, dim=4, lr=0.02, reg=reg, epochs=10, seed=0)
            factors = np.vstack([model.user_factors, model.item_factors])
            norms.append(np.linalg.norm(factors, axis=1).mean())
        assert norms[0] > norms[1] > norms[2]


class TestLongTermPreferences:
    def test_forced_selection(self, rng):
        model = make_factor_model(rng, 3, 20, 5)
        pset = long_term_preferences(model, 2, range(1, 21))
        scores = [predict_affinity(model, 2, i) for i in pset.items]
        assert sorted(pset.items) == list(range(1, 21))
        assert scores == sorted(scores, reverse=True)

    def test_tie_break(self):
        model = zero_model(n_users=1, n_items=25)
        pset = long_term_preferences(model, 1, range(1, 26))
        assert pset.items == tuple(range(1, 21))

    def test_matches_sort_oracle(self, rng):
        model = make_factor_model(rng, 4, 200, 80)
        pset = long_term_preferences(model, 4, range(1, 201))
        scores = {i: predict_affinity(model, 4, i) for i in range(1, 201)}
        oracle = sorted(scores, key=lambda i: (-scores[i], i))[:20]
        assert list(pset.items) == oracle

    def test_catalog_order_irrelevant(self, rng):
        model = make_factor_model(rng, 3, 100, 6)
        expected = long_term_preferences(model, 2, range(1, 101))
        for _ in range(5):
            shuffled = rng.permutation(np.arange(1, 101)).tolist()
            pset = long_term_preferences(model, 2, shuffled)
            assert pset.items == expected.items
            np.testing.assert_array_equal(pset.vectors, expected.vectors)

    def test_vectors_are_item_factors(self, rng):
        model = make_factor_model(rng, 2, 30, 6)
        pset = long_term_preferences(model, 1, range(1, 31))
        for item, vector in zip(pset.items, pset.vectors):
            np.testing.assert_array_equal(vector, model.item_vector(item))

    def test_unknown_user(self, rng):
        with pytest.raises(UnknownEntityError):
            long_term_preferences(make_factor_model(rng, 2, 30, 4), 99, range(1, 31))

    def test_small_catalog(self, rng):
        with pytest.raises(ValueError, match="rankable"):
            long_term_preferences(make_factor_model(rng, 2, 30, 4), 1, range(1, 11))

    def test_sets_by_user_independent_of_threads(self, rng):
        model = make_factor_model(rng, 6, 40, 4)
        single = long_term_sets(model, range(1, 7), range(1, 41), threads=1)
        pooled = long_term_sets(model, range(1, 7), range(1, 41), threads=3)
        assert [s.items for s in single.values()] == [s.items for s in pooled.values()]


class TestPreferenceSet:
    def test_distinct_items(self):
        with pytest.raises(ValueError):
            PreferenceSet(1, "long", (1, 1), np.zeros((2, 3)))

    def test_kind(self):
        with pytest.raises(ValueError):
            PreferenceSet(1, "medium", (1, 2), np.zeros((2, 3)))
