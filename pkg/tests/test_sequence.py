import numpy as np
import pytest

from conftest import make_events, make_factor_model
from curio_rank.errors import CurioRankWarning, UnknownEntityError
from curio_rank.nn import gradient_check
from curio_rank.sequence import (
    PARAM_NAMES,
    SequenceModel,
    attention_backward,
    attention_forward,
    cell_forward,
    cell_step,
    encode_session,
    init_sequence_params,
    sample_negatives,
    session_loss,
    short_term_preferences,
    train_sequence_model,
    zero_grads,
)


def zero_params(dim):
    params = init_sequence_params(dim, dim, np.random.default_rng(0))
    return {name: np.zeros_like(p) for name, p in params.items()}


class TestCell:
    def test_zero_weights(self, rng):
        params = zero_params(4)
        c_prev = rng.normal(size=4)
        h, c = cell_step(params, rng.normal(size=4), c_prev, rng.normal(size=4), 60.0)
        np.testing.assert_allclose(c, 0.5 * c_prev, atol=1e-15)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_zero_delta_time_gate(self, rng):
        params = init_sequence_params(3, 3, rng, scale=1.0)
        _, _, cache = cell_forward(params, rng.normal(size=3), np.zeros(3), np.zeros(3), 0.0)
        tau, s = cache[9], cache[8]
        assert tau == 0.0
        np.testing.assert_array_equal(s, np.full(3, 0.5))

    def test_gate_ranges(self, rng):
        params = init_sequence_params(5, 5, rng, scale=2.0)
        x, h_prev = rng.normal(size=5), rng.normal(size=5)
        _, _, cache = cell_forward(params, x, h_prev, np.zeros(5), 9.0)
        _, _, _, i, f, o, g, T, _, _, _ = cache
        for gate in (i, f, o, T):
            assert np.all((gate > 0) & (gate < 1))
        assert np.all(np.abs(g) < 1)

    def test_large_delta_stays_finite(self, rng):
        params = init_sequence_params(4, 4, rng, scale=1.0)
        for delta_t in (0.0, 1.0, 3.6e3, 8.64e4, 3.15e7, 3.15e8):
            h_prev, c_prev, x = rng.normal(size=(3, 4))
            h, c = cell_step(params, h_prev, c_prev, x, delta_t)
            assert np.all(np.isfinite(h))
            assert np.all(np.isfinite(c))

    def test_negative_delta(self, rng):
        params = init_sequence_params(3, 3, rng)
        with pytest.raises(ValueError):
            cell_forward(params, np.zeros(3), np.zeros(3), np.zeros(3), -1.0)

    def test_dimension_mismatch(self, rng):
        params = init_sequence_params(3, 3, rng)
        with pytest.raises(ValueError):
            cell_forward(params, np.zeros(4), np.zeros(3), np.zeros(3), 0.0)

    def test_hidden_must_match_input(self, rng):
        with pytest.raises(ValueError):
            init_sequence_params(4, 5, rng)


class TestAttention:
    def test_weights_are_causal_distributions(self, rng):
        states = rng.normal(size=(5, 3))
        _, weights, _ = attention_forward(rng.normal(size=(3, 3)), states)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(weights >= 0)
        assert np.all(weights[np.triu_indices(5, k=1)] == 0)
        assert weights[0, 0] == 1.0

    def test_gradients(self, rng):
        params = {"W_query": rng.normal(size=(3, 3)), "states": rng.normal(size=(4, 3))}
        target = rng.normal(size=(4, 3))

        def loss():
            pooled, _, _ = attention_forward(params["W_query"], params["states"])
            return float(np.sum(pooled * target))

        _, _, cache = attention_forward(params["W_query"], params["states"])
        grads = {"W_query": np.zeros((3, 3))}
        grads["states"] = attention_backward(params["W_query"], target, cache, grads)

        errors = gradient_check(loss, params, grads)
        assert max(errors.values()) < 1e-4


class TestSessionLoss:
    def test_gradients(self, rng):
        params = init_sequence_params(3, 3, rng, scale=0.5)
        inputs = rng.normal(size=(4, 3))
        deltas = np.array([0.0, 30.0, 3600.0, 5.0])
        positives = rng.normal(size=(4, 3))
        negatives = rng.normal(size=(4, 3))

        _, grads = session_loss(params, inputs, deltas, positives, negatives)
        errors = gradient_check(
            lambda: session_loss(params, inputs, deltas, positives, negatives, False)[0],
            params,
            grads,
        )
        assert set(errors) == set(PARAM_NAMES)
        assert max(errors.values()) < 1e-4

    def test_zero_grads_shapes(self, rng):
        params = init_sequence_params(3, 3, rng)
        assert {k: v.shape for k, v in zero_grads(params).items()} == {
            k: v.shape for k, v in params.items()
        }


class TestTraining:
    def factor_model(self, n_items=4, dim=4):
        return make_factor_model(np.random.default_rng(3), 2, n_items, dim)

    def test_single_event_sessions_skipped(self):
        factor = self.factor_model()
        with pytest.warns(CurioRankWarning):
            model = train_sequence_model({1: make_events(1, [1])}, factor, hidden=4, seed=2)
        expected = init_sequence_params(4, 4, np.random.default_rng(2))
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(model.params[name], expected[name])
        assert model.loss_history == []

    def test_deterministic(self):
        factor = self.factor_model()
        sessions = {1: make_events(1, [1, 2, 3, 4]), 2: make_events(2, [4, 3, 2])}
        first = train_sequence_model(sessions, factor, hidden=4, epochs=2, seed=9)
        second = train_sequence_model(sessions, factor, hidden=4, epochs=2, seed=9)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_learns_alternation(self):
        factor = self.factor_model()
        sessions = {
            1: make_events(1, [1, 2, 1, 2, 1, 2, 1, 2, 1]),
            2: make_events(2, [3, 4, 3, 4, 3, 4]),
        }
        model = train_sequence_model(sessions, factor, hidden=4, lr=0.05, epochs=60, seed=1)
        pooled, _ = encode_session(model, factor, sessions[1])
        assert pooled @ factor.item_vector(2) > pooled @ factor.item_vector(3)
        assert model.loss_history[-1] < model.loss_history[0]

    def test_encode_session_with_year_gaps(self):
        factor = self.factor_model()
        sessions = {1: make_events(1, [1, 2, 3, 4], step=315_000_000)}
        model = train_sequence_model(sessions, factor, hidden=4, epochs=2, seed=4)
        pooled, weights = encode_session(model, factor, sessions[1])
        assert np.all(np.isfinite(pooled))
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert all(np.isfinite(loss) for loss in model.loss_history)

    def test_unknown_item(self):
        with pytest.raises(UnknownEntityError):
            train_sequence_model({1: make_events(1, [1, 99])}, self.factor_model(), hidden=4)

    def test_negatives_differ_from_positives(self, rng):
        positives = rng.integers(0, 5, size=500)
        negatives = sample_negatives(rng, positives, 5)
        assert np.all(negatives != positives)
        assert negatives.min() >= 0 and negatives.max() <= 4


class TestShortTermPreferences:
    def test_forced_selection(self, rng):
        factor = make_factor_model(rng, 1, 20, 4)
        model = SequenceModel(init_sequence_params(4, 4, rng))
        pset = short_term_preferences(model, factor, make_events(1, [3, 5, 7]), range(1, 21))
        assert sorted(pset.items) == list(range(1, 21))
        assert pset.kind == "short"

    def test_zero_state_ties_to_smallest_ids(self, rng):
        factor = make_factor_model(rng, 1, 40, 4)
        model = SequenceModel(zero_params(4))
        pset = short_term_preferences(model, factor, make_events(1, [30, 31]), range(1, 41))
        assert pset.items == tuple(range(1, 21))

    def test_matches_sort_oracle(self, rng):
        factor = make_factor_model(rng, 1, 100, 6)
        model = SequenceModel(init_sequence_params(6, 6, rng, scale=0.5))
        session = make_events(1, [5, 9, 2, 77])
        pooled, _ = encode_session(model, factor, session)
        scores = {i: float(factor.item_vector(i) @ pooled) for i in range(1, 101)}
        oracle = sorted(scores, key=lambda i: (-scores[i], i))[:20]
        pset = short_term_preferences(model, factor, session, range(1, 101))
        assert list(pset.items) == oracle

    def test_empty_session(self, rng):
        factor = make_factor_model(rng, 1, 20, 4)
        with pytest.raises(ValueError):
            encode_session(SequenceModel(init_sequence_params(4, 4, rng)), factor, [])
