import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from conftest import make_events
from curio_rank.errors import CurioRankWarning, UnknownEntityError
from curio_rank.nn import gradient_check
from curio_rank.relevance import (
    PARAM_NAMES,
    batch_loss,
    bidirectional_states,
    build_batch,
    encode_batch,
    encode_history,
    fit_ctr,
    init_ctr_model,
    item_latent,
    pad_histories,
    score_candidates,
    train_ctr,
    usefulness,
)


def small_model(seed=0, scale=0.5):
    return init_ctr_model(
        [1, 2], range(1, 7), dim=3, hidden=2, mlp_hidden=4, scale=scale, seed=seed
    )


def attention_weights(model, history):
    rows, mask = pad_histories([model.history_rows(history)])
    return encode_batch(model.params, rows, mask)[1][0]


class TestNetwork:
    def test_gradients(self):
        model = small_model()
        batch = build_batch(
            model,
            [1, 2],
            [[1, 2, 3], [4, 5]],
            [(0, 6, 1.0), (0, 2, 0.0), (1, 1, 1.0), (1, 3, 0.0)],
        )
        _, grads = batch_loss(model.params, batch)
        errors = gradient_check(
            lambda: batch_loss(model.params, batch, with_grads=False)[0], model.params, grads
        )
        assert set(errors) == set(PARAM_NAMES)
        assert max(errors.values()) < 1e-4

    def test_single_step_history(self):
        np.testing.assert_array_equal(attention_weights(small_model(), [3]), [1.0])

    def test_attention_is_distribution(self):
        weights = attention_weights(small_model(), [1, 2, 3, 4, 5])
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(weights >= 0)

    def test_attention_over_long_history(self, rng):
        history = rng.integers(1, 7, size=512).tolist()
        weights = attention_weights(small_model(scale=1.0), history)
        assert weights.shape == (512,)
        assert np.all(np.isfinite(weights))
        assert abs(weights.sum() - 1.0) <= 1e-9

    def test_mirror_property(self):
        params = small_model().params
        for name in ("W", "U", "b"):
            params[f"{name}_bwd"] = params[f"{name}_fwd"].copy()
        history = params["item_embedding"][[1, 4, 2]][None]
        mask = np.ones((1, 3))

        _, bwd, _ = bidirectional_states(params, history, mask)
        fwd_reversed, _, _ = bidirectional_states(params, history[:, ::-1], mask)
        np.testing.assert_allclose(bwd[0, ::-1], fwd_reversed[0], atol=1e-12)

    def test_zero_parameters_forget_history(self):
        model = small_model()
        for p in model.params.values():
            p[...] = 0.0
        first, second = encode_history(model, [1, 2, 3]), encode_history(model, [4, 5, 6])
        np.testing.assert_array_equal(first, second)

    def test_zero_mlp_gives_one_half(self):
        model = small_model()
        for name in ("W_hidden", "b_hidden", "w_out", "b_out"):
            model.params[name][...] = 0.0
        np.testing.assert_array_equal(score_candidates(model, 1, [1, 2], [3, 4, 5]), 0.5)

    def test_output_bias_is_monotone(self):
        model = small_model()
        before = usefulness(model, 1, 4, [1, 2, 3])
        model.params["b_out"] += 0.3
        assert usefulness(model, 1, 4, [1, 2, 3]) > before

    def test_scores_are_probabilities(self):
        scores = score_candidates(small_model(scale=2.0), 2, [5, 1, 2], [1, 2, 3, 4, 5, 6])
        assert np.all((scores > 0) & (scores < 1))

    def test_empty_history(self):
        with pytest.raises(ValueError):
            score_candidates(small_model(), 1, [], [1])

    def test_unknown_history_item(self):
        with pytest.raises(UnknownEntityError):
            score_candidates(small_model(), 1, [99], [1])

    def test_cold_user_uses_fallback(self):
        model = small_model()
        with pytest.warns(CurioRankWarning, match="cold user"):
            score = usefulness(model, 77, 2, [1, 3])
        assert 0.0 < score < 1.0


class TestItemLatent:
    def test_equals_initializer(self):
        model = small_model(seed=4)
        fresh = np.random.default_rng(4).uniform(-0.5, 0.5, size=(7, 3))
        np.testing.assert_array_equal(item_latent(model, 1), fresh[0])

    def test_copies_are_independent(self):
        model = small_model()
        first = item_latent(model, 1)
        first[:] = 99.0
        assert not np.array_equal(item_latent(model, 1), first)
        assert not np.shares_memory(item_latent(model, 2), model.params["item_embedding"])

    def test_repeatable(self):
        model = small_model()
        assert item_latent(model, 3).tobytes() == item_latent(model, 3).tobytes()

    def test_unknown(self):
        with pytest.raises(UnknownEntityError):
            item_latent(small_model(), 42)


class TestTraining:
    def test_memorizes_single_example(self):
        model = small_model()
        batch = build_batch(model, [1], [[1, 2]], [(0, 3, 1.0)])
        fit_ctr(model, lambda epoch, rng: [batch], epochs=200, lr=0.05)
        assert model.loss_history[-1] < 0.05

    def test_separable_clicks(self):
        rng = np.random.default_rng(21)
        n_users, good = 20, np.arange(1, 21)
        model = init_ctr_model(range(1, n_users + 1), range(1, 41), dim=6, hidden=4, seed=3)

        histories, train_targets, test_targets = [], [], []
        for u in range(1, n_users + 1):
            histories.append(rng.choice(good, size=5, replace=False).tolist())
            order = rng.permutation(np.arange(1, 41)).tolist()
            train_targets += [(u - 1, i, float(i <= 20)) for i in order[:12]]
            test_targets += [(u - 1, i, float(i <= 20)) for i in order[12:]]

        users = list(range(1, n_users + 1))
        train_batch = build_batch(model, users, histories, train_targets)
        fit_ctr(model, lambda epoch, rng: [train_batch], epochs=150, lr=0.02, seed=3)

        scores, labels = [], []
        for u in users:
            targets = [t for t in test_targets if t[0] == u - 1]
            items = [t[1] for t in targets]
            scores += score_candidates(model, u, histories[u - 1], items).tolist()
            labels += [t[2] for t in targets]
        assert roc_auc_score(labels, scores) > 0.95

    def test_deterministic(self):
        train = {u: make_events(u, [(u + k) % 9 + 1 for k in range(6)]) for u in range(1, 5)}
        first = train_ctr(train, range(1, 12), dim=3, hidden=2, mlp_hidden=4, epochs=2, seed=5)
        second = train_ctr(train, range(1, 12), dim=3, hidden=2, mlp_hidden=4, epochs=2, seed=5)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(first.params[name], second.params[name])
        assert len(first.loss_history) == 2

    def test_universe_covers_train_items(self):
        train = {1: make_events(1, [1, 2, 50])}
        model = train_ctr(train, range(1, 6), dim=2, hidden=2, mlp_hidden=2, epochs=1)
        assert 50 in model.item_index
        assert model.params["item_embedding"].shape == (7, 2)
