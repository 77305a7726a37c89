"""Short-term preference model: a time-aware LSTM over the trailing session with causal
dot-product attention pooling, trained for next-item ranking on frozen item factors.

Cell update for input x, elapsed seconds dt and gate pre-activations a = W x + U h + b:

    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    T = sigmoid(W_time x + sigmoid(w_time * log1p(dt)) + b_time)
    c = f * c_prev + i * T * g;  h = o * tanh(c)
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from curio_rank.corpus import session_suffix, time_deltas
from curio_rank.errors import CurioRankWarning, DivergenceError, UnknownEntityError
from curio_rank.factorization import PREFERENCE_SET_SIZE, known_item_rows, top_preferences
from curio_rank.nn import Adam, clip_by_global_norm, init_uniform, sigmoid, softmax, softplus
from curio_rank.workers import parallel_map

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W", "U", "b", "W_time", "w_time", "b_time", "W_query")


@dataclass
class SequenceModel:
    """Cell and pooler parameters. Item embeddings are not owned here: inputs and output
    scores both use the shared factorization item factors."""

    params: dict
    loss_history: list = field(default_factory=list)

    @property
    def hidden(self):
        return self.params["U"].shape[1]

    @property
    def input_dim(self):
        return self.params["W"].shape[1]

    def to_arrays(self):
        arrays = {name: self.params[name] for name in PARAM_NAMES}
        arrays["loss_history"] = np.asarray(self.loss_history, dtype=np.float64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays):
        return cls(
            params={name: np.array(arrays[name], dtype=np.float64) for name in PARAM_NAMES},
            loss_history=[float(v) for v in arrays["loss_history"]],
        )


def init_sequence_params(input_dim, hidden, rng, scale=0.1):
    """Seeded uniform initialization of every cell and pooler tensor.

    Parameters:
        input_dim (int): item embedding size
        hidden (int): hidden size (must equal input_dim for dot-product scoring)
        rng (np.random.Generator): random source
        scale (float): half-width of the uniform range

    Returns:
        dict: parameter name -> array
    """

    if hidden != input_dim:
        raise ValueError(
            f"hidden size {hidden} must equal the item factor dimension {input_dim}"
        )

    return {
        "W": init_uniform(rng, (4 * hidden, input_dim), scale),
        "U": init_uniform(rng, (4 * hidden, hidden), scale),
        "b": np.zeros(4 * hidden),
        "W_time": init_uniform(rng, (hidden, input_dim), scale),
        "w_time": init_uniform(rng, (hidden,), scale),
        "b_time": np.zeros(hidden),
        "W_query": init_uniform(rng, (hidden, hidden), scale),
    }


def zero_grads(params):
    return {name: np.zeros_like(p) for name, p in params.items()}


def cell_forward(params, x, h_prev, c_prev, delta_t):
    """One time-aware LSTM step.

    Parameters:
        params (dict): cell parameters
        x (np.ndarray): item embedding
        h_prev (np.ndarray): previous hidden state
        c_prev (np.ndarray): previous cell state
        delta_t (float): seconds since the previous event (0 for the first)

    Returns:
        tuple: (hidden, cell, cache for < cell_backward() >)
    """

    if delta_t < 0:
        raise ValueError(f"time delta must be non-negative, got {delta_t}")
    if x.shape[0] != params["W"].shape[1]:
        raise ValueError(f"embedding has {x.shape[0]} entries, expected {params['W'].shape[1]}")

    H = params["U"].shape[1]
    a = params["W"] @ x + params["U"] @ h_prev + params["b"]
    i = sigmoid(a[:H])
    f = sigmoid(a[H : 2 * H])
    o = sigmoid(a[2 * H : 3 * H])
    g = np.tanh(a[3 * H :])

    tau = np.log1p(delta_t)
    s = sigmoid(params["w_time"] * tau)
    T = sigmoid(params["W_time"] @ x + s + params["b_time"])

    c = f * c_prev + i * T * g
    tc = np.tanh(c)
    h = o * tc

    cache = (x, h_prev, c_prev, i, f, o, g, T, s, tau, tc)

    return h, c, cache


def cell_step(params, prev_hidden, prev_cell, item_embedding, delta_t):
    h, c, _ = cell_forward(params, item_embedding, prev_hidden, prev_cell, delta_t)
    return h, c


def cell_backward(params, dh, dc, cache, grads):
    """Backpropagates one cell step, accumulating parameter gradients into < grads >.

    Parameters:
        params (dict): cell parameters
        dh (np.ndarray): loss gradient w.r.t. the step's hidden output
        dc (np.ndarray): loss gradient w.r.t. the step's cell output (from the next step)
        cache (tuple): from < cell_forward() >
        grads (dict): gradient accumulators

    Returns:
        tuple: (d hidden_prev, d cell_prev)
    """

    x, h_prev, c_prev, i, f, o, g, T, s, tau, tc = cache

    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc**2)
    di = dc_total * T * g
    df = dc_total * c_prev
    dg = dc_total * i * T
    dT = dc_total * i * g

    da = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g**2)]
    )
    grads["W"] += np.outer(da, x)
    grads["U"] += np.outer(da, h_prev)
    grads["b"] += da

    da_time = dT * T * (1.0 - T)
    grads["W_time"] += np.outer(da_time, x)
    grads["b_time"] += da_time
    grads["w_time"] += da_time * s * (1.0 - s) * tau

    return params["U"].T @ da, dc_total * f


def attention_forward(W_query, states):
    """Causal scaled dot-product attention: row t pools states 0..t with query W_query h_t.

    Parameters:
        W_query (np.ndarray): query projection (H x H)
        states (np.ndarray): hidden states (L x H)

    Returns:
        tuple: (pooled rows L x H, weights L x L, cache)
    """

    L, H = states.shape
    scale = 1.0 / np.sqrt(H)
    queries = states @ W_query.T
    scores = (queries @ states.T) * scale
    scores[np.triu(np.ones((L, L), dtype=bool), k=1)] = -np.inf
    weights = softmax(scores)
    pooled = weights @ states

    return pooled, weights, (states, queries, weights, scale)


def attention_backward(W_query, d_pooled, cache, grads):
    """Backpropagates < attention_forward() >; returns the gradient w.r.t. the states."""

    states, queries, weights, scale = cache

    d_weights = d_pooled @ states.T
    d_states = weights.T @ d_pooled
    d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=1, keepdims=True))
    d_scores *= scale
    d_queries = d_scores @ states
    d_states += d_scores.T @ queries
    grads["W_query"] += d_queries.T @ states
    d_states += d_queries @ W_query

    return d_states


def run_cells(params, inputs, deltas):
    H = params["U"].shape[1]
    h, c = np.zeros(H), np.zeros(H)
    states, caches = [], []
    for x, dt in zip(inputs, deltas):
        h, c, cache = cell_forward(params, x, h, c, dt)
        states.append(h)
        caches.append(cache)

    return np.array(states), caches


def session_loss(params, inputs, deltas, positives, negatives, with_grads=True):
    """Mean pairwise ranking loss softplus(-(p_t . pos_t - p_t . neg_t)) over the steps of one
    session, where p_t is the attention-pooled state after input t.

    Parameters:
        params (dict): model parameters
        inputs (np.ndarray): input item vectors (L x D)
        deltas (np.ndarray): seconds since the previous event per input
        positives (np.ndarray): vector of the true next item per step (L x D)
        negatives (np.ndarray): vector of the sampled negative per step (L x D)
        with_grads (bool): also backpropagate

    Returns:
        tuple: (loss, gradient dict or None)
    """

    states, caches = run_cells(params, inputs, deltas)
    pooled, _, attn_cache = attention_forward(params["W_query"], states)

    contrast = positives - negatives
    margin = np.einsum("ij,ij->i", pooled, contrast)
    steps = len(margin)
    loss = float(np.sum(softplus(-margin)) / steps)
    if not with_grads:
        return loss, None

    grads = zero_grads(params)
    d_pooled = (-sigmoid(-margin) / steps)[:, None] * contrast
    d_states = attention_backward(params["W_query"], d_pooled, attn_cache, grads)

    H = states.shape[1]
    dh_next, dc_next = np.zeros(H), np.zeros(H)
    for t in range(steps - 1, -1, -1):
        dh_next, dc_next = cell_backward(params, d_states[t] + dh_next, dc_next, caches[t], grads)

    return loss, grads


def session_arrays(events, factor_model):
    """Item rows and time deltas of a session, checking every item has a factor vector."""

    rows = []
    for e in events:
        if e.item_id not in factor_model.item_index:
            raise UnknownEntityError("item", e.item_id)
        rows.append(factor_model.item_index[e.item_id])

    deltas = time_deltas(events)
    if np.any(deltas < 0):
        raise ValueError("session timestamps must be non-decreasing")

    return np.asarray(rows, dtype=np.int64), deltas


def sample_negatives(rng, positive_rows, n_items):
    """One uniform negative row per positive, never equal to it."""

    draws = rng.integers(0, n_items - 1, size=len(positive_rows))
    return draws + (draws >= positive_rows)


def train_sequence_model(
    sessions,
    factor_model,
    hidden=80,
    lr=0.01,
    epochs=10,
    clip_norm=5.0,
    max_len=200,
    init_scale=0.1,
    seed=0,
):
    """Trains the cell and pooler by next-item prediction over per-user sessions. Sessions
    are truncated to their last < max_len > events; sessions of one event contribute no step.

    Parameters:
        sessions (dict): user id -> list of Interaction (session suffixes)
        factor_model (FactorModel): source of the frozen item vectors
        hidden (int): hidden size
        lr (float): Adam learning rate
        epochs (int): passes over the users
        clip_norm (float): global gradient norm ceiling
        max_len (int): longest session used
        init_scale (float): uniform init half-width
        seed (int): seed for initialization, user order and negatives

    Returns:
        SequenceModel: trained model
    """

    item_vectors = factor_model.item_factors
    n_items = item_vectors.shape[0]
    if n_items < 2:
        raise ValueError("next-item training needs at least two items")

    rng = np.random.default_rng(seed)
    model = SequenceModel(init_sequence_params(item_vectors.shape[1], hidden, rng, init_scale))

    prepared = []
    for user in sorted(sessions):
        events = list(sessions[user])[-max_len:]
        rows, deltas = session_arrays(events, factor_model)
        if len(rows) >= 2:
            prepared.append((rows, deltas))

    if not prepared:
        warnings.warn("no session has a next item to predict", CurioRankWarning)
        return model

    logger.info("training sequence model on %d sessions, hidden=%d", len(prepared), hidden)
    optimizer = Adam(model.params, lr=lr)

    for epoch in range(1, epochs + 1):
        total = 0.0
        for k in rng.permutation(len(prepared)).tolist():
            rows, deltas = prepared[k]
            negatives = sample_negatives(rng, rows[1:], n_items)
            loss, grads = session_loss(
                model.params,
                item_vectors[rows[:-1]],
                deltas[:-1],
                item_vectors[rows[1:]],
                item_vectors[negatives],
            )
            if not np.isfinite(loss):
                raise DivergenceError("sequence", epoch, loss)
            clip_by_global_norm(grads, clip_norm)
            optimizer.step(grads)
            total += loss

        mean_loss = total / len(prepared)
        model.loss_history.append(mean_loss)
        logger.info("sequence epoch %d/%d loss=%.6f", epoch, epochs, mean_loss)

    return model


def encode_session(model, factor_model, session):
    """Runs the cell over the session and returns the pooled state of its last step and the
    attention weights of that step.

    Parameters:
        model (SequenceModel): trained model
        factor_model (FactorModel): item vectors
        session (list): Interaction objects, time ordered

    Returns:
        tuple: (pooled state, attention weights over the session)
    """

    if not session:
        raise ValueError("cannot encode an empty session")

    rows, deltas = session_arrays(session, factor_model)
    states, _ = run_cells(model.params, factor_model.item_factors[rows], deltas)
    pooled, weights, _ = attention_forward(model.params["W_query"], states)

    return pooled[-1], weights[-1]


def short_term_preferences(model, factor_model, session, catalog_items, n=PREFERENCE_SET_SIZE):
    """Scores every catalog item by dot(pooled session state, item factor) and returns the
    top < n > as the user's short-term preference set.

    Parameters:
        model (SequenceModel): trained model
        factor_model (FactorModel): shared item factors
        session (list): the user's session suffix
        catalog_items (iterable): item ids to rank
        n (int): set size

    Returns:
        PreferenceSet: kind="short"
    """

    pooled, _ = encode_session(model, factor_model, session)
    item_ids, item_rows = known_item_rows(factor_model, catalog_items)
    if len(item_ids) < n:
        raise ValueError(f"catalog holds {len(item_ids)} rankable items; {n} are required")

    scores = factor_model.item_factors[item_rows] @ pooled

    user_id = session[0].user_id

    return top_preferences(factor_model, user_id, "short", item_ids, item_rows, scores, n)


def short_term_sets(
    model, factor_model, train, x, catalog_items, n=PREFERENCE_SET_SIZE, threads=1
):
    """Short-term preference sets from each user's trailing < x >% session.

    Parameters:
        model (SequenceModel): trained model
        factor_model (FactorModel): shared item factors
        train (dict): user id -> list of Interaction
        x (float): session percentage
        catalog_items (iterable): item ids to rank
        n (int): set size
        threads (int): worker count

    Returns:
        dict: user id -> PreferenceSet
    """

    users = sorted(train)
    catalog_items = list(catalog_items)
    sets = parallel_map(
        lambda u: short_term_preferences(
            model, factor_model, session_suffix(train[u], x), catalog_items, n
        ),
        users,
        threads,
    )

    return dict(zip(users, sets))


def session_map(train, x, users=None):
    return {u: session_suffix(train[u], x) for u in sorted(users or train)}
