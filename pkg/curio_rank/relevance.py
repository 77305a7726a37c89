"""Usefulness scorer: a click-through-rate model over (history, user, item).

The history is embedded with the model's own item table, encoded by a bidirectional GRU,
pooled with scaled dot-product self-attention (query = last concatenated state) and fed with
the user and candidate embeddings to a ReLU MLP with a sigmoid output. Every gradient is
written out by hand; histories in a batch are left-padded and masked.

GRU step, gates stacked as [r, z, n]:

    r = sigmoid(W_r x + U_r h + b_r);  z = sigmoid(W_z x + U_z h + b_z)
    n = tanh(W_n x + r * (U_n h) + b_n);  h = (1 - z) * n + z * h_prev
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from curio_rank.errors import CurioRankWarning, DivergenceError, UnknownEntityError
from curio_rank.nn import Adam, clip_by_global_norm, init_uniform, sigmoid, softmax, softplus

logger = logging.getLogger(__name__)

PARAM_NAMES = (
    "item_embedding",
    "user_embedding",
    "W_fwd",
    "U_fwd",
    "b_fwd",
    "W_bwd",
    "U_bwd",
    "b_bwd",
    "W_hidden",
    "b_hidden",
    "w_out",
    "b_out",
)


@dataclass
class CtrModel:
    """Parameters plus id maps. Embedding tables carry one extra trailing row shared by every
    cold user or item."""

    params: dict
    user_ids: np.ndarray
    item_ids: np.ndarray
    loss_history: list = field(default_factory=list)
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {int(u): k for k, u in enumerate(self.user_ids)}
        self.item_index = {int(i): k for k, i in enumerate(self.item_ids)}

    @property
    def hidden(self):
        return self.params["U_fwd"].shape[1]

    @property
    def dim(self):
        return self.params["item_embedding"].shape[1]

    def user_row(self, user_id):
        row = self.user_index.get(user_id)
        if row is None:
            warnings.warn(f"cold user {user_id}: using the fallback embedding", CurioRankWarning)
            return len(self.user_ids)
        return row

    def item_row(self, item_id):
        row = self.item_index.get(item_id)
        if row is None:
            warnings.warn(f"cold item {item_id}: using the fallback embedding", CurioRankWarning)
            return len(self.item_ids)
        return row

    def history_rows(self, history):
        rows = []
        for item in history:
            if item not in self.item_index:
                raise UnknownEntityError("item", item)
            rows.append(self.item_index[item])
        return rows

    def to_arrays(self):
        arrays = {name: self.params[name] for name in PARAM_NAMES}
        arrays["user_ids"] = self.user_ids
        arrays["item_ids"] = self.item_ids
        arrays["loss_history"] = np.asarray(self.loss_history, dtype=np.float64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays):
        return cls(
            params={name: np.array(arrays[name], dtype=np.float64) for name in PARAM_NAMES},
            user_ids=arrays["user_ids"],
            item_ids=arrays["item_ids"],
            loss_history=[float(v) for v in arrays["loss_history"]],
        )


@dataclass(frozen=True)
class CtrBatch:
    """Histories (left-padded item rows with a 0/1 mask) and the targets scored against them.
    Target k is item < item_rows[k] > for history < seq_index[k] >."""

    user_rows: np.ndarray
    hist_rows: np.ndarray
    mask: np.ndarray
    seq_index: np.ndarray
    item_rows: np.ndarray
    labels: np.ndarray


def init_ctr_model(user_ids, item_ids, dim=32, hidden=32, mlp_hidden=64, scale=0.1, seed=0):
    """Seeded initialization. The item embedding table is drawn first from the generator.

    Parameters:
        user_ids (iterable): known users
        item_ids (iterable): known items
        dim (int): user/item embedding size
        hidden (int): GRU hidden size per direction
        mlp_hidden (int): width of the MLP hidden layer
        scale (float): uniform init half-width
        seed (int): seed

    Returns:
        CtrModel: untrained model
    """

    user_ids = np.array(sorted({int(u) for u in user_ids}), dtype=np.int64)
    item_ids = np.array(sorted({int(i) for i in item_ids}), dtype=np.int64)
    rng = np.random.default_rng(seed)
    width = 2 * hidden + 2 * dim

    params = {
        "item_embedding": init_uniform(rng, (len(item_ids) + 1, dim), scale),
        "user_embedding": init_uniform(rng, (len(user_ids) + 1, dim), scale),
    }
    for direction in ("fwd", "bwd"):
        params[f"W_{direction}"] = init_uniform(rng, (3 * hidden, dim), scale)
        params[f"U_{direction}"] = init_uniform(rng, (3 * hidden, hidden), scale)
        params[f"b_{direction}"] = np.zeros(3 * hidden)
    params["W_hidden"] = init_uniform(rng, (mlp_hidden, width), scale)
    params["b_hidden"] = np.zeros(mlp_hidden)
    params["w_out"] = init_uniform(rng, (mlp_hidden,), scale)
    params["b_out"] = np.zeros(1)

    return CtrModel(params=params, user_ids=user_ids, item_ids=item_ids)


def pad_histories(histories):
    """Left-pads lists of item rows into a (B x L) row matrix and a matching 0/1 mask."""

    length = max(len(h) for h in histories)
    rows = np.zeros((len(histories), length), dtype=np.int64)
    mask = np.zeros((len(histories), length))
    for k, h in enumerate(histories):
        if not h:
            raise ValueError("history must not be empty")
        rows[k, length - len(h) :] = h
        mask[k, length - len(h) :] = 1.0

    return rows, mask


def build_batch(model, user_ids, histories, targets):
    """Assembles a CtrBatch from ids.

    Parameters:
        model (CtrModel): model holding the id maps
        user_ids (list): user per history
        histories (list): item id lists, oldest first
        targets (list): (history index, item id, label) triples

    Returns:
        CtrBatch: batch
    """

    hist_rows, mask = pad_histories([model.history_rows(h) for h in histories])

    return CtrBatch(
        user_rows=np.array([model.user_row(u) for u in user_ids], dtype=np.int64),
        hist_rows=hist_rows,
        mask=mask,
        seq_index=np.array([t[0] for t in targets], dtype=np.int64),
        item_rows=np.array([model.item_row(t[1]) for t in targets], dtype=np.int64),
        labels=np.array([t[2] for t in targets], dtype=np.float64),
    )


def gru_pass(W, U, b, inputs, mask):
    """Runs a GRU over (B x L x D) inputs; masked steps carry the previous state through.

    Returns:
        tuple: (states B x L x H, cache for < gru_backward() >)
    """

    B, L, _ = inputs.shape
    H = U.shape[1]
    input_act = inputs @ W.T + b
    h = np.zeros((B, H))
    states = np.empty((B, L, H))
    caches = []
    for t in range(L):
        ax = input_act[:, t]
        ah = h @ U.T
        r = sigmoid(ax[:, :H] + ah[:, :H])
        z = sigmoid(ax[:, H : 2 * H] + ah[:, H : 2 * H])
        n = np.tanh(ax[:, 2 * H :] + r * ah[:, 2 * H :])
        m = mask[:, t : t + 1]
        caches.append((h, r, z, n, ah[:, 2 * H :], m))
        h = m * ((1.0 - z) * n + z * h) + (1.0 - m) * h
        states[:, t] = h

    return states, (inputs, caches)


def gru_backward(W, U, d_states, cache, gW, gU, gb):
    """Backpropagates < gru_pass() >, accumulating into gW, gU, gb; returns d inputs."""

    inputs, caches = cache
    B, L, _ = inputs.shape
    H = U.shape[1]
    d_input_act = np.zeros((B, L, 3 * H))
    dh = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        h_prev, r, z, n, ah_n, m = caches[t]
        dh = dh + d_states[:, t]
        dh_step = m * dh
        dh_prev = (1.0 - m) * dh + dh_step * z

        dn = dh_step * (1.0 - z)
        dz = dh_step * (h_prev - n)
        dan = dn * (1.0 - n**2)
        dar = dan * ah_n * r * (1.0 - r)
        daz = dz * z * (1.0 - z)

        d_input_act[:, t] = np.concatenate([dar, daz, dan], axis=1)
        d_hidden_act = np.concatenate([dar, daz, dan * r], axis=1)
        gU += d_hidden_act.T @ h_prev
        dh = dh_prev + d_hidden_act @ U

    gW += np.einsum("blk,bld->kd", d_input_act, inputs)
    gb += d_input_act.sum(axis=(0, 1))

    return d_input_act @ W


def bidirectional_states(params, inputs, mask):
    """Forward states and backward states, both aligned to input positions."""

    fwd, fwd_cache = gru_pass(params["W_fwd"], params["U_fwd"], params["b_fwd"], inputs, mask)
    bwd_rev, bwd_cache = gru_pass(
        params["W_bwd"], params["U_bwd"], params["b_bwd"], inputs[:, ::-1], mask[:, ::-1]
    )

    return fwd, bwd_rev[:, ::-1], (fwd_cache, bwd_cache)


def encode_batch(params, hist_rows, mask):
    """Encodes padded histories into pooled vectors R (B x 2H).

    Returns:
        tuple: (R, attention weights B x L, cache)
    """

    inputs = params["item_embedding"][hist_rows]
    fwd, bwd, gru_caches = bidirectional_states(params, inputs, mask)
    states = np.concatenate([fwd, bwd], axis=2)

    scale = 1.0 / np.sqrt(states.shape[2])
    query = states[:, -1]
    scores = np.einsum("blh,bh->bl", states, query) * scale
    weights = softmax(np.where(mask > 0, scores, -np.inf))
    pooled = np.einsum("bl,blh->bh", weights, states)

    return pooled, weights, (hist_rows, states, query, weights, scale, gru_caches)


def encode_backward(params, d_pooled, cache, grads):
    hist_rows, states, query, weights, scale, (fwd_cache, bwd_cache) = cache
    H = states.shape[2] // 2

    d_weights = np.einsum("blh,bh->bl", states, d_pooled)
    d_states = weights[:, :, None] * d_pooled[:, None, :]
    d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=1, keepdims=True))
    d_scores *= scale
    d_states += d_scores[:, :, None] * query[:, None, :]
    d_states[:, -1] += np.einsum("bl,blh->bh", d_scores, states)

    d_inputs = gru_backward(
        params["W_fwd"],
        params["U_fwd"],
        d_states[:, :, :H],
        fwd_cache,
        grads["W_fwd"],
        grads["U_fwd"],
        grads["b_fwd"],
    )
    d_inputs_rev = gru_backward(
        params["W_bwd"],
        params["U_bwd"],
        d_states[:, ::-1, H:],
        bwd_cache,
        grads["W_bwd"],
        grads["U_bwd"],
        grads["b_bwd"],
    )
    d_inputs += d_inputs_rev[:, ::-1]
    np.add.at(grads["item_embedding"], hist_rows, d_inputs)


def batch_logits(params, batch):
    pooled, _, enc_cache = encode_batch(params, batch.hist_rows, batch.mask)
    features = np.concatenate(
        [
            pooled[batch.seq_index],
            params["user_embedding"][batch.user_rows[batch.seq_index]],
            params["item_embedding"][batch.item_rows],
        ],
        axis=1,
    )
    pre = features @ params["W_hidden"].T + params["b_hidden"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params["w_out"] + params["b_out"][0]

    return logits, (pooled, enc_cache, features, pre, hidden)


def batch_loss(params, batch, with_grads=True):
    """Mean binary cross-entropy of the batch targets.

    Parameters:
        params (dict): model parameters
        batch (CtrBatch): histories and targets
        with_grads (bool): also backpropagate

    Returns:
        tuple: (loss, gradient dict or None)
    """

    logits, (pooled, enc_cache, features, pre, hidden) = batch_logits(params, batch)
    labels = batch.labels
    loss = float(np.mean(np.where(labels > 0.5, softplus(-logits), softplus(logits))))
    if not with_grads:
        return loss, None

    grads = {name: np.zeros_like(p) for name, p in params.items()}
    d_logits = (sigmoid(logits) - labels) / len(labels)
    grads["w_out"] += hidden.T @ d_logits
    grads["b_out"] += np.sum(d_logits)
    d_pre = np.outer(d_logits, params["w_out"]) * (pre > 0.0)
    grads["W_hidden"] += d_pre.T @ features
    grads["b_hidden"] += d_pre.sum(axis=0)
    d_features = d_pre @ params["W_hidden"]

    width = pooled.shape[1]
    dim = params["user_embedding"].shape[1]
    d_pooled = np.zeros_like(pooled)
    np.add.at(d_pooled, batch.seq_index, d_features[:, :width])
    np.add.at(
        grads["user_embedding"],
        batch.user_rows[batch.seq_index],
        d_features[:, width : width + dim],
    )
    np.add.at(grads["item_embedding"], batch.item_rows, d_features[:, width + dim :])
    encode_backward(params, d_pooled, enc_cache, grads)

    return loss, grads


def encode_history(model, history):
    """Pooled 2H-dim representation of one history (oldest item first)."""

    if not history:
        raise ValueError("history must not be empty")
    rows, mask = pad_histories([model.history_rows(history)])
    pooled, _, _ = encode_batch(model.params, rows, mask)

    return pooled[0]


def score_candidates(model, user_id, history, item_ids):
    """Usefulness of several candidate items against one history.

    Parameters:
        model (CtrModel): trained model
        user_id (int): user
        history (list): item ids, oldest first
        item_ids (list): candidates

    Returns:
        np.ndarray: probabilities in (0, 1)
    """

    if not history:
        raise ValueError("history must not be empty")
    batch = build_batch(model, [user_id], [history], [(0, item, 0.0) for item in item_ids])
    logits, _ = batch_logits(model.params, batch)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError(f"non-finite usefulness activation for user {user_id}")

    return sigmoid(logits)


def usefulness(model, user_id, item_id, history):
    return float(score_candidates(model, user_id, history, [item_id])[0])


def item_latent(model, item_id):
    """A copy of the learned latent embedding of a known item."""

    if item_id not in model.item_index:
        raise UnknownEntityError("item", item_id)

    return model.params["item_embedding"][model.item_index[item_id]].copy()


def fit_ctr(model, batches, epochs=5, lr=0.005, clip_norm=5.0, seed=0):
    """Minimizes the batch cross-entropy with Adam, one step per batch.

    Parameters:
        model (CtrModel): model updated in place
        batches (callable): batches(epoch, rng) -> list of CtrBatch
        epochs (int): passes
        lr (float): learning rate
        clip_norm (float): global gradient norm ceiling
        seed (int): seed for batch order and anything < batches > samples

    Returns:
        CtrModel: the same model
    """

    # separate stream from the initializer, which also draws from < seed >
    rng = np.random.default_rng([seed, 1])
    optimizer = Adam(model.params, lr=lr)

    for epoch in range(1, epochs + 1):
        epoch_batches = batches(epoch, rng)
        total = 0.0
        for k in rng.permutation(len(epoch_batches)).tolist():
            loss, grads = batch_loss(model.params, epoch_batches[k])
            if not np.isfinite(loss):
                raise DivergenceError("ctr", epoch, loss)
            clip_by_global_norm(grads, clip_norm)
            optimizer.step(grads)
            total += loss

        mean_loss = total / max(len(epoch_batches), 1)
        model.loss_history.append(mean_loss)
        logger.info("ctr epoch %d/%d loss=%.6f", epoch, epochs, mean_loss)

    return model


def train_ctr(
    train,
    item_ids,
    dim=32,
    hidden=32,
    mlp_hidden=64,
    lr=0.005,
    epochs=5,
    clip_norm=5.0,
    max_history=100,
    examples_per_user=10,
    init_scale=0.1,
    seed=0,
):
    """Trains the CTR model on each user's most recent training positions. A position's
    history is the (truncated) sequence before it; every positive gets one negative drawn
    uniformly from items the user never interacted with, resampled each epoch.

    Parameters:
        train (dict): user id -> list of Interaction
        item_ids (iterable): item universe (catalog)
        dim (int): embedding size
        hidden (int): GRU hidden size
        mlp_hidden (int): MLP hidden width
        lr (float): learning rate
        epochs (int): passes
        clip_norm (float): gradient norm ceiling
        max_history (int): longest history fed to the encoder
        examples_per_user (int): positive positions per user
        init_scale (float): init half-width
        seed (int): seed

    Returns:
        CtrModel: trained model
    """

    known = {int(i) for i in item_ids} | {e.item_id for seq in train.values() for e in seq}
    model = init_ctr_model(train, known, dim, hidden, mlp_hidden, init_scale, seed)
    universe = model.item_ids

    prepared = []
    for user in sorted(train):
        items = [e.item_id for e in train[user]]
        positions = range(max(1, len(items) - examples_per_user), len(items))
        if not positions:
            continue
        histories = [model.history_rows(items[:p][-max_history:]) for p in positions]
        hist_rows, mask = pad_histories(histories)
        prepared.append(
            (
                model.user_index[user],
                hist_rows,
                mask,
                np.array([model.item_index[items[p]] for p in positions], dtype=np.int64),
                np.setdiff1d(universe, items),
            )
        )

    logger.info("training ctr model on %d users", len(prepared))

    def batches(epoch, rng):
        out = []
        for user_row, hist_rows, mask, positive_rows, unseen in prepared:
            B = len(positive_rows)
            seq_index = np.arange(B)
            item_rows, labels = positive_rows, np.ones(B)
            if len(unseen):
                negatives = rng.choice(unseen, size=B, replace=len(unseen) < B)
                negative_rows = np.searchsorted(universe, negatives)
                seq_index = np.concatenate([seq_index, np.arange(B)])
                item_rows = np.concatenate([positive_rows, negative_rows])
                labels = np.concatenate([labels, np.zeros(B)])
            out.append(
                CtrBatch(
                    user_rows=np.full(B, user_row, dtype=np.int64),
                    hist_rows=hist_rows,
                    mask=mask,
                    seq_index=seq_index,
                    item_rows=item_rows,
                    labels=labels,
                )
            )
        return out

    return fit_ctr(model, batches, epochs, lr, clip_norm, seed)
