"""Biased matrix factorization trained by stochastic gradient descent, and the long-term
preference sets drawn from it.

The learned item factors are the single 80-dimensional preference space: long-term and
short-term preference vectors are both rows of < FactorModel.item_factors >.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from curio_rank.errors import CurioRankWarning, DivergenceError, UnknownEntityError
from curio_rank.workers import parallel_map

logger = logging.getLogger(__name__)

PREFERENCE_SET_SIZE = 20


@dataclass
class FactorModel:
    user_ids: np.ndarray
    item_ids: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float
    loss_history: list = field(default_factory=list)
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {int(u): k for k, u in enumerate(self.user_ids)}
        self.item_index = {int(i): k for k, i in enumerate(self.item_ids)}

    @property
    def dim(self):
        return self.item_factors.shape[1]

    def item_vector(self, item_id):
        if item_id not in self.item_index:
            raise UnknownEntityError("item", item_id)
        return self.item_factors[self.item_index[item_id]]

    def to_arrays(self):
        return {
            "user_ids": self.user_ids,
            "item_ids": self.item_ids,
            "user_factors": self.user_factors,
            "item_factors": self.item_factors,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
            "global_mean": np.array(self.global_mean),
            "loss_history": np.asarray(self.loss_history, dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays):
        return cls(
            user_ids=arrays["user_ids"],
            item_ids=arrays["item_ids"],
            user_factors=arrays["user_factors"],
            item_factors=arrays["item_factors"],
            user_bias=arrays["user_bias"],
            item_bias=arrays["item_bias"],
            global_mean=float(arrays["global_mean"]),
            loss_history=[float(v) for v in arrays["loss_history"]],
        )


@dataclass(frozen=True)
class PreferenceSet:
    """A user's top preferences (long- or short-term) with their shared item factor vectors."""

    user_id: int
    kind: str
    items: tuple
    vectors: np.ndarray

    def __post_init__(self):
        if self.kind not in ("long", "short"):
            raise ValueError(f"preference kind must be 'long' or 'short', got {self.kind!r}")
        if len(set(self.items)) != len(self.items):
            raise ValueError("preference items must be distinct")
        if self.vectors.shape[0] != len(self.items):
            raise ValueError("one vector per preference item is required")

    def __len__(self):
        return len(self.items)


def flatten_ratings(train):
    """Turns per-user training events into parallel arrays.

    Parameters:
        train (dict|list): user id -> list of Interaction, or a flat list of Interaction

    Returns:
        tuple: (users, items, ratings) numpy arrays
    """

    events = [e for seq in train.values() for e in seq] if isinstance(train, dict) else train
    users = np.fromiter((e.user_id for e in events), dtype=np.int64, count=len(events))
    items = np.fromiter((e.item_id for e in events), dtype=np.int64, count=len(events))
    ratings = np.fromiter((e.rating for e in events), dtype=np.float64, count=len(events))

    return users, items, ratings


def training_objective(model, u_idx, i_idx, ratings, reg):
    """Mean per-rating SGD objective: squared error plus the L2 penalty on the parameters
    touched by that rating.

    Parameters:
        model (FactorModel): model
        u_idx (np.ndarray): user row indices
        i_idx (np.ndarray): item row indices
        ratings (np.ndarray): observed ratings
        reg (float): L2 weight

    Returns:
        float: objective value
    """

    p = model.user_factors[u_idx]
    q = model.item_factors[i_idx]
    bu = model.user_bias[u_idx]
    bi = model.item_bias[i_idx]
    residual = ratings - (model.global_mean + bu + bi + np.einsum("ij,ij->i", p, q))
    penalty = np.einsum("ij,ij->i", p, p) + np.einsum("ij,ij->i", q, q) + bu**2 + bi**2

    return float(np.mean(residual**2) + reg * np.mean(penalty))


def train_factors(train, dim=80, lr=0.005, reg=0.02, epochs=20, seed=0, init_std=0.1):
    """Trains a biased matrix factorization model by stochastic gradient descent over the
    observed ratings (one update per rating, ratings visited in a seeded random order).

    Parameters:
        train (dict|list): user id -> list of Interaction, or a flat list of Interaction
        dim (int): latent dimension
        lr (float): learning rate
        reg (float): L2 regularization weight
        epochs (int): passes over the data
        seed (int): seed for initialization and visiting order
        init_std (float): standard deviation of the initial factors

    Returns:
        FactorModel: trained model; < loss_history > holds the objective after each epoch
    """

    users, items, ratings = flatten_ratings(train)
    if len(ratings) == 0:
        raise ValueError("cannot train factors on an empty training set")

    user_ids, u_idx = np.unique(users, return_inverse=True)
    item_ids, i_idx = np.unique(items, return_inverse=True)
    rng = np.random.default_rng(seed)

    model = FactorModel(
        user_ids=user_ids,
        item_ids=item_ids,
        user_factors=rng.normal(0.0, init_std, (len(user_ids), dim)),
        item_factors=rng.normal(0.0, init_std, (len(item_ids), dim)),
        user_bias=np.zeros(len(user_ids)),
        item_bias=np.zeros(len(item_ids)),
        global_mean=float(np.mean(ratings)),
    )
    P, Q = model.user_factors, model.item_factors
    bu, bi, mu = model.user_bias, model.item_bias, model.global_mean

    logger.info(
        "training factors: %d ratings, %d users, %d items, dim=%d",
        len(ratings),
        len(user_ids),
        len(item_ids),
        dim,
    )

    u_list, i_list, r_list = u_idx.tolist(), i_idx.tolist(), ratings.tolist()
    previous = training_objective(model, u_idx, i_idx, ratings, reg)
    for epoch in range(1, epochs + 1):
        for k in rng.permutation(len(r_list)).tolist():
            u, i = u_list[k], i_list[k]
            p, q = P[u], Q[i]
            err = r_list[k] - (mu + bu[u] + bi[i] + p @ q)
            bu[u] += lr * (err - reg * bu[u])
            bi[i] += lr * (err - reg * bi[i])
            p_old = p.copy()
            p += lr * (err * q - reg * p)
            q += lr * (err * p_old - reg * q)

        loss = training_objective(model, u_idx, i_idx, ratings, reg)
        if not np.isfinite(loss):
            raise DivergenceError("factorization", epoch, loss)
        if loss > previous + 1e-6:
            warnings.warn(
                f"factorization objective rose at epoch {epoch}: {previous:.6f} -> {loss:.6f}",
                CurioRankWarning,
            )
        model.loss_history.append(loss)
        logger.info("factorization epoch %d/%d objective=%.6f", epoch, epochs, loss)
        previous = loss

    return model


def predict_affinity(model, user_id, item_id):
    """Returns global_mean + user_bias + item_bias + dot(user_factors, item_factors). An
    unknown user or item contributes neither bias nor factors and a CurioRankWarning flags the
    cold prediction.

    Parameters:
        model (FactorModel): trained model
        user_id (int): user
        item_id (int): item

    Returns:
        float: predicted affinity
    """

    u = model.user_index.get(user_id)
    i = model.item_index.get(item_id)
    if u is None or i is None:
        warnings.warn(f"cold prediction for user {user_id}, item {item_id}", CurioRankWarning)

    score = model.global_mean
    if u is not None:
        score += model.user_bias[u]
    if i is not None:
        score += model.item_bias[i]
    if u is not None and i is not None:
        score += float(model.user_factors[u] @ model.item_factors[i])

    return float(score)


def score_items(model, user_id, item_rows):
    """Vectorized < predict_affinity() > for a known user over item factor rows."""

    u = model.user_index[user_id]
    return (
        model.global_mean
        + model.user_bias[u]
        + model.item_bias[item_rows]
        + model.item_factors[item_rows] @ model.user_factors[u]
    )


def known_item_rows(model, catalog_items):
    """Maps catalog item ids to factor rows, keeping only items the model has learned.

    Parameters:
        model (FactorModel): trained model
        catalog_items (iterable): item ids

    Returns:
        tuple: (np.ndarray of item ids in ascending order, np.ndarray of factor rows)
    """

    ids = np.array(sorted({int(i) for i in catalog_items if int(i) in model.item_index}))
    rows = np.array([model.item_index[i] for i in ids], dtype=np.int64)

    return ids.astype(np.int64), rows


def top_preferences(model, user_id, kind, item_ids, item_rows, scores, n=PREFERENCE_SET_SIZE):
    """Selects the < n > best-scoring items, descending, ties broken by ascending item id,
    and attaches their item factor vectors.

    Parameters:
        model (FactorModel): model holding the shared item factors
        user_id (int): user
        kind (str): "long" or "short"
        item_ids (np.ndarray): candidate item ids
        item_rows (np.ndarray): factor rows of item_ids
        scores (np.ndarray): score per candidate
        n (int): set size

    Returns:
        PreferenceSet: the top-n set
    """

    if len(item_ids) < n:
        raise ValueError(f"catalog holds {len(item_ids)} rankable items; {n} are required")

    order = np.lexsort((item_ids, -np.asarray(scores)))[:n]

    return PreferenceSet(
        user_id=user_id,
        kind=kind,
        items=tuple(int(i) for i in item_ids[order]),
        vectors=model.item_factors[item_rows[order]].copy(),
    )


def long_term_preferences(model, user_id, catalog_items, n=PREFERENCE_SET_SIZE):
    """Ranks the whole catalog (seen items included) by predicted affinity and returns the
    user's long-term preference set.

    Parameters:
        model (FactorModel): trained model
        user_id (int): user
        catalog_items (iterable): item ids to rank
        n (int): set size

    Returns:
        PreferenceSet: kind="long"
    """

    if user_id not in model.user_index:
        raise UnknownEntityError("user", user_id)

    item_ids, item_rows = known_item_rows(model, catalog_items)
    if len(item_ids) < n:
        raise ValueError(f"catalog holds {len(item_ids)} rankable items; {n} are required")

    scores = score_items(model, user_id, item_rows)

    return top_preferences(model, user_id, "long", item_ids, item_rows, scores, n)


def long_term_sets(model, users, catalog_items, n=PREFERENCE_SET_SIZE, threads=1):
    """Long-term preference sets of several users, keyed by user id.

    Parameters:
        model (FactorModel): trained model
        users (iterable): user ids
        catalog_items (iterable): item ids to rank
        n (int): set size
        threads (int): worker count

    Returns:
        dict: user id -> PreferenceSet
    """

    users = sorted(users)
    catalog_items = list(catalog_items)
    sets = parallel_map(
        lambda u: long_term_preferences(model, u, catalog_items, n), users, threads
    )

    return dict(zip(users, sets))
