"""Unexpectedness of a candidate: its size-weighted distance to the mean-shift clusters of the
user's training history in the CTR latent space."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy.spatial.distance import cdist, pdist

from curio_rank.config import derive_seed
from curio_rank.relevance import item_latent
from curio_rank.workers import parallel_map

logger = logging.getLogger(__name__)

FALLBACK_BANDWIDTH = 1e-3


@dataclass(frozen=True)
class HistoryClustering:
    user_id: int
    centroids: np.ndarray
    counts: np.ndarray
    bandwidth: float

    def __len__(self):
        return len(self.counts)

    @property
    def weights(self):
        return self.counts / self.counts.sum()

    def to_dict(self):
        return {
            "user_id": self.user_id,
            "bandwidth": self.bandwidth,
            "clusters": [
                {"centroid": c.tolist(), "count": int(n)}
                for c, n in zip(self.centroids, self.counts)
            ],
        }


def check_vectors(vectors):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[0] == 0:
        raise ValueError("at least one history vector is required")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("history vectors must be finite")

    return vectors


def mean_shift(vectors, bandwidth, user_id=None, max_iter=100, tol=1e-6):
    """Flat-kernel mean shift. Every point climbs to the mean of the points within
    < bandwidth > until it moves less than < tol > or < max_iter > is reached; modes closer
    than bandwidth / 2 to a better-supported mode are merged into it and every point joins its
    nearest surviving mode.

    Parameters:
        vectors (np.ndarray): history vectors (n x d)
        bandwidth (float): kernel radius
        user_id (int): owner of the history
        max_iter (int): iteration cap
        tol (float): displacement threshold

    Returns:
        HistoryClustering: centroids ordered by descending support
    """

    points = check_vectors(vectors)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")

    modes = points.copy()
    active = np.ones(len(points), dtype=bool)
    for _ in range(max_iter):
        near = cdist(modes[active], points) <= bandwidth
        support = near.sum(axis=1)
        moved = np.where(
            support[:, None] > 0, (near @ points) / np.maximum(support, 1)[:, None], modes[active]
        )
        shift = np.linalg.norm(moved - modes[active], axis=1)
        modes[active] = moved
        active[np.flatnonzero(active)[shift < tol]] = False
        if not active.any():
            break

    support = (cdist(modes, points) <= bandwidth).sum(axis=1)
    kept = []
    for k in np.argsort(-support, kind="stable"):
        if not kept or np.min(np.linalg.norm(modes[kept] - modes[k], axis=1)) >= bandwidth / 2:
            kept.append(k)

    centroids = modes[kept]
    labels = np.argmin(cdist(points, centroids), axis=1)
    counts = np.bincount(labels, minlength=len(kept))
    nonempty = counts > 0

    return HistoryClustering(
        user_id=user_id,
        centroids=centroids[nonempty],
        counts=counts[nonempty],
        bandwidth=float(bandwidth),
    )


def default_bandwidth(vectors, seed=0, max_pairs=1000, fallback=FALLBACK_BANDWIDTH):
    """Median pairwise distance of the history: exact when there are at most < max_pairs >
    pairs, otherwise over a seeded sample of that many distinct pairs. Falls back to
    < fallback > for fewer than two vectors or a zero median.

    Parameters:
        vectors (np.ndarray): history vectors (n x d)
        seed (int): pair sampling seed
        max_pairs (int): sample size ceiling
        fallback (float): bandwidth for degenerate histories

    Returns:
        float: positive bandwidth
    """

    points = check_vectors(vectors)
    n = len(points)
    if n < 2:
        return fallback

    if n * (n - 1) // 2 <= max_pairs:
        distances = pdist(points)
    else:
        rng = np.random.default_rng(seed)
        first, second = np.triu_indices(n, 1)
        picks = rng.choice(len(first), size=max_pairs, replace=False)
        first, second = first[picks], second[picks]
        distances = np.linalg.norm(points[first] - points[second], axis=1)

    median = float(np.median(distances))

    return median if median > 0 else fallback


def unexpectedness(clustering, candidate):
    """Sum over clusters of distance(candidate, centroid) * count / total count.

    Parameters:
        clustering (HistoryClustering): user history clusters
        candidate (np.ndarray): candidate latent vector

    Returns:
        float: non-negative score
    """

    return float(unexpectedness_many(clustering, np.atleast_2d(candidate))[0])


def unexpectedness_many(clustering, candidates):
    """Vectorized < unexpectedness() > over candidate rows."""

    if len(clustering) == 0:
        raise ValueError("clustering has no clusters")
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.shape[1] != clustering.centroids.shape[1]:
        raise ValueError(
            f"candidate has {candidates.shape[1]} dimensions, "
            f"clusters have {clustering.centroids.shape[1]}"
        )

    return cdist(candidates, clustering.centroids) @ clustering.weights


def cluster_history(
    user_id, vectors, seed=0, max_pairs=1000, max_iter=100, tol=1e-6, fallback=FALLBACK_BANDWIDTH
):
    bandwidth = default_bandwidth(vectors, seed, max_pairs, fallback)
    return mean_shift(vectors, bandwidth, user_id, max_iter, tol)


def cluster_users(
    ctr_model,
    train,
    seed=0,
    max_pairs=1000,
    max_iter=100,
    tol=1e-6,
    fallback=FALLBACK_BANDWIDTH,
    threads=1,
):
    """Clusters every user's training history in the CTR latent space.

    Parameters:
        ctr_model (CtrModel): source of the latent item vectors
        train (dict): user id -> list of Interaction
        seed (int): master seed; each user gets a derived bandwidth seed
        max_pairs (int): bandwidth pair sample size
        max_iter (int): mean shift iteration cap
        tol (float): mean shift displacement threshold
        fallback (float): bandwidth for degenerate histories
        threads (int): worker count

    Returns:
        dict: user id -> HistoryClustering
    """

    def cluster(user):
        vectors = np.array([item_latent(ctr_model, e.item_id) for e in train[user]])
        user_seed = derive_seed(seed, "bandwidth", user)
        return cluster_history(user, vectors, user_seed, max_pairs, max_iter, tol, fallback)

    users = sorted(train)
    clusterings = parallel_map(cluster, users, threads)
    logger.info("clustered the histories of %d users", len(users))

    return dict(zip(users, clusterings))
