"""Per-user diversive curiosity: how far the short-term preference vector has drifted from the
long-term one, averaged with how diverse the short-term list is.

    curiosity = (diff_norm + div) / 2
    diff_norm = |long/|long| - short/|short|| / 2
    div = 1 - mean over item pairs of co-occurrence cosine
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import pandas as pd
from scipy import sparse

from curio_rank.errors import CurioRankWarning, DataValidationError, UnknownEntityError
from curio_rank.factorization import PREFERENCE_SET_SIZE
from curio_rank.workers import parallel_map

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ["user_id", "diff_raw", "diff_norm", "div", "curiosity"]


@dataclass(frozen=True)
class CuriosityProfile:
    user_id: int
    diff_raw: float
    diff_norm: float
    div: float
    curiosity: float
    x_used: float = 30
    degenerate: bool = False

    def __post_init__(self):
        for name in ("diff_norm", "div", "curiosity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataValidationError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.diff_raw <= 2.0:
            raise DataValidationError(f"diff_raw must lie in [0, 2], got {self.diff_raw}")


@dataclass
class CooccurrenceIndex:
    """For every item, the set of users whose short-term list contains it. Immutable once
    built; the membership matrix rows follow < items >, columns follow < users >."""

    users_by_item: dict
    users: tuple = field(init=False)
    items: tuple = field(init=False)
    item_position: dict = field(init=False, repr=False)
    membership: sparse.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.users = tuple(sorted({u for us in self.users_by_item.values() for u in us}))
        self.items = tuple(sorted(self.users_by_item))
        self.item_position = {item: k for k, item in enumerate(self.items)}
        user_position = {u: k for k, u in enumerate(self.users)}

        rows, cols = [], []
        for item, us in self.users_by_item.items():
            rows.extend([self.item_position[item]] * len(us))
            cols.extend(user_position[u] for u in us)
        self.membership = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(self.items), len(self.users))
        )

    def __contains__(self, item_id):
        return item_id in self.users_by_item

    def rows(self, items):
        try:
            return [self.item_position[m] for m in items]
        except KeyError as err:
            raise UnknownEntityError("item", err.args[0]) from None


def build_cooccurrence_index(short_sets):
    """Builds the index in a single pass over all short-term preference sets.

    Parameters:
        short_sets (iterable): PreferenceSet objects of kind "short"

    Returns:
        CooccurrenceIndex: item -> users index
    """

    users_by_item = {}
    for pset in short_sets:
        for item in pset.items:
            users_by_item.setdefault(item, set()).add(pset.user_id)

    return CooccurrenceIndex({item: frozenset(us) for item, us in users_by_item.items()})


def aggregate_vector(pset, size=PREFERENCE_SET_SIZE):
    """Element-wise mean of the preference set's item vectors.

    Parameters:
        pset (PreferenceSet): long- or short-term set
        size (int): required set size

    Returns:
        np.ndarray: aggregate vector
    """

    if len(pset) != size:
        raise ValueError(f"preference set must hold {size} items, got {len(pset)}")

    return np.sum(pset.vectors, axis=0) / size


def preference_difference(long_vec, short_vec):
    """Euclidean distance between the L2-normalized long- and short-term aggregate vectors.
    An all-zero vector carries no direction: the pair is degenerate and scores 0.

    Parameters:
        long_vec (np.ndarray): long-term aggregate vector
        short_vec (np.ndarray): short-term aggregate vector

    Returns:
        tuple: (diff_raw in [0, 2], diff_norm in [0, 1])
    """

    long_vec = np.asarray(long_vec, dtype=np.float64)
    short_vec = np.asarray(short_vec, dtype=np.float64)
    if long_vec.shape != short_vec.shape:
        raise ValueError(f"vector shapes differ: {long_vec.shape} vs {short_vec.shape}")
    if not (np.all(np.isfinite(long_vec)) and np.all(np.isfinite(short_vec))):
        raise ValueError("preference vectors must be finite")

    long_norm = np.linalg.norm(long_vec)
    short_norm = np.linalg.norm(short_vec)
    if long_norm == 0.0 or short_norm == 0.0:
        warnings.warn("degenerate all-zero preference vector", CurioRankWarning)
        return 0.0, 0.0

    diff_raw = float(np.clip(np.linalg.norm(long_vec / long_norm - short_vec / short_norm), 0, 2))

    return diff_raw, diff_raw / 2.0


def cosine_matrix(index, items):
    """Pairwise co-occurrence cosines |U_m & U_n| / sqrt(|U_m| |U_n|) among < items >."""

    members = index.membership[index.rows(items)]
    shared = (members @ members.T).toarray()
    sizes = np.diag(shared)

    return shared / np.sqrt(np.outer(sizes, sizes))


def cooccurrence_cosine(index, m, n):
    """Co-occurrence cosine of two items in the index.

    Parameters:
        index (CooccurrenceIndex): item -> users index
        m (int): item id
        n (int): item id

    Returns:
        float: similarity in [0, 1]
    """

    return float(cosine_matrix(index, [m, n])[0, 1])


def short_term_diversity(index, pset, size=PREFERENCE_SET_SIZE):
    """One minus the intra-list similarity of the set: the mean co-occurrence cosine over all
    unordered item pairs.

    Parameters:
        index (CooccurrenceIndex): item -> users index
        pset (PreferenceSet): short-term set
        size (int): required set size

    Returns:
        float: diversity in [0, 1]
    """

    if len(pset) != size:
        raise ValueError(f"preference set must hold {size} items, got {len(pset)}")

    upper = np.triu_indices(size, k=1)
    ils = float(np.mean(cosine_matrix(index, pset.items)[upper]))

    return float(np.clip(1.0 - ils, 0.0, 1.0))


def curiosity_score(diff_norm, div):
    for name, value in (("diff_norm", diff_norm), ("div", div)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")

    return (diff_norm + div) / 2.0


def curiosity_profile(long_set, short_set, index, x=30):
    """Combines a user's long- and short-term sets into a CuriosityProfile.

    Parameters:
        long_set (PreferenceSet): long-term set
        short_set (PreferenceSet): short-term set
        index (CooccurrenceIndex): built over every user's short-term set
        x (float): session percentage the short-term set came from

    Returns:
        CuriosityProfile: profile
    """

    if long_set.user_id != short_set.user_id:
        raise ValueError(f"sets belong to users {long_set.user_id} and {short_set.user_id}")

    long_vec = aggregate_vector(long_set)
    short_vec = aggregate_vector(short_set)
    degenerate = not (np.any(long_vec) and np.any(short_vec))
    diff_raw, diff_norm = preference_difference(long_vec, short_vec)
    div = short_term_diversity(index, short_set)

    return CuriosityProfile(
        user_id=long_set.user_id,
        diff_raw=diff_raw,
        diff_norm=diff_norm,
        div=div,
        curiosity=curiosity_score(diff_norm, div),
        x_used=x,
        degenerate=degenerate,
    )


def compute_profiles(long_sets, short_sets, x=30, threads=1):
    """Profiles for every user holding both sets, keyed and ordered by user id.

    Parameters:
        long_sets (dict): user id -> long-term PreferenceSet
        short_sets (dict): user id -> short-term PreferenceSet
        x (float): session percentage
        threads (int): worker count

    Returns:
        dict: user id -> CuriosityProfile
    """

    users = sorted(set(long_sets) & set(short_sets))
    index = build_cooccurrence_index(short_sets[u] for u in users)
    profiles = parallel_map(
        lambda u: curiosity_profile(long_sets[u], short_sets[u], index, x), users, threads
    )
    logger.info("computed curiosity for %d users at x=%s", len(users), x)

    return dict(zip(users, profiles))


def profiles_frame(profiles):
    """Tabulates profiles with columns user_id, diff_raw, diff_norm, div, curiosity."""

    rows = [
        (p.user_id, p.diff_raw, p.diff_norm, p.div, p.curiosity)
        for p in sorted(profiles.values(), key=lambda p: p.user_id)
    ]

    return pd.DataFrame(rows, columns=PROFILE_COLUMNS)
