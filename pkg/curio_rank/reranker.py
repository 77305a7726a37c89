"""Curiosity-weighted re-ranking: serendipity = (1 - curiosity) * useful + curiosity * unexp."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from curio_rank.curiosity import CuriosityProfile


@dataclass(frozen=True)
class ScoredCandidate:
    user_id: int
    item_id: int
    useful: float
    unexp: float
    serendipity: float

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "useful": self.useful,
            "unexp": self.unexp,
            "serendipity": self.serendipity,
        }


@dataclass(frozen=True)
class RecommendationList:
    user_id: int
    items: tuple
    candidates: tuple
    curiosity: float

    def to_dict(self):
        return {
            "user_id": self.user_id,
            "curiosity": self.curiosity,
            "items": [c.to_dict() for c in self.candidates],
        }


def check_weight(curiosity):
    if not 0.0 <= curiosity <= 1.0:
        raise ValueError(f"curiosity must lie in [0, 1], got {curiosity}")


def serendipity_score(curiosity, useful, unexp):
    """Convex blend of usefulness and unexpectedness weighted by the user's curiosity.

    Parameters:
        curiosity (float): weight in [0, 1]
        useful (float|np.ndarray): usefulness
        unexp (float|np.ndarray): unexpectedness

    Returns:
        float|np.ndarray: serendipity
    """

    check_weight(curiosity)

    return (1.0 - curiosity) * useful + curiosity * unexp


def rerank(profile, candidates, n):
    """Orders candidates by serendipity, descending, ties broken by ascending item id, and
    keeps the first < n >.

    Parameters:
        profile (CuriosityProfile): user and curiosity weight
        candidates (list): (item_id, useful, unexp) triples
        n (int): list length

    Returns:
        RecommendationList: top-n list
    """

    if not candidates:
        raise ValueError("no candidates to rank")
    if not 1 <= n <= len(candidates):
        raise ValueError(f"cannot take the top {n} of {len(candidates)} candidates")

    items = np.array([c[0] for c in candidates], dtype=np.int64)
    useful = np.array([c[1] for c in candidates], dtype=np.float64)
    unexp = np.array([c[2] for c in candidates], dtype=np.float64)
    scores = serendipity_score(profile.curiosity, useful, unexp)
    order = np.lexsort((items, -scores))[:n]

    scored = tuple(
        ScoredCandidate(
            user_id=profile.user_id,
            item_id=int(items[k]),
            useful=float(useful[k]),
            unexp=float(unexp[k]),
            serendipity=float(scores[k]),
        )
        for k in order
    )

    return RecommendationList(
        user_id=profile.user_id,
        items=tuple(c.item_id for c in scored),
        candidates=scored,
        curiosity=profile.curiosity,
    )


def fixed_weight_profile(user_id, weight, x=30):
    """A profile whose curiosity is the constant < weight >: re-ranking with it reproduces a
    predetermined-weight baseline."""

    check_weight(weight)

    return CuriosityProfile(
        user_id=user_id,
        diff_raw=2.0 * weight,
        diff_norm=weight,
        div=weight,
        curiosity=weight,
        x_used=x,
    )
