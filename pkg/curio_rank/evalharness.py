"""Top-k evaluation of the re-ranking strategies, validation AUC of the CTR model and the
session-percentage sweep of curiosity."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from curio_rank.chart_concat import Orient, concat_charts
from curio_rank.chart_hist import create_histogram
from curio_rank.chart_scatter import create_scatter
from curio_rank.chart_title import format_title
from curio_rank.config import derive_seed, percent_label
from curio_rank.curiosity import compute_profiles, profiles_frame
from curio_rank.frame import (
    bin_data,
    compute_sum_stats_by_group,
    create_bins,
    describe_numeric_column,
)
from curio_rank.relevance import item_latent, score_candidates
from curio_rank.reranker import fixed_weight_profile, rerank
from curio_rank.sequence import session_map, short_term_sets, train_sequence_model
from curio_rank.surprise import unexpectedness_many
from curio_rank.workers import parallel_map

logger = logging.getLogger(__name__)

STRATEGIES = ("curiosity", "fixed", "useful_only", "unexp_only")
METRIC_COLUMNS = ["strategy", "k", "precision", "recall", "unexp"]
BIN_WIDTH = 0.1
REFERENCE_UNEXP_BAND = (0.1024, 0.2564)
PRECISION_NOTE = (
    "precision@k = hits/k with a single held-out positive among 50 candidates, so "
    "precision@k <= 1/k; higher published precision values come from a different protocol "
    "and are not targeted"
)
UNEXP_NOTE = "unexp@k is macro-averaged: mean over each user's top-k, then mean over users"


@dataclass(frozen=True)
class CandidateScores:
    """Usefulness and unexpectedness of one user's evaluation candidates."""

    user_id: int
    positive: int
    items: np.ndarray
    useful: np.ndarray
    unexp: np.ndarray

    def triples(self):
        return list(zip(self.items.tolist(), self.useful.tolist(), self.unexp.tolist()))


@dataclass
class EvalReport:
    metrics: pd.DataFrame
    ks: tuple
    user_count: int
    strategies: tuple = STRATEGIES
    notes: list = field(default_factory=lambda: [PRECISION_NOTE, UNEXP_NOTE])
    unexp_summary: dict = None
    useful_summary: dict = None
    validation_auc: float = None

    def row(self, strategy, k):
        match = self.metrics[(self.metrics["strategy"] == strategy) & (self.metrics["k"] == k)]
        return match.iloc[0]

    def to_dict(self):
        return {
            "user_count": self.user_count,
            "ks": list(self.ks),
            "strategies": list(self.strategies),
            "metrics": self.metrics.to_dict(orient="records"),
            "validation_auc": self.validation_auc,
            "unexp_range": range_entry(self.unexp_summary, REFERENCE_UNEXP_BAND),
            "useful_range": range_entry(self.useful_summary),
            "notes": list(self.notes),
        }


@dataclass
class SweepResult:
    x: float
    profiles: dict
    histogram: np.ndarray
    error: str = None

    @property
    def frame(self):
        return profiles_frame(self.profiles)


def range_entry(summary, reference=None):
    if summary is None:
        return None
    entry = {"min": summary["position"]["min"], "max": summary["position"]["max"]}
    if reference is not None:
        entry["reference_band"] = list(reference)
    return entry


def precision_recall_at_k(recommended, relevant, k):
    """Precision and recall of the first < k > recommended items.

    Parameters:
        recommended (list): ranked item ids
        relevant (set): relevant item ids
        k (int): cutoff

    Returns:
        tuple: (precision, recall)
    """

    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if not relevant:
        raise ValueError("relevant set must not be empty")
    if k > len(recommended):
        raise ValueError(f"k={k} exceeds the {len(recommended)} recommended items")

    hits = len(set(recommended[:k]) & set(relevant))

    return hits / k, hits / len(relevant)


def unexp_at_k(recommended, scores, k):
    """Mean over users of the mean unexpectedness of each user's top-k.

    Parameters:
        recommended (dict): user id -> ranked item ids
        scores (dict): user id -> {item id: unexpectedness}
        k (int): cutoff

    Returns:
        float: macro-averaged unexpectedness
    """

    if k < 1:
        raise ValueError(f"k must be positive, got {k}")

    per_user = []
    for user in sorted(recommended):
        top = recommended[user][:k]
        if len(top) < k:
            raise ValueError(f"user {user} has fewer than {k} recommendations")
        user_scores = scores.get(user, {})
        missing = [item for item in top if item not in user_scores]
        if missing:
            raise ValueError(f"no unexpectedness score for item {missing[0]} (user {user})")
        per_user.append(np.mean([user_scores[item] for item in top]))

    return float(np.mean(per_user))


def score_user_candidates(ctr_model, clustering, history, case, max_history=100):
    """Scores one user's evaluation candidates (positive first, then sorted negatives).

    Parameters:
        ctr_model (CtrModel): trained CTR model
        clustering (HistoryClustering): user's history clusters
        history (list): training item ids, oldest first
        case (EvalCase): held-out positive and negatives
        max_history (int): encoder history length

    Returns:
        CandidateScores: scores
    """

    items = list(case.candidates)
    useful = score_candidates(ctr_model, case.positive.user_id, history[-max_history:], items)
    latent = np.array([item_latent(ctr_model, item) for item in items])

    return CandidateScores(
        user_id=case.positive.user_id,
        positive=case.positive.item_id,
        items=np.array(items, dtype=np.int64),
        useful=useful,
        unexp=unexpectedness_many(clustering, latent),
    )


def score_test_candidates(split, ctr_model, clusterings, max_history=100, threads=1):
    """Candidate scores for every user's test case.

    Parameters:
        split (SplitDataset): partition
        ctr_model (CtrModel): trained CTR model
        clusterings (dict): user id -> HistoryClustering
        max_history (int): encoder history length
        threads (int): worker count

    Returns:
        dict: user id -> CandidateScores
    """

    if ctr_model is None or clusterings is None:
        raise ValueError("candidate scoring requires a trained CTR model and clusterings")

    users = [u for u in split.users if u in clusterings]
    scored = parallel_map(
        lambda u: score_user_candidates(
            ctr_model,
            clusterings[u],
            [e.item_id for e in split.train[u]],
            split.test[u],
            max_history,
        ),
        users,
        threads,
    )

    return dict(zip(users, scored))


def strategy_profile(strategy, profile, fixed_weight=0.5):
    match strategy:
        case "curiosity":
            return profile
        case "fixed":
            return fixed_weight_profile(profile.user_id, fixed_weight, profile.x_used)
        case "useful_only":
            return fixed_weight_profile(profile.user_id, 0.0, profile.x_used)
        case "unexp_only":
            return fixed_weight_profile(profile.user_id, 1.0, profile.x_used)
        case _:
            raise ValueError(f"unknown strategy: {strategy}")


def recommend_users(candidate_scores, profiles, strategy="curiosity", n=20, fixed_weight=0.5):
    """Re-ranks every user's candidates under one strategy.

    Parameters:
        candidate_scores (dict): user id -> CandidateScores
        profiles (dict): user id -> CuriosityProfile
        strategy (str): one of STRATEGIES
        n (int): list length
        fixed_weight (float): curiosity used by the "fixed" strategy

    Returns:
        dict: user id -> RecommendationList
    """

    users = sorted(set(candidate_scores) & set(profiles))

    return {
        u: rerank(
            strategy_profile(strategy, profiles[u], fixed_weight),
            candidate_scores[u].triples(),
            n,
        )
        for u in users
    }


def compare_strategies(candidate_scores, profiles, ks=(5, 10, 15, 20), fixed_weight=0.5):
    """Precision, recall and unexpectedness at every k for each re-ranking strategy:
    curiosity-weighted, fixed weight, usefulness only and unexpectedness only.

    Parameters:
        candidate_scores (dict): user id -> CandidateScores
        profiles (dict): user id -> CuriosityProfile
        ks (tuple): cutoffs
        fixed_weight (float): curiosity used by the "fixed" strategy

    Returns:
        EvalReport: metrics per (strategy, k)
    """

    if not candidate_scores or not profiles:
        raise ValueError("strategy comparison requires scored candidates and curiosity profiles")

    ks = tuple(sorted(ks))
    users = sorted(set(candidate_scores) & set(profiles))
    unexp_scores = {
        u: dict(zip(candidate_scores[u].items.tolist(), candidate_scores[u].unexp.tolist()))
        for u in users
    }
    rows, ranked = [], {}
    for strategy in STRATEGIES:
        lists = recommend_users(candidate_scores, profiles, strategy, ks[-1], fixed_weight)
        ranked[strategy] = {u: list(lists[u].items) for u in users}
        for user in users:
            relevant = {candidate_scores[user].positive}
            for k in ks:
                precision, recall = precision_recall_at_k(ranked[strategy][user], relevant, k)
                rows.append((strategy, user, k, precision, recall))

    frame = pd.DataFrame(rows, columns=["strategy", "user_id", "k", "precision", "recall"])
    metrics = (
        frame.groupby(["strategy", "k"], sort=False)[["precision", "recall"]]
        .mean()
        .reset_index()
    )
    metrics["unexp"] = [
        unexp_at_k(ranked[strategy], unexp_scores, k)
        for strategy, k in zip(metrics["strategy"], metrics["k"])
    ]
    useful = np.concatenate([candidate_scores[u].useful for u in users])
    unexp = np.concatenate([candidate_scores[u].unexp for u in users])

    return EvalReport(
        metrics=metrics[METRIC_COLUMNS],
        ks=ks,
        user_count=len(users),
        unexp_summary=describe_numeric_column(pd.Series(unexp, name="unexp")),
        useful_summary=describe_numeric_column(pd.Series(useful, name="useful")),
    )


def validation_auc(split, ctr_model, max_history=100, threads=1):
    """Mean per-user AUC of the CTR model on the validation cases (1 positive vs negatives).

    Parameters:
        split (SplitDataset): partition
        ctr_model (CtrModel): trained model
        max_history (int): encoder history length
        threads (int): worker count

    Returns:
        float: mean AUC
    """

    def user_auc(user):
        case = split.validation[user]
        history = [e.item_id for e in split.train[user]][-max_history:]
        scores = score_candidates(ctr_model, user, history, list(case.candidates))
        labels = np.r_[1, np.zeros(len(case.negatives))]
        return roc_auc_score(labels, scores)

    users = [u for u in split.users if split.train[u] and split.validation[u].negatives]

    return float(np.mean(parallel_map(user_auc, users, threads)))


def curiosity_histogram(values, bin_width=BIN_WIDTH):
    """Counts of curiosity values in fixed-width bins over [0, 1]."""

    frame = pd.DataFrame({"curiosity": np.asarray(values, dtype=np.float64)})
    binned, bins, _, _ = create_bins(frame, "curiosity", bin_width, lower=0.0, upper=1.0)

    return bin_data(binned, "curiosity", bins)["count"].to_numpy()


def sequence_seed(seed, x):
    return derive_seed(seed, "sequence", percent_label(x))


def sweep_x(
    xs, train, factor_model, long_sets, catalog_items, sequence_config, seed, n=20, threads=1
):
    """Retrains the sequence model on each session percentage and recomputes every user's
    curiosity. A failure at one percentage is recorded on its result; the others still run.

    Parameters:
        xs (list): session percentages
        train (dict): user id -> list of Interaction
        factor_model (FactorModel): shared item factors
        long_sets (dict): user id -> long-term PreferenceSet
        catalog_items (iterable): item ids to rank
        sequence_config (SequenceConfig): sequence hyper-parameters (its x is ignored)
        seed (int): master seed
        n (int): preference set size
        threads (int): worker count

    Returns:
        list: SweepResult per percentage
    """

    catalog_items = list(catalog_items)
    users = sorted(long_sets)
    results = []
    for x in xs:
        try:
            model = train_sequence_model(
                session_map(train, x, users),
                factor_model,
                hidden=sequence_config.hidden,
                lr=sequence_config.lr,
                epochs=sequence_config.epochs,
                clip_norm=sequence_config.clip_norm,
                max_len=sequence_config.max_len,
                init_scale=sequence_config.init_scale,
                seed=sequence_seed(seed, x),
            )
            short_sets = short_term_sets(
                model, factor_model, {u: train[u] for u in users}, x, catalog_items, n, threads
            )
            profiles = compute_profiles(long_sets, short_sets, x, threads)
        except Exception as err:
            logger.exception("sweep at x=%s failed", x)
            results.append(SweepResult(x, {}, curiosity_histogram([]), f"{err}"))
            continue

        values = [p.curiosity for p in profiles.values()]
        results.append(SweepResult(x, profiles, curiosity_histogram(values)))
        logger.info("sweep x=%s: %d users", x, len(profiles))

    return results


def sweep_summary(results, threshold=0.5):
    """Per percentage: user count, mean and median curiosity, share of users below
    < threshold >, the curiosity histogram and any recorded error.

    Parameters:
        results (list): SweepResult objects
        threshold (float): low-curiosity cutoff

    Returns:
        pd.DataFrame: one row per percentage
    """

    frames = [r.frame.assign(x=r.x) for r in results if r.error is None]
    rows = pd.DataFrame({"x": [r.x for r in results]})
    if frames:
        profiles = pd.concat(frames, ignore_index=True)
        profiles["low"] = (profiles["curiosity"] < threshold).astype(float)
        summary = compute_sum_stats_by_group(
            profiles, "x", ["curiosity", "low"], ["count", "mean", "median"], precision=6
        )
        summary = summary.rename(
            columns={
                "curiosity count": "users",
                "curiosity mean": "mean_curiosity",
                "curiosity median": "median_curiosity",
                "low mean": "low_share",
            }
        )[["x", "users", "mean_curiosity", "median_curiosity", "low_share"]]
        rows = rows.merge(summary, on="x", how="left")

    rows["histogram"] = [" ".join(str(int(c)) for c in r.histogram) for r in results]
    rows["error"] = [r.error or "" for r in results]

    return rows


def sweep_scatter_chart(results, chart_config, threshold=0.5):
    """One diff-versus-diversity panel per successful percentage, concatenated."""

    panels = [
        create_scatter(
            r.frame,
            format_title(r.frame, f"x = {percent_label(r.x)}%", threshold),
            chart_config.scheme,
            chart_config.height,
            chart_config.width,
        )
        for r in results
        if r.error is None and r.profiles
    ]

    return concat_charts(panels, Orient.HORIZONTAL, columns=3, title="Diversive curiosity by x")


def curiosity_histogram_chart(result, chart_config, threshold=0.5):
    """Histogram of one percentage's curiosity values with mean and sigma rules."""

    frame = result.frame
    binned, bins, _, _ = create_bins(frame, "curiosity", BIN_WIDTH, lower=0.0, upper=1.0)
    summary = describe_numeric_column(frame["curiosity"])

    return create_histogram(
        bin_data(binned, "curiosity", bins),
        x_title="Curiosity",
        y_title="Users",
        mu=summary["center"]["mean"],
        sigma=summary["spread"]["std"],
        bin_width=BIN_WIDTH,
        bar_color=chart_config.bar_color,
        mu_color=chart_config.mu_color,
        sigma_color=chart_config.sigma_color,
        title=format_title(frame, f"Curiosity, x = {percent_label(result.x)}%", threshold),
        height=chart_config.height,
        width=chart_config.width,
    )
