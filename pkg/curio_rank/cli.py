"""Command-line entry point. Every subcommand runs one pipeline stage; `run` chains them:

    ingest -> train-mf -> train-seq -> train-ctr -> curiosity -> recommend -> evaluate -> sweep-x

Each stage persists a snapshot named `<snapshot>-<config hash>.npz` under `<out>/snapshots/`
and is skipped when that file already exists, unless --force is given.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from functools import cached_property
import json
import logging
from pathlib import Path
import sys

import numpy as np
import pandas as pd
from watermark import watermark

from curio_rank.config import (
    apply_overrides,
    config_echo,
    config_hash,
    derive_seed,
    load_config,
    percent_label,
)
from curio_rank.corpus import (
    load_catalog,
    load_movielens,
    session_suffix,
    split_from_arrays,
    split_leave_last_out,
    split_to_arrays,
    subsample_users,
    write_split,
)
from curio_rank.curiosity import CuriosityProfile, compute_profiles, profiles_frame
from curio_rank.errors import (
    ConfigError,
    DataValidationError,
    MissingSnapshotError,
    ParseError,
    StageError,
    UnknownEntityError,
)
from curio_rank.evalharness import (
    REFERENCE_UNEXP_BAND,
    CandidateScores,
    compare_strategies,
    curiosity_histogram_chart,
    recommend_users,
    score_test_candidates,
    sequence_seed,
    sweep_scatter_chart,
    sweep_summary,
    sweep_x,
    validation_auc,
)
from curio_rank.factorization import (
    FactorModel,
    long_term_preferences,
    long_term_sets,
    train_factors,
)
from curio_rank.frame import genre_composition, provenance_header, write_csv
from curio_rank.relevance import CtrModel, train_ctr
from curio_rank.sequence import (
    SequenceModel,
    session_map,
    short_term_preferences,
    short_term_sets,
    train_sequence_model,
)
from curio_rank.snapshot import load_snapshot, save_snapshot
from curio_rank.surprise import cluster_users

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_MISSING_SNAPSHOT = 3
EXIT_BAD_ARGUMENT = 4

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
STALE_MARKER = "stale.json"
ENVIRONMENT_PACKAGES = "numpy,pandas,scipy,altair,scikit-learn,watermark"
TABLE_COLUMNS = ["Number", "Movie Title", "Genre", "Release Date"]


@dataclass(frozen=True)
class Stage:
    name: str
    snapshot: str
    requires: tuple


STAGES = (
    Stage("ingest", "ingest", ()),
    Stage("train-mf", "factorization", ("ingest",)),
    Stage("train-seq", "sequence", ("ingest", "factorization")),
    Stage("train-ctr", "ctr", ("ingest",)),
    Stage("curiosity", "curiosity", ("ingest", "factorization", "sequence")),
    Stage("recommend", "recommend", ("ingest", "ctr", "curiosity")),
    Stage("evaluate", "evaluate", ("ingest", "ctr", "curiosity", "recommend")),
    Stage("sweep-x", "sweep", ("ingest", "factorization")),
)
STAGE_BY_NAME = {stage.name: stage for stage in STAGES}


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the bad-argument status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_ARGUMENT, f"{self.prog}: error: {message}\n")


class Pipeline:
    """Configuration, output locations and lazily loaded stage artifacts of one invocation."""

    def __init__(self, cfg, force=False, dump_clusters=False, user=None):
        self.cfg = cfg
        self.force = force
        self.dump_clusters = dump_clusters
        self.user = user
        self.digest = config_hash(cfg)
        self.seed = cfg.run.seed
        self.threads = cfg.run.threads
        self.out_dir = Path(cfg.run.out_dir)
        self.x_label = percent_label(cfg.sequence.x)

    @property
    def provenance(self):
        return {"seed": self.seed, "config_hash": self.digest, "config": config_echo(self.cfg)}

    def snapshot_path(self, snapshot):
        return self.out_dir / "snapshots" / f"{snapshot}-{self.digest}.npz"

    def load(self, snapshot):
        return load_snapshot(self.snapshot_path(snapshot), snapshot)

    def save(self, snapshot, arrays, meta=None):
        meta = {"seed": self.seed, "config_hash": self.digest, **(meta or {})}
        return save_snapshot(self.snapshot_path(snapshot), snapshot, arrays, meta)

    def write_json(self, name, payload):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        logger.info("wrote %s", path)

        return path

    def write_csv(self, name, frame):
        path = write_csv(
            frame, self.out_dir / name, self.seed, self.digest, config_echo(self.cfg)
        )
        logger.info("wrote %s", path)

        return path

    def save_chart(self, name, chart):
        path = self.out_dir / name
        chart.properties(usermeta={"provenance": self.provenance}).save(str(path))
        logger.info("wrote %s", path)

        return path

    @cached_property
    def catalog(self):
        return load_catalog(self.cfg.data.movies_path, self.cfg.data.encoding)

    @cached_property
    def split(self):
        arrays, _ = self.load("ingest")
        return split_from_arrays(arrays, self.catalog)

    @cached_property
    def factor_model(self):
        arrays, _ = self.load("factorization")
        return FactorModel.from_arrays(arrays)

    @cached_property
    def sequence_model(self):
        arrays, _ = self.load("sequence")
        return SequenceModel.from_arrays(arrays)

    @cached_property
    def ctr_model(self):
        arrays, _ = self.load("ctr")
        return CtrModel.from_arrays(arrays)

    @cached_property
    def profiles(self):
        arrays, meta = self.load("curiosity")
        return {
            int(u): CuriosityProfile(
                user_id=int(u),
                diff_raw=float(raw),
                diff_norm=float(diff),
                div=float(div),
                curiosity=float(c),
                x_used=meta["x"],
                degenerate=bool(degenerate),
            )
            for u, raw, diff, div, c, degenerate in zip(
                arrays["user_id"],
                arrays["diff_raw"],
                arrays["diff_norm"],
                arrays["div"],
                arrays["curiosity"],
                arrays["degenerate"],
            )
        }

    @cached_property
    def candidate_scores(self):
        arrays, _ = self.load("recommend")
        return {
            int(u): CandidateScores(int(u), int(positive), items, useful, unexp)
            for u, positive, items, useful, unexp in zip(
                arrays["users"],
                arrays["positives"],
                arrays["items"],
                arrays["useful"],
                arrays["unexp"],
            )
        }

    @cached_property
    def long_sets(self):
        return long_term_sets(
            self.factor_model,
            self.split.users,
            self.catalog.items,
            self.cfg.factorization.top_n,
            self.threads,
        )


def stage_ingest(pipeline):
    data = pipeline.cfg.data
    sequences, catalog = load_movielens(
        data.ratings_path, data.movies_path, data.encoding, data.min_events
    )
    sequences = subsample_users(
        sequences, data.max_users, derive_seed(pipeline.seed, "subsample")
    )
    split = split_leave_last_out(
        sequences,
        catalog,
        derive_seed(pipeline.seed, "split"),
        pipeline.cfg.split.val_negatives,
        pipeline.cfg.split.test_negatives,
    )
    if not split.train:
        raise DataValidationError(f"no user in {data.ratings_path} survives the split")

    write_split(split, pipeline.out_dir / "split", pipeline.provenance)
    pipeline.save("ingest", split_to_arrays(split), {"users": len(split.train)})


def stage_train_mf(pipeline):
    fc = pipeline.cfg.factorization
    model = train_factors(
        pipeline.split.train,
        dim=fc.dim,
        lr=fc.lr,
        reg=fc.reg,
        epochs=fc.epochs,
        seed=derive_seed(pipeline.seed, "factorization"),
        init_std=fc.init_std,
    )
    pipeline.save("factorization", model.to_arrays(), {"dim": fc.dim, "epochs": fc.epochs})


def stage_train_seq(pipeline):
    sc = pipeline.cfg.sequence
    model = train_sequence_model(
        session_map(pipeline.split.train, sc.x),
        pipeline.factor_model,
        hidden=sc.hidden,
        lr=sc.lr,
        epochs=sc.epochs,
        clip_norm=sc.clip_norm,
        max_len=sc.max_len,
        init_scale=sc.init_scale,
        seed=sequence_seed(pipeline.seed, sc.x),
    )
    pipeline.save("sequence", model.to_arrays(), {"x": sc.x, "hidden": sc.hidden})


def stage_train_ctr(pipeline):
    cc = pipeline.cfg.ctr
    model = train_ctr(
        pipeline.split.train,
        pipeline.catalog.items,
        dim=cc.dim,
        hidden=cc.hidden,
        mlp_hidden=cc.mlp_hidden,
        lr=cc.lr,
        epochs=cc.epochs,
        clip_norm=cc.clip_norm,
        max_history=cc.max_history,
        examples_per_user=cc.examples_per_user,
        init_scale=cc.init_scale,
        seed=derive_seed(pipeline.seed, "ctr"),
    )
    pipeline.save("ctr", model.to_arrays(), {"dim": cc.dim, "hidden": cc.hidden})


def stage_curiosity(pipeline):
    x = pipeline.cfg.sequence.x
    short_sets = short_term_sets(
        pipeline.sequence_model,
        pipeline.factor_model,
        pipeline.split.train,
        x,
        pipeline.catalog.items,
        pipeline.cfg.factorization.top_n,
        pipeline.threads,
    )
    profiles = compute_profiles(pipeline.long_sets, short_sets, x, pipeline.threads)
    frame = profiles_frame(profiles)
    pipeline.write_csv(f"curiosity_x{pipeline.x_label}.csv", frame)

    arrays = {name: frame[name].to_numpy() for name in frame.columns}
    arrays["degenerate"] = np.array([profiles[u].degenerate for u in frame["user_id"]])
    pipeline.save("curiosity", arrays, {"x": x})


def stage_recommend(pipeline):
    sc = pipeline.cfg.surprise
    split = pipeline.split
    clusterings = cluster_users(
        pipeline.ctr_model,
        split.train,
        pipeline.seed,
        sc.max_pairs,
        sc.max_iter,
        sc.tol,
        sc.fallback_bandwidth,
        pipeline.threads,
    )
    scores = score_test_candidates(
        split, pipeline.ctr_model, clusterings, pipeline.cfg.ctr.max_history, pipeline.threads
    )
    lists = recommend_users(
        scores, pipeline.profiles, "curiosity", pipeline.cfg.evaluation.top_n
    )

    pipeline.write_json(
        "recommendations.json",
        {
            "provenance": pipeline.provenance,
            "recommendations": [lists[u].to_dict() for u in sorted(lists)],
        },
    )
    pipeline.write_csv(
        "candidate_scores.csv",
        pd.DataFrame(
            [
                (u, item, useful, unexp)
                for u in sorted(scores)
                for item, useful, unexp in scores[u].triples()
            ],
            columns=["user_id", "item_id", "useful", "unexp"],
        ),
    )

    if pipeline.dump_clusters:
        users = [pipeline.user] if pipeline.user is not None else sorted(clusterings)
        for user in users:
            if user not in clusterings:
                raise UnknownEntityError("user", user)
            pipeline.write_json(
                f"clusters_{user}.json",
                {"provenance": pipeline.provenance, **clusterings[user].to_dict()},
            )

    users = sorted(scores)
    pipeline.save(
        "recommend",
        {
            "users": np.array(users, dtype=np.int64),
            "positives": np.array([scores[u].positive for u in users], dtype=np.int64),
            "items": np.stack([scores[u].items for u in users]),
            "useful": np.stack([scores[u].useful for u in users]),
            "unexp": np.stack([scores[u].unexp for u in users]),
        },
    )


def stage_evaluate(pipeline):
    ec = pipeline.cfg.evaluation
    report = compare_strategies(
        pipeline.candidate_scores, pipeline.profiles, ec.ks, ec.fixed_weight
    )
    report.validation_auc = validation_auc(
        pipeline.split, pipeline.ctr_model, pipeline.cfg.ctr.max_history, pipeline.threads
    )
    pipeline.write_csv("metrics.csv", report.metrics)

    summary = report.unexp_summary
    if summary is not None:
        low, high = REFERENCE_UNEXP_BAND
        logger.info(
            "observed unexp range [%.4f, %.4f] (reference band [%.4f, %.4f])",
            summary["position"]["min"],
            summary["position"]["max"],
            low,
            high,
        )
    logger.info("validation AUC %.4f", report.validation_auc)

    pipeline.write_json(
        "report.json",
        {
            "provenance": pipeline.provenance,
            "environment": watermark(python=True, packages=ENVIRONMENT_PACKAGES).splitlines(),
            **report.to_dict(),
        },
    )
    pipeline.save(
        "evaluate",
        {
            "k": report.metrics["k"].to_numpy(),
            "precision": report.metrics["precision"].to_numpy(),
            "recall": report.metrics["recall"].to_numpy(),
            "unexp": report.metrics["unexp"].to_numpy(),
        },
        {"strategies": report.metrics["strategy"].tolist()},
    )


def stage_sweep(pipeline):
    sw = pipeline.cfg.sweep
    results = sweep_x(
        sw.xs,
        pipeline.split.train,
        pipeline.factor_model,
        pipeline.long_sets,
        pipeline.catalog.items,
        pipeline.cfg.sequence,
        pipeline.seed,
        pipeline.cfg.factorization.top_n,
        pipeline.threads,
    )

    for result in results:
        if result.error is not None:
            continue
        label = percent_label(result.x)
        pipeline.write_csv(f"sweep_x{label}.csv", result.frame)
        chart = curiosity_histogram_chart(result, pipeline.cfg.chart, sw.low_curiosity_threshold)
        pipeline.save_chart(f"curiosity_hist_x{label}.html", chart)

    summary = sweep_summary(results, sw.low_curiosity_threshold)
    pipeline.write_csv("sweep_summary.csv", summary)

    if any(r.error is None and r.profiles for r in results):
        chart = sweep_scatter_chart(results, pipeline.cfg.chart, sw.low_curiosity_threshold)
        pipeline.save_chart("sweep_scatter.html", chart)

    failed = [r.x for r in results if r.error is not None]
    if failed:
        logger.warning("sweep failed at x=%s", failed)

    pipeline.save(
        "sweep",
        {
            "x": np.array([r.x for r in results], dtype=np.float64),
            "histogram": np.stack([r.histogram for r in results]),
        },
        {"failed": failed},
    )


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "train-mf": stage_train_mf,
    "train-seq": stage_train_seq,
    "train-ctr": stage_train_ctr,
    "curiosity": stage_curiosity,
    "recommend": stage_recommend,
    "evaluate": stage_evaluate,
    "sweep-x": stage_sweep,
}


def write_stale_marker(pipeline, stage, cause):
    pipeline.out_dir.mkdir(parents=True, exist_ok=True)
    path = pipeline.out_dir / STALE_MARKER
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"stage": stage, "cause": str(cause), "config_hash": pipeline.digest}, f)
        f.write("\n")
    logger.warning("outputs in %s are stale (stage %s failed)", pipeline.out_dir, stage)


def run_stage(pipeline, name):
    """Runs one stage unless its snapshot already exists (and --force is absent). Missing
    upstream snapshots, like any other failure, leave a stale marker and surface as a
    StageError carrying the original exception.

    Parameters:
        pipeline (Pipeline): invocation state
        name (str): stage name

    Returns:
        bool: True if the stage ran, False if it was skipped
    """

    stage = STAGE_BY_NAME[name]
    snapshot = pipeline.snapshot_path(stage.snapshot)
    if snapshot.exists() and not pipeline.force:
        logger.info("skipping %s: %s exists", name, snapshot)
        return False

    logger.info("starting %s", name)
    try:
        for required in stage.requires:
            if not pipeline.snapshot_path(required).exists():
                raise MissingSnapshotError(required)
        STAGE_FUNCS[name](pipeline)
    except Exception as err:
        write_stale_marker(pipeline, name, err)
        raise StageError(name, err) from err
    logger.info("finished %s", name)

    return True


def run_pipeline(pipeline, stage=None):
    """Runs < stage > alone or, without one, every stage in order (the x sweep only when
    enabled). A complete successful run clears the stale marker.

    Parameters:
        pipeline (Pipeline): invocation state
        stage (str): single stage name or None

    Returns:
        list: names of the stages that ran
    """

    if stage is not None:
        names = [stage]
    else:
        names = [s.name for s in STAGES if s.name != "sweep-x" or pipeline.cfg.sweep.enabled]

    ran = [name for name in names if run_stage(pipeline, name)]

    if stage is None:
        (pipeline.out_dir / STALE_MARKER).unlink(missing_ok=True)

    return ran


def preference_table(items, catalog):
    """Numbered title/genre/year table of a preference list."""

    return pd.DataFrame(
        {
            "Number": range(1, len(items) + 1),
            "Movie Title": [catalog.titles[i] for i in items],
            "Genre": ["|".join(catalog.genres[i]) for i in items],
            "Release Date": pd.array([catalog.years.get(i) for i in items], dtype="Int64"),
        },
        columns=TABLE_COLUMNS,
    )


def dominant_genre_line(label, long_items, short_items, catalog):
    """E.g. "long-term dominant genre: Comedy 45% (9/20) long vs 25% (5/20) short"."""

    own = long_items if label == "long" else short_items
    genre = genre_composition(own, catalog)["genre"].iloc[0]

    def share(items):
        count = sum(catalog.primary_genre(i) == genre for i in items)
        return f"{count / len(items):.0%} ({count}/{len(items)})"

    return (
        f"{label}-term dominant genre: {genre} "
        f"{share(long_items)} long vs {share(short_items)} short"
    )


def inspect_user(pipeline, user_id):
    """Builds the case-study report of one user: the long-term and short-term preference
    tables, the curiosity components to four decimals and the dominant-genre shares.

    Parameters:
        pipeline (Pipeline): invocation state
        user_id (int): user to inspect

    Returns:
        str: report text
    """

    split = pipeline.split
    if user_id not in split.train:
        raise UnknownEntityError("user", user_id)

    profile = pipeline.profiles.get(user_id)
    if profile is None:
        raise UnknownEntityError("user", user_id)

    catalog = pipeline.catalog
    n = pipeline.cfg.factorization.top_n
    long_set = long_term_preferences(pipeline.factor_model, user_id, catalog.items, n)
    short_set = short_term_preferences(
        pipeline.sequence_model,
        pipeline.factor_model,
        session_suffix(split.train[user_id], pipeline.cfg.sequence.x),
        catalog.items,
        n,
    )

    lines = [
        f"user {user_id} (x = {pipeline.x_label}%)",
        "",
        "long-term preferences",
        preference_table(long_set.items, catalog).to_string(index=False),
        "",
        "short-term preferences",
        preference_table(short_set.items, catalog).to_string(index=False),
        "",
        f"diff: {profile.diff_norm:.4f}  div: {profile.div:.4f}  "
        f"curiosity: {profile.curiosity:.4f}",
        dominant_genre_line("long", long_set.items, short_set.items, catalog),
        dominant_genre_line("short", long_set.items, short_set.items, catalog),
    ]

    return "\n".join(lines)


def exit_code(err):
    if isinstance(err, MissingSnapshotError):
        return EXIT_MISSING_SNAPSHOT
    if isinstance(err, (OSError, ParseError, DataValidationError)):
        return EXIT_IO
    if isinstance(err, (UnknownEntityError, ConfigError)):
        return EXIT_BAD_ARGUMENT
    return EXIT_FAILURE


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--x", type=float, help="short-term session percentage (1-100)")
    common.add_argument("--k", type=int, nargs="+", help="top-k cutoffs")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--force", action="store_true", help="ignore existing snapshots")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = CliParser(
        prog="curio-rank", description="Curiosity-weighted serendipitous recommendation."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        sub = commands.add_parser(stage.name, parents=[common], help=f"run the {stage.name} stage")
        if stage.name == "recommend":
            sub.add_argument(
                "--dump-clusters", action="store_true", help="write clusters_<user>.json files"
            )
            sub.add_argument("--user", type=int, help="dump the clusters of this user only")

    run = commands.add_parser("run", parents=[common], help="run the pipeline")
    run.add_argument("--stage", choices=list(STAGE_BY_NAME), help="run a single stage")

    inspect = commands.add_parser(
        "inspect-user", parents=[common], help="print a user's preference report"
    )
    inspect.add_argument("--user", type=int, required=True, help="user id")

    return parser


def main(argv=None):
    """Parses < argv >, runs the requested command and returns the process exit status."""

    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT, force=True
    )
    logging.captureWarnings(True)

    try:
        cfg = apply_overrides(
            load_config(args.config),
            seed=args.seed,
            x=args.x,
            ks=args.k,
            threads=args.threads,
            out_dir=args.out,
        )
        pipeline = Pipeline(
            cfg,
            force=args.force,
            dump_clusters=getattr(args, "dump_clusters", False),
            user=getattr(args, "user", None),
        )

        match args.command:
            case "run":
                run_pipeline(pipeline, args.stage)
            case "inspect-user":
                report = inspect_user(pipeline, args.user)
                print(report)
                path = pipeline.out_dir / f"inspect_user_{args.user}.txt"
                header = provenance_header(
                    pipeline.seed, pipeline.digest, config_echo(pipeline.cfg)
                )
                path.write_text(f"{header}\n{report}\n", encoding="utf-8")
            case command:
                run_pipeline(pipeline, command)
    except StageError as err:
        print(f"curio-rank: error: {err}", file=sys.stderr)
        return exit_code(err.cause)
    except Exception as err:
        print(f"curio-rank: error: {err}", file=sys.stderr)
        return exit_code(err)

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
