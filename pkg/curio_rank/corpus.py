"""MovieLens ingestion, time-ordered user sequences, the leave-last-out split with sampled
negatives, and the trailing x% session used for short-term modeling."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
import re

import numpy as np
import pandas as pd

from curio_rank.errors import DataValidationError, ParseError

logger = logging.getLogger(__name__)

SEPARATOR = "::"
RATING_COLUMNS = ["user_id", "item_id", "rating", "timestamp"]
MOVIE_COLUMNS = ["item_id", "title", "genres"]
MIN_EVENTS = 5
YEAR_PATTERN = re.compile(r"\s*\((\d{4})\)\s*$")


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    rating: int
    timestamp: int

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise DataValidationError(f"rating must be in 1-5, got {self.rating}")
        if self.timestamp <= 0:
            raise DataValidationError(f"timestamp must be positive, got {self.timestamp}")


@dataclass(frozen=True)
class UserSequence:
    user_id: int
    events: tuple

    def __len__(self):
        return len(self.events)

    @property
    def items(self):
        return [e.item_id for e in self.events]


@dataclass(frozen=True)
class Catalog:
    """Item metadata: ids in ascending order, titles (without year), genre lists and years."""

    items: tuple
    titles: dict = field(default_factory=dict)
    genres: dict = field(default_factory=dict)
    years: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def __contains__(self, item_id):
        return item_id in self.titles

    def primary_genre(self, item_id):
        genres = self.genres.get(item_id) or ["(unknown)"]
        return genres[0]


@dataclass(frozen=True)
class EvalCase:
    """One held-out positive plus the sampled negatives for a user."""

    positive: Interaction
    negatives: tuple

    @property
    def candidates(self):
        return (self.positive.item_id, *self.negatives)


@dataclass(frozen=True)
class SplitDataset:
    train: dict
    validation: dict
    test: dict
    catalog: Catalog

    @property
    def users(self):
        return sorted(self.train)

    @property
    def genres(self):
        return self.catalog.genres

    @property
    def titles(self):
        return self.catalog.titles


def read_dat(path, columns, encoding="latin-1"):
    """Reads a `::`-separated MovieLens file into a DataFrame of strings. A `line` column
    records the 1-based source line of every row. Blank lines are skipped.

    Parameters:
        path (str|Path): file path
        columns (list): expected field names
        encoding (str): file encoding (MovieLens-1M titles are latin-1)

    Returns:
        pd.DataFrame: one row per record plus a < line > column
    """

    rows = []
    with open(path, encoding=encoding) as f:
        for number, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(SEPARATOR)
            if len(parts) != len(columns):
                raise ParseError(path, number, line, f"expected {len(columns)} fields")
            rows.append([*parts, number])

    return pd.DataFrame(rows, columns=[*columns, "line"])


def coerce_integer_columns(frame, columns, path):
    """Converts < columns > of < frame > to int64 in place. The first non-integer value found
    raises a ParseError carrying its source line number.

    Parameters:
        frame (pd.DataFrame): DataFrame produced by < read_dat() >
        columns (list): columns that must hold integers
        path (str|Path): source file, for error messages

    Returns:
        pd.DataFrame: the same frame with integer columns
    """

    for column in columns:
        values = frame[column].str.strip()
        mask = ~values.str.fullmatch(r"[+-]?\d+").fillna(False).astype(bool)
        if mask.any():
            row = frame[mask].iloc[0]
            text = SEPARATOR.join(str(v) for v in row.iloc[:-1])
            raise ParseError(path, int(row["line"]), text, f"bad {column}")
        frame[column] = values.astype("int64")

    return frame


def split_title(title):
    """Splits a MovieLens title such as "Toy Story (1995)" into ("Toy Story", 1995)."""

    match = YEAR_PATTERN.search(title)
    if not match:
        return title.strip(), None

    return YEAR_PATTERN.sub("", title).strip(), int(match.group(1))


def load_catalog(movies_path, encoding="latin-1"):
    """Parses `movies.dat` lines of the form `MovieID::Title::Genres`.

    Parameters:
        movies_path (str|Path): path to movies.dat
        encoding (str): file encoding

    Returns:
        Catalog: item metadata
    """

    movies = coerce_integer_columns(
        read_dat(movies_path, MOVIE_COLUMNS, encoding), ["item_id"], movies_path
    )

    duplicated = movies["item_id"].duplicated()
    if duplicated.any():
        row = movies[duplicated].iloc[0]
        raise DataValidationError(f"{movies_path}:{row['line']}: duplicate item {row['item_id']}")

    titles, genres, years = {}, {}, {}
    for item_id, title, genre_list in movies[MOVIE_COLUMNS].itertuples(index=False):
        item_id = int(item_id)
        titles[item_id], years[item_id] = split_title(title)
        genres[item_id] = [g for g in genre_list.split("|") if g]

    return Catalog(items=tuple(sorted(titles)), titles=titles, genres=genres, years=years)


def load_movielens(ratings_path, movies_path, encoding="latin-1", min_events=MIN_EVENTS):
    """Loads MovieLens ratings and movie metadata and builds one time-ordered sequence per
    user. Events with equal timestamps keep their file order. Users with fewer than
    < min_events > events are dropped (and counted in the log).

    Parameters:
        ratings_path (str|Path): path to ratings.dat (`UserID::MovieID::Rating::Timestamp`)
        movies_path (str|Path): path to movies.dat (`MovieID::Title::Genres`)
        encoding (str): file encoding
        min_events (int): minimum sequence length kept

    Returns:
        tuple: (list of UserSequence ordered by user id, Catalog)
    """

    catalog = load_catalog(movies_path, encoding)
    ratings = coerce_integer_columns(
        read_dat(ratings_path, RATING_COLUMNS, encoding), RATING_COLUMNS, ratings_path
    )

    if ratings.empty:
        logger.info("%s holds no ratings", ratings_path)
        return [], catalog

    bad_rating = ~ratings["rating"].between(1, 5)
    if bad_rating.any():
        row = ratings[bad_rating].iloc[0]
        raise DataValidationError(
            f"{ratings_path}:{row['line']}: rating {row['rating']} outside 1-5"
        )

    bad_timestamp = ratings["timestamp"] <= 0
    if bad_timestamp.any():
        row = ratings[bad_timestamp].iloc[0]
        raise DataValidationError(
            f"{ratings_path}:{row['line']}: timestamp {row['timestamp']} must be positive"
        )

    unknown = ~ratings["item_id"].isin(list(catalog.titles))
    if unknown.any():
        row = ratings[unknown].iloc[0]
        raise DataValidationError(
            f"{ratings_path}:{row['line']}: item {row['item_id']} missing from {movies_path}"
        )

    # Stable ordering: user, then timestamp, then file line
    order = np.lexsort((ratings["line"], ratings["timestamp"], ratings["user_id"]))
    ratings = ratings.iloc[order]

    sequences = []
    for user_id, group in ratings.groupby("user_id", sort=True):
        events = tuple(
            Interaction(int(u), int(i), int(r), int(t))
            for u, i, r, t in group[RATING_COLUMNS].itertuples(index=False)
        )
        sequences.append(UserSequence(int(user_id), events))

    sequences = drop_short_sequences(sequences, min_events)
    logger.info(
        "loaded %d ratings for %d users over %d catalog items",
        len(ratings),
        len(sequences),
        len(catalog),
    )

    return sequences, catalog


def drop_short_sequences(sequences, min_events=MIN_EVENTS):
    kept = [s for s in sequences if len(s) >= min_events]
    dropped = len(sequences) - len(kept)
    if dropped:
        logger.warning("dropped %d users with fewer than %d events", dropped, min_events)

    return kept


def subsample_users(sequences, max_users, seed):
    """Keeps a seeded random subset of at most < max_users > sequences (0 keeps all), in user
    id order.

    Parameters:
        sequences (list): UserSequence objects
        max_users (int): subset size (0 = everything)
        seed (int): sampling seed

    Returns:
        list: selected sequences ordered by user id
    """

    if not max_users or max_users >= len(sequences):
        return list(sequences)

    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(sequences), size=max_users, replace=False))
    logger.info("subsampled %d of %d users", max_users, len(sequences))

    return [sequences[i] for i in picked]


def split_leave_last_out(sequences, catalog, seed, val_negatives=9, test_negatives=49):
    """Applies the leave-last-out protocol: for a sequence of N events the first N-2 go to
    training, event N-1 is the validation positive and event N the test positive. Negatives
    are drawn uniformly without replacement from catalog items the user never interacted
    with. Users with too few events or too few unseen items are excluded and counted.

    Parameters:
        sequences (list): UserSequence objects
        catalog (Catalog): item metadata; its item ids form the sampling universe
        seed (int): sampling seed
        val_negatives (int): negatives per validation positive
        test_negatives (int): negatives per test positive

    Returns:
        SplitDataset: the partition
    """

    rng = np.random.default_rng(seed)
    universe = np.asarray(catalog.items, dtype=np.int64)
    train, validation, test = {}, {}, {}
    short, crowded = 0, 0

    for sequence in sorted(sequences, key=lambda s: s.user_id):
        if len(sequence) < MIN_EVENTS:
            short += 1
            continue

        seen = np.unique([e.item_id for e in sequence.events])
        unseen = np.setdiff1d(universe, seen, assume_unique=True)
        if len(unseen) < max(val_negatives, test_negatives):
            crowded += 1
            continue

        val_neg = np.sort(rng.choice(unseen, size=val_negatives, replace=False))
        test_neg = np.sort(rng.choice(unseen, size=test_negatives, replace=False))

        user = sequence.user_id
        train[user] = list(sequence.events[:-2])
        validation[user] = EvalCase(sequence.events[-2], tuple(int(i) for i in val_neg))
        test[user] = EvalCase(sequence.events[-1], tuple(int(i) for i in test_neg))

    if short:
        logger.warning("excluded %d users with fewer than %d events", short, MIN_EVENTS)
    if crowded:
        logger.warning("excluded %d users with too few unseen items to sample negatives", crowded)

    return SplitDataset(train=train, validation=validation, test=test, catalog=catalog)


def session_suffix(events, x):
    """Returns the last ceil(x/100 * len(events)) events, order preserved and never empty.

    Parameters:
        events (list|UserSequence): training events of one user
        x (float): percentage in [1, 100]

    Returns:
        list: trailing session
    """

    if isinstance(events, UserSequence):
        events = events.events
    if not 1 <= x <= 100:
        raise ValueError(f"session percentage must lie in [1, 100], got {x}")
    if not events:
        raise ValueError("cannot take a session suffix of an empty sequence")

    length = max(1, math.ceil(x * len(events) / 100))

    return list(events[-length:])


def time_deltas(events):
    """Seconds elapsed since the previous event; the first event gets 0."""

    stamps = np.asarray([e.timestamp for e in events], dtype=np.float64)
    deltas = np.zeros_like(stamps)
    deltas[1:] = np.diff(stamps)

    return deltas


def split_records(split, role_set):
    """Flattens one part of a split into JSON-ready records with a pos/neg role.

    Parameters:
        split (SplitDataset): partition
        role_set (str): "train", "val", or "test"

    Returns:
        list: dictionaries with user_id, item_id, rating, timestamp, role
    """

    records = []
    if role_set == "train":
        for user in split.users:
            for e in split.train[user]:
                records.append(
                    {"user_id": e.user_id, "item_id": e.item_id, "rating": e.rating,
                     "timestamp": e.timestamp, "role": "pos"}
                )
        return records

    cases = split.validation if role_set == "val" else split.test
    for user in split.users:
        case = cases[user]
        p = case.positive
        records.append(
            {"user_id": user, "item_id": p.item_id, "rating": p.rating,
             "timestamp": p.timestamp, "role": "pos"}
        )
        for item in case.negatives:
            records.append(
                {"user_id": user, "item_id": item, "rating": None, "timestamp": None,
                 "role": "neg"}
            )

    return records


def write_split(split, out_dir, provenance=None):
    """Writes `train.jsonl`, `val.jsonl`, and `test.jsonl` into < out_dir >, plus a
    `provenance.json` sidecar when < provenance > is given.

    Parameters:
        split (SplitDataset): partition
        out_dir (str|Path): destination directory
        provenance (dict): seed, config hash and config echo

    Returns:
        list: written paths
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for role_set in ("train", "val", "test"):
        path = out_dir / f"{role_set}.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            for record in split_records(split, role_set):
                f.write(json.dumps(record, sort_keys=False) + "\n")
        paths.append(path)

    if provenance is not None:
        path = out_dir / "provenance.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(provenance, f, indent=2)
            f.write("\n")
        paths.append(path)

    return paths


def split_to_arrays(split):
    """Packs a SplitDataset into flat numpy arrays for a snapshot (catalog excluded)."""

    users = split.users
    events = [e for u in users for e in split.train[u]]

    def positives(cases):
        return np.array(
            [[u, cases[u].positive.item_id, cases[u].positive.rating, cases[u].positive.timestamp]
             for u in users],
            dtype=np.int64,
        ).reshape(len(users), 4)

    def negatives(cases):
        return np.array([cases[u].negatives for u in users], dtype=np.int64)

    return {
        "train": np.array(
            [[e.user_id, e.item_id, e.rating, e.timestamp] for e in events], dtype=np.int64
        ).reshape(len(events), 4),
        "val_positive": positives(split.validation),
        "val_negatives": negatives(split.validation),
        "test_positive": positives(split.test),
        "test_negatives": negatives(split.test),
    }


def split_from_arrays(arrays, catalog):
    """Inverse of < split_to_arrays() >."""

    train = {}
    for user, item, rating, timestamp in arrays["train"].tolist():
        train.setdefault(user, []).append(Interaction(user, item, rating, timestamp))

    def cases(positive, negatives):
        return {
            row[0]: EvalCase(Interaction(*row), tuple(neg))
            for row, neg in zip(positive.tolist(), negatives.tolist())
        }

    return SplitDataset(
        train=train,
        validation=cases(arrays["val_positive"], arrays["val_negatives"]),
        test=cases(arrays["test_positive"], arrays["test_negatives"]),
        catalog=catalog,
    )
