import numpy as np
import pytest

from curio_rank.corpus import Catalog, Interaction
from curio_rank.factorization import FactorModel, PreferenceSet

GENRES = ["Comedy", "Drama", "Action", "Thriller|Drama", "Children's|Comedy"]
N_MOVIES = 80
N_USERS = 16
EVENTS_PER_USER = 15
BASE_TS = 978300000


def movie_lines():
    return [
        f"{i}::Movie {i} ({1950 + i % 50})::{GENRES[i % len(GENRES)]}"
        for i in range(1, N_MOVIES + 1)
    ]


def rating_lines():
    lines = []
    for u in range(1, N_USERS + 1):
        for k in range(EVENTS_PER_USER):
            item = (u * 7 + k * 5) % N_MOVIES + 1
            lines.append(f"{u}::{item}::{1 + (u + k) % 5}::{BASE_TS + u * 1000 + k * 60}")
    return lines


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def movielens(tmp_path):
    """Small MovieLens-style `ratings.dat` and `movies.dat` files."""

    data = tmp_path / "data"
    data.mkdir()
    ratings = data / "ratings.dat"
    movies = data / "movies.dat"
    ratings.write_text("\n".join(rating_lines()) + "\n", encoding="latin-1")
    movies.write_text("\n".join(movie_lines()) + "\n", encoding="latin-1")

    return ratings, movies


@pytest.fixture
def small_config(tmp_path, movielens):
    """TOML config with tiny models over the synthetic files."""

    ratings, movies = movielens
    path = tmp_path / "config.toml"
    path.write_text(
        f"""
[data]
ratings_path = "{ratings.as_posix()}"
movies_path = "{movies.as_posix()}"

[factorization]
dim = 4
epochs = 3
lr = 0.02

[sequence]
hidden = 4
epochs = 2

[ctr]
dim = 4
hidden = 3
mlp_hidden = 6
epochs = 2
examples_per_user = 3

[sweep]
xs = [30, 50]

[run]
seed = 7
out_dir = "{(tmp_path / 'out').as_posix()}"
""",
        encoding="utf-8",
    )

    return path


def make_events(user_id, items, start=BASE_TS, step=60, rating=4):
    return [Interaction(user_id, item, rating, start + k * step) for k, item in enumerate(items)]


def make_catalog(n_items):
    items = tuple(range(1, n_items + 1))
    return Catalog(
        items=items,
        titles={i: f"Movie {i}" for i in items},
        genres={i: [GENRES[i % len(GENRES)].split("|")[0]] for i in items},
        years={i: 1950 + i % 50 for i in items},
    )


def make_factor_model(rng, n_users, n_items, dim):
    return FactorModel(
        user_ids=np.arange(1, n_users + 1),
        item_ids=np.arange(1, n_items + 1),
        user_factors=rng.normal(size=(n_users, dim)),
        item_factors=rng.normal(size=(n_items, dim)),
        user_bias=rng.normal(scale=0.1, size=n_users),
        item_bias=rng.normal(scale=0.1, size=n_items),
        global_mean=3.5,
    )


def make_set(user_id, items, kind="short", dim=3, vectors=None):
    if vectors is None:
        vectors = np.zeros((len(items), dim))
    return PreferenceSet(user_id, kind, tuple(items), np.asarray(vectors, dtype=np.float64))
