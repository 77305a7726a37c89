from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import hashlib
import json
from pathlib import Path
import tomllib
import zlib

import numpy as np

from curio_rank.errors import ConfigError

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "curio_rank.toml"


@dataclass(frozen=True)
class DataConfig:
    ratings_path: str = "data/raw/ml-1m/ratings.dat"
    movies_path: str = "data/raw/ml-1m/movies.dat"
    encoding: str = "latin-1"
    min_events: int = 5
    max_users: int = 0  # 0 keeps every user


@dataclass(frozen=True)
class SplitConfig:
    val_negatives: int = 9
    test_negatives: int = 49


@dataclass(frozen=True)
class FactorConfig:
    dim: int = 80
    lr: float = 0.005
    reg: float = 0.02
    epochs: int = 20
    init_std: float = 0.1
    top_n: int = 20


@dataclass(frozen=True)
class SequenceConfig:
    x: float = 30
    hidden: int = 80
    lr: float = 0.01
    epochs: int = 10
    clip_norm: float = 5.0
    max_len: int = 200
    init_scale: float = 0.1


@dataclass(frozen=True)
class CtrConfig:
    dim: int = 32
    hidden: int = 32
    mlp_hidden: int = 64
    lr: float = 0.005
    epochs: int = 5
    clip_norm: float = 5.0
    max_history: int = 100
    examples_per_user: int = 10
    init_scale: float = 0.1


@dataclass(frozen=True)
class SurpriseConfig:
    max_pairs: int = 1000
    max_iter: int = 100
    tol: float = 1e-6
    fallback_bandwidth: float = 1e-3


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple = (5, 10, 15, 20)
    top_n: int = 20
    fixed_weight: float = 0.5


@dataclass(frozen=True)
class SweepConfig:
    enabled: bool = True
    xs: tuple = (5, 10, 15, 20, 25, 30)
    low_curiosity_threshold: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    threads: int = 1
    out_dir: str = "out"


@dataclass(frozen=True)
class ChartConfig:
    bar_color: str = "#00537e"
    mu_color: str = "#ef3824"
    sigma_color: str = "#495153"
    scheme: str = "viridis"
    height: int = 240
    width: int = 240


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    factorization: FactorConfig = field(default_factory=FactorConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    ctr: CtrConfig = field(default_factory=CtrConfig)
    surprise: SurpriseConfig = field(default_factory=SurpriseConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunConfig = field(default_factory=RunConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(PipelineConfig)}


def build_config(raw):
    """Builds a < PipelineConfig > from a nested dictionary (e.g., a parsed TOML document).
    Sections and keys not present take their defaults. Lists are frozen into tuples.

    Parameters:
        raw (dict): nested dictionary of section name -> {key: value}

    Returns:
        PipelineConfig: validated configuration
    """

    sections = {}
    for name, values in raw.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        if not isinstance(values, dict):
            raise ConfigError(f"config section [{name}] must be a table")

        section_cls = SECTIONS[name]
        known = {f.name for f in dataclasses.fields(section_cls)}
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")

        frozen = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        sections[name] = section_cls(**frozen)

    cfg = PipelineConfig(**sections)
    validate_config(cfg)

    return cfg


def load_config(path=None):
    """Loads a TOML pipeline configuration. Falls back to the packaged default file and, if that
    is absent too, to built-in defaults.

    Parameters:
        path (str|Path): TOML file path or None

    Returns:
        PipelineConfig: configuration
    """

    path = Path(path) if path else DEFAULT_CONFIG
    if not path.exists():
        if path == DEFAULT_CONFIG:
            return PipelineConfig()
        raise FileNotFoundError(f"config file not found: {path}")

    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    return build_config(raw)


def validate_config(cfg):
    if not 1 <= cfg.sequence.x <= 100:
        raise ConfigError(f"sequence.x must lie in [1, 100], got {cfg.sequence.x}")
    if any(not 1 <= x <= 100 for x in cfg.sweep.xs):
        raise ConfigError(f"sweep.xs must lie in [1, 100], got {list(cfg.sweep.xs)}")
    if any(k < 1 for k in cfg.evaluation.ks):
        raise ConfigError(f"evaluation.ks must be positive, got {list(cfg.evaluation.ks)}")
    if cfg.evaluation.ks and max(cfg.evaluation.ks) > cfg.split.test_negatives + 1:
        raise ConfigError("evaluation.ks cannot exceed the number of test candidates")
    if not 0.0 <= cfg.evaluation.fixed_weight <= 1.0:
        raise ConfigError("evaluation.fixed_weight must lie in [0, 1]")
    if cfg.run.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if cfg.factorization.dim < 1 or cfg.ctr.dim < 1:
        raise ConfigError("latent dimensions must be positive")
    if cfg.sequence.hidden != cfg.factorization.dim:
        raise ConfigError(
            f"sequence.hidden ({cfg.sequence.hidden}) must equal factorization.dim "
            f"({cfg.factorization.dim})"
        )
    if not 1 <= cfg.evaluation.top_n <= cfg.split.test_negatives + 1:
        raise ConfigError("evaluation.top_n must lie in [1, test candidates]")


def apply_overrides(cfg, seed=None, x=None, ks=None, threads=None, out_dir=None):
    """Returns a copy of < cfg > with command-line flag values applied. None means "keep".

    Parameters:
        cfg (PipelineConfig): base configuration
        seed (int): master seed
        x (float): short-term session percentage
        ks (list): cutoffs for top-k metrics
        threads (int): worker thread count
        out_dir (str): output directory

    Returns:
        PipelineConfig: configuration with overrides
    """

    run = cfg.run
    if seed is not None:
        run = dataclasses.replace(run, seed=seed)
    if threads is not None:
        run = dataclasses.replace(run, threads=threads)
    if out_dir is not None:
        run = dataclasses.replace(run, out_dir=str(out_dir))

    sequence = dataclasses.replace(cfg.sequence, x=x) if x is not None else cfg.sequence
    evaluation = (
        dataclasses.replace(cfg.evaluation, ks=tuple(ks)) if ks is not None else cfg.evaluation
    )

    cfg = dataclasses.replace(cfg, run=run, sequence=sequence, evaluation=evaluation)
    validate_config(cfg)

    return cfg


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def config_echo(cfg):
    """The configuration as written into output files: everything except thread count and
    output directory."""

    echo = config_to_dict(cfg)
    echo["run"].pop("threads")
    echo["run"].pop("out_dir")

    return echo


def config_hash(cfg):
    """Hashes everything that can change numeric artifacts. Thread count and output directory
    are excluded, so runs differing only in those share snapshots.

    Parameters:
        cfg (PipelineConfig): configuration

    Returns:
        str: 12 hex characters
    """

    echo = config_echo(cfg)
    echo.pop("chart")
    canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"))

    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def derive_seed(seed, *labels):
    """Derives an independent child seed from the master < seed > and any number of labels
    (ints or strings), e.g., derive_seed(42, "sweep", 15).

    Parameters:
        seed (int): master seed
        *labels (int|str): stage or entity labels

    Returns:
        int: derived 32-bit seed
    """

    entropy = [int(seed)]
    for label in labels:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label))

    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def percent_label(x):
    """Formats a session percentage for file names: 30 -> "30", 12.5 -> "12.5"."""

    x = float(x)
    return str(int(x)) if x.is_integer() else f"{x:g}"
