"""pandas helpers: binning, summary statistics, genre composition and provenance-stamped CSV."""

import json
from pathlib import Path
import warnings

import numpy as np
import pandas as pd
import scipy.stats as stats

from curio_rank.errors import CurioRankWarning

COMMENT = "#"


def compute_sum_stats_by_group(frame, groups, agg_columns, agg_funcs, reset_idx=True, precision=4):
    """Performs a group by operation on the < frame > and then computes summary statistics for
    each group. Every column in < agg_columns > receives every function in < agg_funcs >; the
    resulting columns are flattened to "<column> <func>" names.

    Parameters:
        frame (pd.DataFrame): DataFrame of interest
        groups (list|str): grouping columns
        agg_columns (list): columns to aggregate
        agg_funcs (list): aggregation functions to compute
        reset_idx (bool): whether to reset the index of the resulting DataFrame
        precision (int): number of decimal places to retain

    Returns:
        pd.DataFrame: summary statistics per group
    """

    agg = {column: agg_funcs for column in frame.columns if column in agg_columns}
    summary = frame.groupby(groups, sort=True).agg(agg).round(precision)
    summary.columns = flatten_columns(summary)

    return summary.reset_index() if reset_idx else summary


def flatten_columns(frame):
    """Flattens multi-index columns in the passed in < frame >. If a column is a tuple, the
    elements are joined by a space.

    Parameters:
        frame (pd.DataFrame): DataFrame of interest

    Returns:
        list: list of column names
    """

    return [
        " ".join(str(c) for c in col if c) if isinstance(col, tuple) else col
        for col in frame.columns
    ]


def create_bins(frame, column, bin_width, lower=None, upper=None):
    """Creates bins for the passed in < column > per the specified < bin_width >. The range
    defaults to the data range; pass < lower > and < upper > for fixed edges (e.g., [0, 1]).

    Parameters:
        frame (pd.DataFrame): DataFrame of interest
        column (str): column to be binned
        bin_width (float): width of each bin
        lower (float): first bin edge
        upper (float): last bin edge

    Returns:
        tuple: binned pd.DataFrame, bins, num_bins, and bin_width
    """

    if lower is None:
        lower = np.floor(frame[column].min() / bin_width) * bin_width
    if upper is None:
        upper = np.ceil(frame[column].max() / bin_width) * bin_width

    num_bins = int(round((upper - lower) / bin_width))
    bins = np.round(lower + bin_width * np.arange(num_bins + 1), 12)

    frame = frame.copy()
    frame["bin"] = np.clip(np.digitize(frame[column], bins) - 1, 0, num_bins - 1)

    return frame, bins, num_bins, bin_width


def bin_data(frame, column, bins):
    """Counts the < column > values per bin, empty bins included, and adds each bin's start,
    end and center.

    Parameters:
        frame (pd.DataFrame): DataFrame with a "bin" column from < create_bins() >
        column (str): binned column
        bins (np.ndarray): bin edges

    Returns:
        pd.DataFrame: one row per bin
    """

    binned_data = (
        frame.groupby("bin")[column]
        .count()
        .reindex(range(len(bins) - 1), fill_value=0)
        .rename_axis("bin")
        .reset_index(name="count")
    )
    binned_data["bin_start"] = bins[binned_data["bin"]]
    binned_data["bin_end"] = bins[binned_data["bin"] + 1]
    binned_data["bin_center"] = (binned_data["bin_start"] + binned_data["bin_end"]) / 2

    return binned_data


def describe_numeric_column(column):
    """Returns a dictionary of descriptive statistics for the passed in numeric < column >. A
    non-numeric or empty column raises a CurioRankWarning and returns None.

    Parameters:
        column (pd.Series): column of interest

    Returns:
        dict: descriptive statistics
    """

    if not np.issubdtype(column.dtype, np.number):
        warnings.warn(f"column {column.name} is not numeric", CurioRankWarning)
        return None
    if column.count() == 0:
        warnings.warn(f"column {column.name} has no values", CurioRankWarning)
        return None

    values = column.dropna()
    low, high = float(values.min()), float(values.max())

    return {
        "name": column.name,
        "count": int(values.count()),
        "missing": int(column.isna().sum()),
        "center": {"mean": float(values.mean()), "median": float(values.median())},
        "position": {
            "min": low,
            "25%": float(values.quantile(0.25)),
            "75%": float(values.quantile(0.75)),
            "max": high,
        },
        "spread": {
            "std": float(values.std(ddof=0)),
            "range": high - low,
            "iqr": float(stats.iqr(values)),
        },
    }


def genre_composition(items, catalog):
    """Primary-genre counts and shares of an item list, most common first (ties by name).

    Parameters:
        items (list): item ids
        catalog (Catalog): item metadata

    Returns:
        pd.DataFrame: columns genre, count, share
    """

    genres = pd.Series([catalog.primary_genre(i) for i in items], name="genre", dtype=object)
    composition = genres.value_counts().rename_axis("genre").reset_index(name="count")
    composition = composition.sort_values(["count", "genre"], ascending=[False, True])
    composition["share"] = composition["count"] / len(items)

    return composition.reset_index(drop=True)


def provenance_header(seed, digest, config=None):
    """Comment lines naming the seed and config hash, then the config echo as JSON if given."""

    lines = [f"{COMMENT} curio-rank seed={seed} config={digest}"]
    if config is not None:
        lines.append(f"{COMMENT} config_echo={json.dumps(config, sort_keys=True)}")

    return "\n".join(lines)


def write_csv(frame, path, seed, digest, config=None, float_format=None):
    """Writes < frame > as CSV below comment lines carrying the seed, the config hash and the
    config echo.

    Parameters:
        frame (pd.DataFrame): data
        path (str|Path): destination
        seed (int): master seed
        digest (str): config hash
        config (dict): config echo (None omits it)
        float_format (str): number format (None keeps full precision)

    Returns:
        Path: written file
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(provenance_header(seed, digest, config) + "\n")
        frame.to_csv(f, index=False, float_format=float_format, lineterminator="\n")

    return path


def read_csv(path):
    return pd.read_csv(path, comment=COMMENT)
