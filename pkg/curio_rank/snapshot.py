import json
import logging
from pathlib import Path

import numpy as np

from curio_rank.errors import DataValidationError, MissingSnapshotError

logger = logging.getLogger(__name__)

FORMAT = "curio-rank-snapshot"
VERSION = 1
HEADER_KEY = "__header__"


def save_snapshot(path, kind, arrays, meta=None):
    """Writes named numpy < arrays > to a compressed `.npz` file together with a JSON header
    carrying the format version, the snapshot < kind > and free-form < meta > values.

    Parameters:
        path (str|Path): destination file
        kind (str): snapshot kind, e.g., "factorization"
        arrays (dict): name -> np.ndarray
        meta (dict): JSON-serializable metadata (dims, hyper-parameters, seed)

    Returns:
        Path: the written file
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {"format": FORMAT, "version": VERSION, "kind": kind, "meta": meta or {}}, sort_keys=True
    )

    # Write through a file handle so numpy never appends a second suffix
    with open(path, "wb") as f:
        np.savez_compressed(f, **{HEADER_KEY: np.array(header)}, **arrays)
    logger.debug("saved %s snapshot to %s", kind, path)

    return path


def load_snapshot(path, kind):
    """Reads a snapshot written by < save_snapshot() > and checks its header.

    Parameters:
        path (str|Path): snapshot file
        kind (str): expected snapshot kind

    Returns:
        tuple: (dict of arrays, meta dict)
    """

    path = Path(path)
    if not path.exists():
        raise MissingSnapshotError(kind)

    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data[HEADER_KEY]))
        arrays = {name: data[name] for name in data.files if name != HEADER_KEY}

    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise DataValidationError(f"{path}: unsupported snapshot header {header}")
    if header.get("kind") != kind:
        raise DataValidationError(f"{path}: expected a {kind} snapshot, found {header['kind']}")

    return arrays, header["meta"]
