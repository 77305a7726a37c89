import numpy as np
import pytest

from curio_rank.errors import DataValidationError, MissingSnapshotError
from curio_rank.snapshot import load_snapshot, save_snapshot


def test_arrays_and_meta(tmp_path):
    path = save_snapshot(
        tmp_path / "snapshots" / "factorization-abc.npz",
        "factorization",
        {"user_factors": np.eye(3), "item_ids": np.arange(1, 4)},
        meta={"dim": 3, "seed": 7},
    )
    assert path.name == "factorization-abc.npz"

    arrays, meta = load_snapshot(path, "factorization")
    assert sorted(arrays) == ["item_ids", "user_factors"]
    np.testing.assert_array_equal(arrays["user_factors"], np.eye(3))
    assert meta == {"dim": 3, "seed": 7}


def test_kind_mismatch(tmp_path):
    path = save_snapshot(tmp_path / "seq.npz", "sequence", {"w": np.zeros(2)})
    with pytest.raises(DataValidationError):
        load_snapshot(path, "ctr")


def test_missing(tmp_path):
    with pytest.raises(MissingSnapshotError) as info:
        load_snapshot(tmp_path / "ctr-abc.npz", "ctr")
    assert "ctr" in str(info.value)
