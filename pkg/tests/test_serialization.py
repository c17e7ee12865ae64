"""Checkpoint container and loss-history CSV tests."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from docutrans.errors import DataFormatError
from docutrans.serialization import (
    Checkpoint,
    LossHistory,
    load_checkpoint,
    save_checkpoint,
)


def sample_checkpoint() -> Checkpoint:
    rng = np.random.default_rng(9)
    return Checkpoint(
        kind="translator",
        config={"zeta": 1, "alpha": {"nested": [1, 2, 3]}, "flag": True},
        arrays={
            "float32": rng.normal(size=(3, 5)).astype(np.float32),
            "float64": rng.normal(size=(2, 2, 2)),
            "int64": rng.integers(-5, 5, size=(7,), dtype=np.int64),
            "uint8": rng.integers(0, 255, size=(4, 4), dtype=np.uint8),
            "empty": np.zeros((0, 3), dtype=np.float32),
        },
        meta={"epoch": 2, "val_loss": 0.5},
    )


def test_round_trip_preserves_everything(tmp_path):
    ck = sample_checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.kind == ck.kind
    assert back.config == ck.config
    assert back.meta == ck.meta
    assert set(back.arrays) == set(ck.arrays)
    for name, arr in ck.arrays.items():
        assert back.arrays[name].dtype == arr.dtype
        assert back.arrays[name].shape == arr.shape
        assert np.array_equal(back.arrays[name], arr)


def test_save_load_save_is_bit_exact(tmp_path):
    ck = sample_checkpoint()
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(first, ck)
    save_checkpoint(second, load_checkpoint(first))
    h = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
    assert h(first) == h(second)


def test_two_saves_identical_bytes(tmp_path):
    # No timestamps or other nondeterminism in the container.
    ck = sample_checkpoint()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, ck)
    save_checkpoint(b, ck)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMYFMT" + b"\x00" * 32)
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    ck = sample_checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ck)
    blob = path.read_bytes()
    trunc = tmp_path / "t.ckpt"
    trunc.write_bytes(blob[: len(blob) - 16])
    with pytest.raises(DataFormatError):
        load_checkpoint(trunc)


def test_loaded_arrays_are_writable(tmp_path):
    ck = sample_checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    back.arrays["float32"][0, 0] = 42.0  # must not be a read-only buffer view
    assert back.arrays["float32"][0, 0] == 42.0


def test_loss_history_append_and_csv(tmp_path):
    hist = LossHistory()
    hist.append(1, 0.75, 0.8)
    hist.append(2, 0.5, 0.55)
    path = tmp_path / "loss.csv"
    hist.to_csv(path)
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == 3


def test_loss_history_exact_float_round_trip(tmp_path):
    hist = LossHistory()
    hist.append(1, 1 / 3, 2 / 7)
    hist.append(2, 1e-300, 1.7976931348623157e308)
    path = tmp_path / "loss.csv"
    hist.to_csv(path)
    back = LossHistory.from_csv(path)
    assert back.epochs == hist.epochs
    assert back.train_loss == hist.train_loss
    assert back.val_loss == hist.val_loss


def test_loss_history_rejects_foreign_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        LossHistory.from_csv(path)
