"""Checkpoint container and loss-history CSV.

Checkpoints are a JSON header followed by raw little-endian array bytes.
The format contains no timestamps, so writing the same weights twice yields
byte-identical files and loading restores every array bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError

_MAGIC = b"DTCKPT1\n"


@dataclass
class Checkpoint:
    kind: str
    config: dict
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    specs = []
    blobs = []
    for name, arr in checkpoint.arrays.items():
        arr = np.ascontiguousarray(arr)
        # Normalize byte order so the header dtype is unambiguous.
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {
            "kind": checkpoint.kind,
            "config": checkpoint.config,
            "meta": checkpoint.meta,
            "arrays": specs,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise DataFormatError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return Checkpoint(
        kind=header["kind"], config=header["config"], arrays=arrays, meta=header.get("meta", {})
    )


@dataclass
class LossHistory:
    """Per-epoch train/validation losses, stable across identical runs."""

    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def append(self, epoch: int, train: float, val: float) -> None:
        self.epochs.append(epoch)
        self.train_loss.append(float(train))
        self.val_loss.append(float(val))

    def to_csv(self, path: str | Path) -> None:
        lines = ["epoch,train_loss,val_loss"]
        for e, t, v in zip(self.epochs, self.train_loss, self.val_loss):
            lines.append(f"{e},{t!r},{v!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> "LossHistory":
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        if not lines or lines[0] != "epoch,train_loss,val_loss":
            raise DataFormatError(f"{path}: bad loss history header")
        hist = cls()
        for line in lines[1:]:
            e, t, v = line.split(",")
            hist.append(int(e), float(t), float(v))
        return hist
