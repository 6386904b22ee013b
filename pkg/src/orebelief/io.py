"""Binary persistence: ore-map datasets and model checkpoints.

Both formats are little-endian with magic strings and explicit version
bytes; round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OREMAP_MAGIC = b"OREMAPS1"
CHECKPOINT_MAGIC = b"OBCKPT01"

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Corrupt or mismatched binary file."""


# -- ore map dataset ------------------------------------------------------------


def save_ore_maps(path, maps: np.ndarray) -> None:
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise ValueError(f"expected (count, H, W) maps, got {maps.shape}")
    count, h, w = maps.shape
    with open(path, "wb") as f:
        f.write(OREMAP_MAGIC)
        f.write(struct.pack("<III", count, h, w))
        f.write(np.ascontiguousarray(maps, dtype="<f4").tobytes())


def load_ore_maps(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != OREMAP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        count, h, w = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(count * h * w * 4), dtype="<f4")
        if data.size != count * h * w:
            raise FormatError(f"{path}: truncated dataset")
    return data.reshape(count, h, w).copy()


def dataset_fingerprint(maps: np.ndarray) -> str:
    """Cheap stable fingerprint recorded in checkpoints."""
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(maps, dtype="<f4").tobytes()).hexdigest()[:16]


# -- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    kind: str  # "gan" | "ddpm"
    config: dict
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    if ckpt.kind not in ("gan", "ddpm"):
        raise ValueError(f"unknown checkpoint kind {ckpt.kind!r}")
    header = json.dumps(
        {"kind": ckpt.kind, "config": ckpt.config, "meta": ckpt.meta, "tensors": list(ckpt.arrays)},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name, arr in ckpt.arrays.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<")
            if dt not in _DTYPE_CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BI", _DTYPE_CODES[dt], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        arrays: dict[str, np.ndarray] = {}
        for expected in header["tensors"]:
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            if name != expected:
                raise FormatError(f"{path}: tensor order mismatch ({name!r} != {expected!r})")
            code, ndim = struct.unpack("<BI", f.read(5))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            (nbytes,) = struct.unpack("<Q", f.read(8))
            buf = f.read(nbytes)
            if len(buf) != nbytes:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=_CODE_DTYPES[code]).reshape(shape).copy()
    return Checkpoint(kind=header["kind"], config=header["config"], arrays=arrays, meta=header["meta"])


def write_csv(path, header: list[str], rows) -> None:
    """Plain deterministic CSV writer (repr-stable float formatting)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return format(float(v), ".10g")
    return str(v)
