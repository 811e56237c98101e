"""Binary weight/dataset archives (magic ``GWTA``, version 1, little-endian).

Layout: magic (4 bytes) | version u32 | tensor_count u32 | per tensor:
name_len u16, name UTF-8, dtype u8 (0=f32, 1=i32), rank u8, dims u32 x rank,
raw row-major data. Datasets are archives holding ``images`` (f32, NCHW) and
optionally ``labels`` (i32, N).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import Tensor, as_tensor

MAGIC = b"GWTA"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("int32"): 1}


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise DataError(
                f"{self.path}: truncated while reading {what} at byte {self.off}"
            )
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def read_archive(path) -> dict[str, np.ndarray]:
    """Read an archive into an ordered name -> array map."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    r = _Reader(blob, str(path))
    if r.take(4, "magic") != MAGIC:
        raise DataError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    version = r.u32("version")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte 4")
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u16(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        dtype_code = r.u8(f"tensor {name!r} dtype")
        if dtype_code not in _DTYPES:
            raise DataError(
                f"{path}: unknown dtype code {dtype_code} for {name!r} at byte {r.off - 1}"
            )
        dtype = _DTYPES[dtype_code]
        rank = r.u8(f"tensor {name!r} rank")
        dims = tuple(r.u32(f"tensor {name!r} dim {d}") for d in range(rank))
        n_elems = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n_elems * dtype.itemsize, f"tensor {name!r} data")
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        if name in tensors:
            raise DataError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr
    if r.off != len(blob):
        raise DataError(f"{path}: {len(blob) - r.off} trailing bytes at byte {r.off}")
    return tensors


def write_archive(path, tensors: dict[str, np.ndarray]) -> None:
    """Write arrays in iteration order; float arrays stored as f32, ints as i32."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64:
            arr = arr.astype(np.float32)
        if arr.dtype == np.int64:
            arr = arr.astype(np.int32)
        if arr.dtype not in _DTYPE_CODES:
            raise DataError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(parts))


@dataclass(frozen=True)
class WeightArchive:
    """Named tensor map backing a ModelGraph's weight references."""

    tensors: dict[str, np.ndarray] = field(repr=False)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise DataError(f"weight {name!r} not present in archive")
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)


@dataclass(frozen=True)
class SampleBatch:
    """A batch of images with optional integer labels and a source tag."""

    images: Tensor
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise DataError(f"images must be non-empty NCHW, got shape {self.images.shape}")
        if self.labels is not None:
            if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
                raise DataError(
                    f"labels shape {self.labels.shape} does not match batch {self.images.shape[0]}"
                )
            if np.any(self.labels < 0):
                raise DataError("labels must be non-negative")

    def __len__(self) -> int:
        return self.images.shape[0]

    def slice(self, start: int, stop: int) -> "SampleBatch":
        labels = None if self.labels is None else self.labels[start:stop]
        return SampleBatch(Tensor(self.images.data[start:stop].copy()), labels, self.source)


def load_weights(path) -> WeightArchive:
    tensors = read_archive(path)
    for name, arr in tensors.items():
        if arr.dtype == np.float32 and not np.all(np.isfinite(arr)):
            raise DataError(f"{path}: weight {name!r} contains non-finite values")
    return WeightArchive(tensors)


def load_dataset(path, source: str | None = None) -> SampleBatch:
    tensors = read_archive(path)
    if "images" not in tensors:
        raise DataError(f"{path}: dataset archive missing 'images' tensor")
    images = tensors["images"]
    if images.dtype != np.float32:
        raise DataError(f"{path}: 'images' must be f32, got {images.dtype}")
    labels = tensors.get("labels")
    if labels is not None and labels.dtype != np.int32:
        raise DataError(f"{path}: 'labels' must be i32, got {labels.dtype}")
    tag = source if source is not None else Path(path).stem
    return SampleBatch(as_tensor(images, "images"), labels, tag)


def write_dataset(path, images, labels=None) -> None:
    tensors: dict[str, np.ndarray] = {"images": np.asarray(images, dtype=np.float32)}
    if labels is not None:
        tensors["labels"] = np.asarray(labels, dtype=np.int32)
    write_archive(path, tensors)
