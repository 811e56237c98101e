"""Writers for the engine's on-disk formats.

Deliberately independent of the engine package: this is the other half of
the cross-implementation contract. Archive layout: magic ``GWTA`` | version
u32=1 | tensor_count u32 | per tensor: name_len u16, name, dtype u8
(0=f32, 1=i32), rank u8, dims u32 x rank, raw little-endian data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GWTA"
VERSION = 1


class ExportError(RuntimeError):
    pass


def write_archive(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype in (np.float64, np.float32):
            arr = arr.astype("<f4")
            code = 0
        elif arr.dtype in (np.int64, np.int32):
            arr = arr.astype("<i4")
            code = 1
        else:
            raise ExportError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_archive(path) -> dict[str, np.ndarray]:
    """Reader used for round-trip checks of our own writer."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ExportError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ExportError(f"{path}: unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        dtype = np.dtype("<f4") if code == 0 else np.dtype("<i4")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(blob, dtype=dtype, count=n, offset=off).reshape(dims).copy()
        off += n * 4
    return out


def write_dataset(path, images: np.ndarray, labels: np.ndarray | None = None) -> None:
    tensors: dict[str, np.ndarray] = {"images": np.asarray(images, dtype=np.float32)}
    if labels is not None:
        tensors["labels"] = np.asarray(labels, dtype=np.int32)
    write_archive(path, tensors)


class GraphWriter:
    """Accumulates graph-document lines (one layer per line plus directives)."""

    def __init__(self, input_shape: tuple[int, int, int], num_classes: int):
        self.header = [
            f"input {input_shape[0]} {input_shape[1]} {input_shape[2]}",
            f"classes {num_classes}",
        ]
        self.layer_lines: list[str] = []
        self.directives: list[str] = []
        self._names: set[str] = set()

    def layer(self, name: str, kind: str, **params) -> str:
        if name in self._names:
            raise ExportError(f"duplicate graph layer name {name!r}")
        self._names.add(name)
        rendered = " ".join(f"{k}={v}" for k, v in params.items())
        self.layer_lines.append(f"{name}: {kind}{(' ' + rendered) if rendered else ''}")
        return name

    def tap(self, tap_id: str, layer_name: str, block_label: str) -> None:
        self.directives.append(f"tap {tap_id} {layer_name} {block_label}")

    def split(self, layer_name: str) -> None:
        self.directives.append(f"split {layer_name}")

    def text(self) -> str:
        return "\n".join(self.header + self.layer_lines + self.directives) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")
