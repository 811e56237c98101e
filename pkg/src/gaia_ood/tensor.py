"""Dense float32 tensor value type used throughout the engine.

Tensors are immutable by convention: no public API mutates ``data`` after
construction, which is what makes graphs, weights and activations safe to
share across concurrent scorers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ArrayLike = "np.ndarray | list | tuple | float | int | Tensor"


@dataclass(frozen=True)
class Tensor:
    """N-dimensional float32 array, row-major (last axis fastest)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = self.data
        if not isinstance(a, np.ndarray) or a.dtype != np.float32:
            raise TypeError("Tensor.data must be a float32 ndarray; use as_tensor()")
        if not a.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(a))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"Tensor(shape={self.shape})"

    def tolist(self) -> list:
        return self.data.tolist()


def as_tensor(value, name: str = "value") -> Tensor:
    """Coerce an array-like to a finite float32 Tensor.

    Raises DataError on NaN/Inf so bad values never enter the engine silently.
    """
    if isinstance(value, Tensor):
        return value
    a = np.asarray(value)
    if a.dtype != np.float32:
        a = a.astype(np.float32)
    a = np.ascontiguousarray(a)
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite elements")
    return Tensor(a)


def check_finite(a: np.ndarray, op: str) -> np.ndarray:
    """Engine invariant: every op output is finite."""
    if not np.all(np.isfinite(a)):
        raise DataError(f"non-finite values produced by {op}")
    return a
