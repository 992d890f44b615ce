"""Immutable 4-D activation container and its channel-major decomposition.

Values inside a decomposed channel row are ordered batch-major, then
row-major over (H, W): element ``(c, j)`` with ``j = (n * H + h) * W + w``
is ``a[n, c, h, w]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Tuple, Union

import numpy as np

PQT_MAGIC = b"PQT1"
_HEADER = struct.Struct("<4s4I")

Shape = Tuple[int, int, int, int]


class TensorError(ValueError):
    """Malformed tensor data, shape, or file."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """Dense float32 activation map of shape (N, C, H, W).

    The wrapped array is copied on construction and marked read-only.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32, copy=True)
        if arr.ndim != 4:
            raise TensorError(f"expected a 4-D (N, C, H, W) array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise TensorError(f"all dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise TensorError("activation tensor contains NaN or Inf")
        object.__setattr__(self, "values", _readonly(np.ascontiguousarray(arr)))

    @classmethod
    def from_flat(cls, data, shape: Shape) -> "ActivationTensor":
        flat = np.asarray(data, dtype=np.float32).ravel()
        shape = tuple(int(d) for d in shape)
        if len(shape) != 4:
            raise TensorError(f"shape must have 4 dims, got {shape}")
        if flat.size != int(np.prod(shape)):
            raise TensorError(f"data length {flat.size} does not match shape {shape}")
        return cls(flat.reshape(shape))

    @classmethod
    def adopt(cls, arr: np.ndarray) -> "ActivationTensor":
        """Wrap a freshly computed float32 (N, C, H, W) array without copying.

        The caller hands over ownership and guarantees finiteness.
        """
        obj = object.__new__(cls)
        object.__setattr__(obj, "values", _readonly(np.ascontiguousarray(arr, dtype=np.float32)))
        return obj

    @property
    def shape(self) -> Shape:
        return tuple(self.values.shape)  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view in (N, C, H, W) C-order."""
        return self.values.reshape(-1)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class DecomposedView:
    """C x (N*H*W) channel-major view of a tensor.

    The matrix is only materialized when ``matrix`` (or row access) is used;
    reductions such as :func:`channel_min_max` read the parent layout directly.
    """

    parent: ActivationTensor

    @property
    def rows(self) -> int:
        return self.parent.shape[1]

    @property
    def cols(self) -> int:
        n, _, h, w = self.parent.shape
        return n * h * w

    @cached_property
    def matrix(self) -> np.ndarray:
        mat = to_decomposed(self.parent.values)
        if mat.flags.writeable:
            # reshape had to copy (N > 1); keep the copy read-only like the parent
            mat = _readonly(mat)
        return mat

    def row(self, c: int) -> np.ndarray:
        return self.matrix[c]

    def __getitem__(self, idx):
        return self.matrix[idx]

    def recompose(self) -> ActivationTensor:
        return ActivationTensor(from_decomposed(self.matrix, self.parent.shape))


def decompose(a: ActivationTensor) -> DecomposedView:
    return DecomposedView(a)


def channel_min_max(v: DecomposedView) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel (min, max), reduced straight from the parent's (N, C, H*W) layout."""
    n, c, h, w = v.parent.shape
    x = v.parent.values.reshape(n, c, h * w)
    return x.min(axis=(0, 2)), x.max(axis=(0, 2))


def to_decomposed(arr: np.ndarray) -> np.ndarray:
    """Channel-major (C, N*H*W) layout of any (N, C, H, W) array, e.g. integer codes."""
    n, c, h, w = arr.shape
    return arr.transpose(1, 0, 2, 3).reshape(c, n * h * w)


def from_decomposed(mat: np.ndarray, shape: Shape) -> np.ndarray:
    n, c, h, w = shape
    return np.ascontiguousarray(mat.reshape(c, n, h, w).transpose(1, 0, 2, 3))


# -- PQT1 binary format ---------------------------------------------------

def dumps_pqt(a: ActivationTensor) -> bytes:
    header = _HEADER.pack(PQT_MAGIC, *a.shape)
    return header + a.values.astype("<f4", copy=False).tobytes(order="C")


def loads_pqt(buf: bytes) -> ActivationTensor:
    if len(buf) < _HEADER.size:
        raise TensorError("truncated PQT1 header")
    magic, *dims = _HEADER.unpack_from(buf)
    if magic != PQT_MAGIC:
        raise TensorError(f"bad magic {magic!r}, expected {PQT_MAGIC!r}")
    count = int(np.prod(dims))
    expected = _HEADER.size + 4 * count
    if len(buf) != expected:
        raise TensorError(f"PQT1 payload is {len(buf)} bytes, expected {expected} for dims {dims}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=_HEADER.size)
    return ActivationTensor.from_flat(data, tuple(dims))


def save_pqt(path: Union[str, Path], a: ActivationTensor) -> None:
    Path(path).write_bytes(dumps_pqt(a))


def load_pqt(path: Union[str, Path]) -> ActivationTensor:
    return loads_pqt(Path(path).read_bytes())
