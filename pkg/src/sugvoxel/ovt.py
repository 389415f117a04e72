"""OVT on-disk tensor format.

Layout (all integers little-endian):

    magic "OVT1" | kind u8 (0=dense, 1=sparse)
    | u32 dims_x, dims_y, dims_z, stride, C, active_count
    | f32 voxel_size | 3 x f32 origin
    | payload

Sparse payload is ``active_count`` records of (3 x u32 coord, C x f32
feature); dense payload is row-major f32 values with ``active_count``
equal to the dims product.  Writing then reading is identity bit-for-bit
on the payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensors import DenseVoxelTensor, SparseVoxelTensor, VoxelGridSpec

__all__ = [
    "OvtFormatError",
    "MagicMismatchError",
    "DimensionOverflowError",
    "TruncatedPayloadError",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
]

MAGIC = b"OVT1"
_KIND_DENSE = 0
_KIND_SPARSE = 1
_HEADER = struct.Struct("<4sB6If3f")
_MAX_CELLS = 2**32


class OvtFormatError(ValueError):
    """Malformed OVT data."""


class MagicMismatchError(OvtFormatError):
    """Leading bytes are not the OVT magic."""


class DimensionOverflowError(OvtFormatError):
    """Header declares impossible dims, stride, counts, or coords."""


class TruncatedPayloadError(OvtFormatError):
    """Data ends before the declared payload does."""


def tensor_to_bytes(t: DenseVoxelTensor | SparseVoxelTensor) -> bytes:
    g = t.grid
    if isinstance(t, DenseVoxelTensor):
        kind, active = _KIND_DENSE, g.cell_count
        payload = np.ascontiguousarray(t.values, dtype="<f4").tobytes()
    elif isinstance(t, SparseVoxelTensor):
        kind, active = _KIND_SPARSE, t.active_count
        rec = np.empty(active, dtype=_sparse_record(t.channel_count))
        rec["coord"] = t.coords
        rec["feat"] = t.features
        payload = rec.tobytes()
    else:
        raise TypeError(f"not a voxel tensor: {type(t).__name__}")
    header = _HEADER.pack(
        MAGIC, kind, g.dims_x, g.dims_y, g.dims_z, g.stride,
        t.channel_count, active, g.voxel_size, *g.origin,
    )
    return header + payload


def tensor_from_bytes(data: bytes) -> DenseVoxelTensor | SparseVoxelTensor:
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicMismatchError(f"expected magic {MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    _, kind, dx, dy, dz, stride, channels, active, voxel_size, ox, oy, oz = _HEADER.unpack_from(data)

    if min(dx, dy, dz) < 1 or dx * dy * dz > _MAX_CELLS:
        raise DimensionOverflowError(f"bad dims ({dx}, {dy}, {dz})")
    if channels < 1:
        raise DimensionOverflowError(f"bad channel count {channels}")
    try:
        grid = VoxelGridSpec(dx, dy, dz, voxel_size, (ox, oy, oz), stride)
    except ValueError as e:
        raise DimensionOverflowError(str(e)) from None

    body = data[_HEADER.size:]
    if kind == _KIND_DENSE:
        if active != grid.cell_count:
            raise DimensionOverflowError(
                f"dense active_count {active} != dims product {grid.cell_count}")
        need = active * channels * 4
        if len(body) < need:
            raise TruncatedPayloadError(f"payload needs {need} bytes, got {len(body)}")
        if len(body) > need:
            raise OvtFormatError(f"{len(body) - need} trailing bytes after payload")
        values = np.frombuffer(body, dtype="<f4").reshape(dx, dy, dz, channels)
        return DenseVoxelTensor(grid, values)

    if kind == _KIND_SPARSE:
        if active > grid.cell_count:
            raise DimensionOverflowError(
                f"sparse active_count {active} exceeds dims product {grid.cell_count}")
        rec_dtype = _sparse_record(channels)
        need = active * rec_dtype.itemsize
        if len(body) < need:
            raise TruncatedPayloadError(f"payload needs {need} bytes, got {len(body)}")
        if len(body) > need:
            raise OvtFormatError(f"{len(body) - need} trailing bytes after payload")
        rec = np.frombuffer(body, dtype=rec_dtype)
        coords = rec["coord"].astype(np.int64)
        if active and np.any(coords >= np.array([dx, dy, dz])):
            bad = coords[np.any(coords >= np.array([dx, dy, dz]), axis=1)][0]
            raise DimensionOverflowError(f"coord {tuple(bad)} outside dims ({dx}, {dy}, {dz})")
        return SparseVoxelTensor(grid, coords, rec["feat"])

    raise OvtFormatError(f"unknown kind byte {kind}")


def write_tensor(t: DenseVoxelTensor | SparseVoxelTensor, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def read_tensor(path: str | os.PathLike) -> DenseVoxelTensor | SparseVoxelTensor:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


def _sparse_record(channels: int) -> np.dtype:
    return np.dtype([("coord", "<u4", (3,)), ("feat", "<f4", (channels,))])
