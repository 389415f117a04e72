"""Dense brute-force convolution oracle.

Reference implementation the sparse conv flavors are verified against.
It works on dense value grids with per-offset shifted-slice accumulation,
sharing no gather/scatter machinery with the sparse path; semantics are
the direct loop over output cells and kernel offsets, with out-of-grid
neighbors contributing nothing.
"""

from __future__ import annotations

import numpy as np

from .kernels import ChannelMismatchError, ConvParams
from .tensors import DenseVoxelTensor, VoxelGridSpec

__all__ = ["dense_conv3d"]

_MODES = ("full", "submanifold_mask", "stride2", "transpose2")


def dense_conv3d(
    t: DenseVoxelTensor,
    p: ConvParams,
    mode: str = "full",
    mask: np.ndarray | None = None,
) -> DenseVoxelTensor:
    """Dense 3D convolution honoring the kernel's offset set.

    Modes:
      full             out[c] = bias + sum_o in[c+o] @ W_o
      submanifold_mask as full, but zero outside the companion boolean mask
      stride2          out[c'] = bias + sum_o in[2c'+o] @ W_o, dims ceil-halved
      transpose2       out[y] = bias + sum_o in[(y-o)/2] @ W_o over
                       parity-matching offsets, dims doubled
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if t.channel_count != p.c_in:
        raise ChannelMismatchError(f"tensor has C={t.channel_count}, conv expects C_in={p.c_in}")
    if mode == "submanifold_mask":
        if mask is None or mask.shape != t.grid.dims:
            raise ValueError("submanifold_mask mode needs a boolean mask of the grid dims")
        out = _conv_full(t.values, p)
        out[~mask] = 0.0
        return DenseVoxelTensor(t.grid, out)
    if mode == "full":
        return DenseVoxelTensor(t.grid, _conv_full(t.values, p))
    if mode == "stride2":
        return DenseVoxelTensor(t.grid.downsampled(), _conv_stride2(t.values, p))
    out_grid = t.grid.upsampled()
    return DenseVoxelTensor(out_grid, _conv_transpose2(t.values, p, out_grid.dims))


def _conv_full(values: np.ndarray, p: ConvParams) -> np.ndarray:
    dims = values.shape[:3]
    out = np.tile(p.bias, dims + (1,)).astype(np.float32)
    for k, (ox, oy, oz) in enumerate(p.kernel.offsets):
        src, dst = [], []
        for d, o in zip(dims, (ox, oy, oz)):
            lo, hi = max(0, -o), min(d, d - o)
            if lo >= hi:
                break
            dst.append(slice(lo, hi))
            src.append(slice(lo + o, hi + o))
        else:
            out[tuple(dst)] += values[tuple(src)] @ p.weights[k]
    return out


def _conv_stride2(values: np.ndarray, p: ConvParams) -> np.ndarray:
    dims = values.shape[:3]
    out_dims = tuple(-(-d // 2) for d in dims)
    out = np.tile(p.bias, out_dims + (1,)).astype(np.float32)
    for k, off in enumerate(p.kernel.offsets):
        src, dst = [], []
        for d, od, o in zip(dims, out_dims, off):
            lo = max(0, -(o // 2))  # ceil(-o / 2), clamped at 0
            hi = min(od - 1, (d - 1 - o) // 2)
            if lo > hi:
                break
            dst.append(slice(lo, hi + 1))
            src.append(slice(2 * lo + o, 2 * hi + o + 1, 2))
        else:
            out[tuple(dst)] += values[tuple(src)] @ p.weights[k]
    return out


def _conv_transpose2(values: np.ndarray, p: ConvParams, out_dims: tuple) -> np.ndarray:
    dims = values.shape[:3]
    out = np.tile(p.bias, tuple(out_dims) + (1,)).astype(np.float32)
    for k, off in enumerate(p.kernel.offsets):
        src, dst = [], []
        for d, od, o in zip(dims, out_dims, off):
            lo = max(0, -(o // 2))
            hi = min(d - 1, (od - 1 - o) // 2)
            if lo > hi:
                break
            src.append(slice(lo, hi + 1))
            dst.append(slice(2 * lo + o, 2 * hi + o + 1, 2))
        else:
            out[tuple(dst)] += values[tuple(src)] @ p.weights[k]
    return out
