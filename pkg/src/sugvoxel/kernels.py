"""Kernel-offset algebra and the sparse convolution flavors.

Three conv flavors operate on SparseVoxelTensors: submanifold (support
preserving), strided downsampling (stride 2), and generative transpose
(stride 2 upsampling that activates the full 2x2x2 child block of every
parent).  The hyper-cross kernel restricts gathers to the origin plus
axial neighbors; a cubic kernel uses the full window.  Every op can
report its neighbor-gather counts through a GatherCounter.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .tensors import SparseVoxelTensor, VoxelGridSpec

__all__ = [
    "CUBIC",
    "HYPER_CROSS",
    "KernelSpec",
    "ConvParams",
    "GatherCounter",
    "GatherRecord",
    "ChannelMismatchError",
    "UnsupportedKernelSizeError",
    "kernel_offsets",
    "submanifold_conv",
    "strided_conv_down",
    "generative_transpose_conv",
    "soft_prune",
    "hypercross_residual_block",
    "receptive_field",
    "leaky_relu",
]

CUBIC = "cubic"
HYPER_CROSS = "hyper_cross"

LEAKY_SLOPE = 0.01


class ChannelMismatchError(ValueError):
    pass


class UnsupportedKernelSizeError(ValueError):
    pass


class OccDomainMismatchError(ValueError):
    pass


def kernel_offsets(shape: str, size: int) -> np.ndarray:
    """(K, 3) int offsets of a kernel, in canonical lexicographic order.

    Cubic size-k is the full centered window (even sizes take the
    positive-leaning half: range [-(k-1)//2, k//2]).  Hyper-cross size 3 is
    the origin plus the 6 axial unit neighbors; size 2 is the origin plus
    the +1 neighbor along each axis.
    """
    if shape == CUBIC:
        if size < 1:
            raise UnsupportedKernelSizeError(f"cubic size must be >= 1, got {size}")
        lo, hi = -(size - 1) // 2, size // 2
        offs = np.array(list(itertools.product(range(lo, hi + 1), repeat=3)), dtype=np.int32)
    elif shape == HYPER_CROSS:
        if size == 3:
            offs = np.array(
                [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0),
                 (0, -1, 0), (0, 0, 1), (0, 0, -1)], dtype=np.int32)
        elif size == 2:
            offs = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], dtype=np.int32)
        else:
            raise UnsupportedKernelSizeError(f"hyper_cross size must be 2 or 3, got {size}")
    else:
        raise ValueError(f"unknown kernel shape {shape!r}")
    return _canonical_offsets(offs)


def _canonical_offsets(offs: np.ndarray) -> np.ndarray:
    order = np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0]))
    return np.ascontiguousarray(offs[order])


@dataclass(frozen=True)
class KernelSpec:
    """Kernel shape + size with the derived offset set."""

    shape: str
    size: int
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "offsets", kernel_offsets(self.shape, self.size))

    @property
    def volume(self) -> int:
        return len(self.offsets)

    @property
    def name(self) -> str:
        return f"{self.shape}-{self.size}"


@dataclass
class ConvParams:
    """Per-offset weight matrices and bias for one sparse conv layer.

    ``weights`` is (K, C_in, C_out) float32 aligned with ``kernel.offsets``.
    """

    kernel: KernelSpec
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 3 or self.weights.shape[0] != self.kernel.volume:
            raise ValueError(
                f"weights shape {self.weights.shape} does not match "
                f"{self.kernel.volume} kernel offsets")
        if self.bias.shape != (self.weights.shape[2],):
            raise ValueError(f"bias shape {self.bias.shape} != (C_out,)")

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def identity(cls, kernel: KernelSpec, channels: int) -> "ConvParams":
        """Identity weight at the origin offset, zero elsewhere."""
        w = np.zeros((kernel.volume, channels, channels), dtype=np.float32)
        origin = int(np.flatnonzero((kernel.offsets == 0).all(axis=1))[0])
        w[origin] = np.eye(channels, dtype=np.float32)
        return cls(kernel, w, np.zeros(channels, dtype=np.float32))


@dataclass
class GatherRecord:
    op: str
    kernel: str
    outputs: int
    gathers: int
    per_voxel: np.ndarray  # gather count per output voxel, canonical order


class GatherCounter:
    """Accumulates neighbor-gather statistics across conv invocations."""

    def __init__(self):
        self.records: list[GatherRecord] = []

    def add(self, op: str, kernel: str, per_voxel: np.ndarray) -> None:
        self.records.append(
            GatherRecord(op, kernel, len(per_voxel), int(per_voxel.sum()), per_voxel))

    @property
    def total_gathers(self) -> int:
        return sum(r.gathers for r in self.records)


def _check_channels(t: SparseVoxelTensor, p: ConvParams) -> None:
    if t.channel_count != p.c_in:
        raise ChannelMismatchError(f"tensor has C={t.channel_count}, conv expects C_in={p.c_in}")


def submanifold_conv(
    t: SparseVoxelTensor, p: ConvParams, counter: GatherCounter | None = None,
) -> SparseVoxelTensor:
    """Sparse conv whose output support equals the input support.

    out[c] = bias + sum over offsets o with c+o active of in[c+o] @ W_o.
    """
    _check_channels(t, p)
    n = t.active_count
    out = np.tile(p.bias, (n, 1)).astype(np.float32)
    per_voxel = np.zeros(n, dtype=np.int64)
    for k, off in enumerate(p.kernel.offsets):
        idx = t.lookup(t.coords + off)
        found = idx >= 0
        if found.any():
            out[found] += t.features[idx[found]] @ p.weights[k]
        per_voxel += found
    if counter is not None:
        counter.add("submanifold", p.kernel.name, per_voxel)
    return SparseVoxelTensor(t.grid, t.coords, out)


def strided_conv_down(
    t: SparseVoxelTensor, p: ConvParams, stride: int = 2,
    counter: GatherCounter | None = None,
) -> SparseVoxelTensor:
    """Stride-2 downsampling conv: output voxel c' gathers inputs at 2c'+o.

    c' is active iff its receptive window holds at least one input voxel.
    """
    if stride != 2:
        raise ValueError("only stride 2 is supported")
    _check_channels(t, p)
    out_grid = t.grid.downsampled()

    # Candidate outputs: (c - o) / 2 for every input c and offset o with
    # matching parity; exactly the c' whose window covers an input.
    cand = []
    for off in p.kernel.offsets:
        q = t.coords.astype(np.int64) - off
        even = np.all(q % 2 == 0, axis=1)
        q = q[even] // 2
        q = q[out_grid.contains(q)]
        cand.append(q)
    if cand:
        allc = np.concatenate(cand, axis=0)
    else:
        allc = np.empty((0, 3), dtype=np.int64)
    if len(allc) == 0:
        out = SparseVoxelTensor.empty(out_grid, p.c_out)
        if counter is not None:
            counter.add("strided_down", p.kernel.name, np.zeros(0, dtype=np.int64))
        return out
    keys = out_grid.linearize(allc)
    uniq = np.unique(keys)
    out_coords = np.stack(np.unravel_index(uniq, out_grid.dims), axis=1).astype(np.int32)

    m = len(out_coords)
    out = np.tile(p.bias, (m, 1)).astype(np.float32)
    per_voxel = np.zeros(m, dtype=np.int64)
    base = out_coords.astype(np.int64) * 2
    for k, off in enumerate(p.kernel.offsets):
        idx = t.lookup(base + off)
        found = idx >= 0
        if found.any():
            out[found] += t.features[idx[found]] @ p.weights[k]
        per_voxel += found
    if counter is not None:
        counter.add("strided_down", p.kernel.name, per_voxel)
    return SparseVoxelTensor(out_grid, out_coords, out)


_CHILD_DELTAS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)


def generative_transpose_conv(
    t: SparseVoxelTensor, p: ConvParams, stride: int = 2,
    target_grid: VoxelGridSpec | None = None,
    counter: GatherCounter | None = None,
) -> SparseVoxelTensor:
    """Stride-2 transpose conv with generative activation.

    Every input voxel activates its full 2x2x2 child block at the finer
    stride regardless of kernel support; child features follow transpose
    weight routing (child y receives in[(y-o)/2] @ W_o for parity-matching
    offsets), with overlapping contributions summed.
    """
    if stride != 2:
        raise ValueError("only stride 2 is supported")
    _check_channels(t, p)
    if t.grid.stride == 1:
        raise ValueError("input is already at full resolution; cannot upsample")
    out_grid = target_grid if target_grid is not None else t.grid.upsampled()
    if out_grid.stride * 2 != t.grid.stride:
        raise ValueError(
            f"target grid stride {out_grid.stride} is not half of input stride {t.grid.stride}")

    if t.active_count == 0:
        if counter is not None:
            counter.add("generative_transpose", p.kernel.name, np.zeros(0, dtype=np.int64))
        return SparseVoxelTensor.empty(out_grid, p.c_out)

    children = (t.coords.astype(np.int64)[:, None, :] * 2 + _CHILD_DELTAS[None, :, :]).reshape(-1, 3)
    children = children[out_grid.contains(children)]
    keys = np.unique(out_grid.linearize(children))
    out_coords = np.stack(np.unravel_index(keys, out_grid.dims), axis=1).astype(np.int32)

    m = len(out_coords)
    out = np.tile(p.bias, (m, 1)).astype(np.float32)
    per_voxel = np.zeros(m, dtype=np.int64)
    y = out_coords.astype(np.int64)
    for k, off in enumerate(p.kernel.offsets):
        q = y - off
        even = np.all(q % 2 == 0, axis=1)
        parents = q[even] // 2
        idx = t.lookup(parents)
        found = idx >= 0
        if found.any():
            rows = np.flatnonzero(even)[found]
            out[rows] += t.features[idx[found]] @ p.weights[k]
            per_voxel[rows] += 1
    if counter is not None:
        counter.add("generative_transpose", p.kernel.name, per_voxel)
    return SparseVoxelTensor(out_grid, out_coords, out)


def soft_prune(t: SparseVoxelTensor, occ: np.ndarray, tau_p: float) -> SparseVoxelTensor:
    """Retain voxels whose predicted non-empty probability exceeds tau_p.

    ``occ`` is an (N, S) class-probability array aligned with the tensor's
    canonical active set; class 0 is free space.  Features pass through
    unchanged.
    """
    occ = np.asarray(occ)
    if occ.ndim != 2 or occ.shape[0] != t.active_count:
        raise OccDomainMismatchError(
            f"occupancy map rows {occ.shape} do not cover the {t.active_count} active voxels")
    keep = (1.0 - occ[:, 0]) > tau_p
    return SparseVoxelTensor(t.grid, t.coords[keep], t.features[keep])


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, slope * x).astype(np.float32)


def hypercross_residual_block(
    t: SparseVoxelTensor,
    params: tuple[ConvParams, ConvParams, ConvParams],
    counter: GatherCounter | None = None,
) -> SparseVoxelTensor:
    """Residual block of three hyper-cross submanifold convs (sizes 3, 2, 2).

    out = t + L3(act(L2(act(L1(t))))) on the shared active set; leaky
    rectifier after the first two layers, none before the residual add.
    """
    sizes = tuple(p.kernel.size for p in params)
    shapes = tuple(p.kernel.shape for p in params)
    if shapes != (HYPER_CROSS,) * 3 or sizes != (3, 2, 2):
        raise ValueError(f"block needs hyper-cross kernels of sizes (3, 2, 2), got {shapes} {sizes}")
    if params[2].c_out != t.channel_count:
        raise ChannelMismatchError(
            f"block output C={params[2].c_out} must match input C={t.channel_count}")
    h = submanifold_conv(t, params[0], counter)
    h = h.with_features(leaky_relu(h.features))
    h = submanifold_conv(h, params[1], counter)
    h = h.with_features(leaky_relu(h.features))
    h = submanifold_conv(h, params[2], counter)
    return t.with_features(t.features + h.features)


def receptive_field(kernels: list[KernelSpec]) -> np.ndarray:
    """Minkowski sum of the kernels' offset sets, deduplicated.

    The resulting offsets are the relative positions a stacked application
    of the kernels can read from.
    """
    if not kernels:
        raise ValueError("need at least one kernel")
    acc = np.zeros((1, 3), dtype=np.int64)
    for spec in kernels:
        acc = (acc[:, None, :] + spec.offsets[None, :, :].astype(np.int64)).reshape(-1, 3)
        acc = np.unique(acc, axis=0)
    return _canonical_offsets(acc.astype(np.int32))
