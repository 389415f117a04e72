"""Cascade sparse completion: multi-scale encoder, dense multi-scale
convolutional attention at the bottleneck, and a generative decoder with
skip fusion, per-stage proxy occupancy heads, and soft pruning.

Stage order in the decoder is: generative upsample, skip fusion, residual
blocks, proxy head, prune.  The proxy map that drives pruning is the same
map returned for inspection, restricted to the surviving voxels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    ConvParams,
    GatherCounter,
    generative_transpose_conv,
    hypercross_residual_block,
    soft_prune,
    strided_conv_down,
    submanifold_conv,
)
from .tensors import DenseVoxelTensor, SparseVoxelTensor, densify

__all__ = [
    "DepthwiseParams",
    "MscaParams",
    "ProxyOccMap",
    "EncoderStageParams",
    "DecoderStageParams",
    "CompletionParams",
    "StrideMismatchError",
    "encode",
    "msca_bottleneck",
    "proxy_occupancy",
    "decode_stage",
    "complete",
    "softmax_rows",
]

ResidualBlockParams = tuple[ConvParams, ConvParams, ConvParams]


class StrideMismatchError(ValueError):
    pass


@dataclass
class DepthwiseParams:
    """Per-channel (depthwise) dense conv: out[x] = sum_o in[x+o] * w[o]."""

    offsets: np.ndarray  # (K, 3) int
    weights: np.ndarray  # (K, C) float

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape[0] != len(self.offsets):
            raise ValueError("one weight row per offset required")

    def apply(self, values: np.ndarray) -> np.ndarray:
        dims = values.shape[:3]
        out = np.zeros_like(values)
        for off, w in zip(self.offsets, self.weights):
            src, dst = [], []
            for d, o in zip(dims, off):
                lo, hi = max(0, -int(o)), min(d, d - int(o))
                if lo >= hi:
                    break
                dst.append(slice(lo, hi))
                src.append(slice(lo + int(o), hi + int(o)))
            else:
                out[tuple(dst)] += values[tuple(src)] * w
        return out

    @classmethod
    def strip(cls, axis: int, length: int, weights: np.ndarray) -> "DepthwiseParams":
        """Axis-aligned strip kernel (1x1xk style) along ``axis``."""
        if length < 1 or length % 2 == 0:
            raise ValueError("strip length must be odd and positive")
        offs = np.zeros((length, 3), dtype=np.int64)
        offs[:, axis] = np.arange(length) - length // 2
        return cls(offs, weights)


@dataclass
class MscaParams:
    """Multi-scale convolutional attention over the densified bottleneck.

    ``branches`` holds one (x-strip, y-strip, z-strip) triple per configured
    strip length; the triples are applied as sequential decompositions and
    summed together with the identity branch before the pointwise mix.
    """

    dw: DepthwiseParams
    branches: list[list[DepthwiseParams]]
    pointwise: np.ndarray  # (C, C)

    def __post_init__(self):
        self.pointwise = np.asarray(self.pointwise, dtype=np.float64)
        for triple in self.branches:
            for strip in triple:
                nz = np.count_nonzero(strip.offsets, axis=0)
                if np.count_nonzero(nz) > 1:
                    raise ValueError("branch kernels must be axis-aligned strips")


@dataclass
class ProxyOccMap:
    """Per-voxel class distribution over a tensor's active set."""

    domain: np.ndarray  # (N, 3) coords, canonical order
    probs: np.ndarray   # (N, S)

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.int32).reshape(-1, 3)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or len(self.probs) != len(self.domain):
            raise ValueError("one probability row per domain coord required")
        if len(self.probs) and np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-5):
            raise ValueError("probability rows must sum to 1")

    @property
    def nonempty(self) -> np.ndarray:
        return 1.0 - self.probs[:, 0]


@dataclass
class EncoderStageParams:
    blocks: list[ResidualBlockParams]
    down: ConvParams | None = None  # None on stage 0 (no downsampling input)


@dataclass
class DecoderStageParams:
    up: ConvParams
    fuse: ConvParams
    blocks: list[ResidualBlockParams]
    head: np.ndarray  # (C, S)
    up_proj: np.ndarray | None = None    # optional channel match before fusion
    skip_proj: np.ndarray | None = None


@dataclass
class CompletionParams:
    encoder: list[EncoderStageParams]
    msca: MscaParams
    decoder: list[DecoderStageParams]
    bottleneck_head: np.ndarray  # (C, S)
    tau_p: float = 0.1
    prune_enabled: bool = True

    def __post_init__(self):
        if len(self.encoder) != 4:
            raise ValueError("encoder needs exactly 4 stages")
        if self.encoder[0].down is not None:
            raise ValueError("encoder stage 0 must not downsample its input")
        if any(st.down is None for st in self.encoder[1:]):
            raise ValueError("encoder stages 1..3 must carry a downsampling conv")
        if len(self.decoder) != 3:
            raise ValueError("decoder needs exactly 3 stages")


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def encode(
    v0: SparseVoxelTensor, p: CompletionParams, counter: GatherCounter | None = None,
) -> list[SparseVoxelTensor]:
    """Multi-scale encoder: V_i at stride 2^(i+1), i in 0..3.

    Stage 0 runs its residual blocks on the lifted input; stages 1..3
    downsample first, then run their blocks.
    """
    if v0.grid.stride != 2:
        raise StrideMismatchError(f"encoder input must be at stride 2, got {v0.grid.stride}")
    outs = []
    x = v0
    for st in p.encoder:
        if st.down is not None:
            x = strided_conv_down(x, st.down, counter=counter)
        for blk in st.blocks:
            x = hypercross_residual_block(x, blk, counter)
        outs.append(x)
    return outs


def msca_bottleneck(v3: SparseVoxelTensor, p: MscaParams) -> SparseVoxelTensor:
    """Attention-modulated bottleneck; the active set never changes.

    The bottleneck is densified (fill 0) over its own coarse grid, the
    attention map is pointwise(identity + strip branches applied to the
    depthwise output), and the elementwise product is re-sparsified onto
    the original active set.
    """
    if v3.active_count == 0:
        return v3
    dense = densify(v3, np.zeros(v3.channel_count)).values.astype(np.float64)
    base = p.dw.apply(dense)
    acc = base.copy()
    for triple in p.branches:
        branch = base
        for strip in triple:
            branch = strip.apply(branch)
        acc = acc + branch
    attn = acc @ p.pointwise
    modulated = dense * attn
    c = v3.coords
    return v3.with_features(modulated[c[:, 0], c[:, 1], c[:, 2]])


def proxy_occupancy(v: SparseVoxelTensor, head: np.ndarray) -> ProxyOccMap:
    """Softmax class distribution per active voxel from a linear head."""
    head = np.asarray(head, dtype=np.float64)
    if head.shape[0] != v.channel_count:
        raise ValueError(f"head expects C={head.shape[0]}, tensor has C={v.channel_count}")
    logits = v.features.astype(np.float64) @ head
    if len(logits) == 0:
        return ProxyOccMap(v.coords, np.zeros((0, head.shape[1])))
    return ProxyOccMap(v.coords, softmax_rows(logits))


def _fuse_union(
    up: SparseVoxelTensor,
    skip: SparseVoxelTensor,
    up_proj: np.ndarray | None,
    skip_proj: np.ndarray | None,
) -> SparseVoxelTensor:
    """Sum features over the union of the two active sets."""
    uf = up.features if up_proj is None else up.features @ np.asarray(up_proj, np.float32)
    sf = skip.features if skip_proj is None else skip.features @ np.asarray(skip_proj, np.float32)
    if uf.shape[1] != sf.shape[1]:
        raise ValueError("fusion branches must agree on channels (add projections)")
    grid = up.grid
    keys = np.union1d(grid.linearize(up.coords), grid.linearize(skip.coords))
    feats = np.zeros((len(keys), uf.shape[1]), dtype=np.float32)
    if up.active_count:
        feats[np.searchsorted(keys, grid.linearize(up.coords))] += uf
    if skip.active_count:
        feats[np.searchsorted(keys, grid.linearize(skip.coords))] += sf
    coords = np.stack(np.unravel_index(keys, grid.dims), axis=1).astype(np.int32)
    return SparseVoxelTensor(grid, coords, feats)


def decode_stage(
    coarse: SparseVoxelTensor,
    skip: SparseVoxelTensor,
    st: DecoderStageParams,
    tau_p: float,
    counter: GatherCounter | None = None,
    prune_enabled: bool = True,
    stats: dict | None = None,
) -> tuple[SparseVoxelTensor, ProxyOccMap]:
    """One decoder stage: upsample, fuse skip, refine, predict, prune."""
    if skip.grid.stride * 2 != coarse.grid.stride:
        raise StrideMismatchError(
            f"skip stride {skip.grid.stride} is not half of coarse stride {coarse.grid.stride}")
    up = generative_transpose_conv(coarse, st.up, target_grid=skip.grid, counter=counter)
    fused = _fuse_union(up, skip, st.up_proj, st.skip_proj)
    fused = submanifold_conv(fused, st.fuse, counter)
    for blk in st.blocks:
        fused = hypercross_residual_block(fused, blk, counter)
    proxy = proxy_occupancy(fused, st.head)
    if stats is not None:
        stats["active_before_prune"] = fused.active_count
    if not prune_enabled:
        if stats is not None:
            stats["active_after_prune"] = fused.active_count
        return fused, proxy
    keep = proxy.nonempty > tau_p
    pruned = soft_prune(fused, proxy.probs, tau_p)
    if stats is not None:
        stats["active_after_prune"] = pruned.active_count
    return pruned, ProxyOccMap(pruned.coords, proxy.probs[keep])


def complete(
    v0: SparseVoxelTensor,
    p: CompletionParams,
    counter: GatherCounter | None = None,
    stage_stats: list | None = None,
) -> tuple[SparseVoxelTensor, list[ProxyOccMap]]:
    """Full completion pass: encoder, MSCA bottleneck, three decode stages.

    Returns the final stride-2 tensor and the proxy maps coarsest-to-finest
    (bottleneck first).  ``stage_stats`` collects per-stage active counts
    when provided.
    """
    vs = encode(v0, p, counter)
    bottleneck = msca_bottleneck(vs[3], p.msca)
    proxies = [proxy_occupancy(bottleneck, p.bottleneck_head)]
    if stage_stats is not None:
        for i, v in enumerate(vs):
            stage_stats.append({"stage": f"encoder{i}", "stride": v.grid.stride,
                                "active": v.active_count})
    x = bottleneck
    for i, st in enumerate(p.decoder):
        skip = vs[2 - i]
        stats = {"stage": f"decoder{i}"} if stage_stats is not None else None
        x, proxy = decode_stage(x, skip, st, p.tau_p, counter, p.prune_enabled, stats)
        proxies.append(proxy)
        if stage_stats is not None:
            stats["stride"] = x.grid.stride
            stage_stats.append(stats)
    return x, proxies
