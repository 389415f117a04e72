"""OCR-based mask decoder.

Class-wise object contextual representations are aggregated from the
sparse completion output using the finest proxy occupancy map as soft
region assignment weights; a global context matrix accumulates them via
an exponential moving average.  A small query set retrieves a prior from
the global context, cross-attends to the current context, and predicts
per-query class scores plus mask embeddings whose voxel masks compose the
half-resolution occupancy scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .completion import ProxyOccMap, softmax_rows
from .tensors import DenseVoxelTensor, SparseVoxelTensor, VoxelGridSpec, densify

__all__ = [
    "OcrState",
    "AttentionLayerParams",
    "QuerySet",
    "OccupancyPrediction",
    "EmptyActiveSetError",
    "compute_ocr",
    "update_global_ocr",
    "query_context_attention",
    "predict_heads",
    "compose_occupancy",
    "labels_from_scores",
    "upsample_labels_nearest",
    "upsample_scores_trilinear",
    "write_labels_text",
    "write_label_sidecar",
]


class EmptyActiveSetError(ValueError):
    """No active voxels to aggregate context from; substitute the global OCR."""


@dataclass
class OcrState:
    """Current OCR matrix, its global EMA accumulator, and the momentum."""

    R: np.ndarray         # (S, C)
    R_global: np.ndarray  # (S, C)
    alpha: float

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.R_global = np.asarray(self.R_global, dtype=np.float64)
        if self.R.shape != self.R_global.shape or self.R.ndim != 2:
            raise ValueError("R and R_global must both be (S, C)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("momentum must lie strictly inside (0, 1)")

    @classmethod
    def initial(cls, num_classes: int, channels: int, alpha: float) -> "OcrState":
        z = np.zeros((num_classes, channels))
        return cls(z, z.copy(), alpha)


@dataclass
class AttentionLayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, m)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square (C, C)")


@dataclass
class QuerySet:
    """Learnable queries plus the attention and output head parameters."""

    queries: np.ndarray  # (K, C)
    cross: AttentionLayerParams
    self_attn: AttentionLayerParams
    heads: int
    class_head: np.ndarray  # (C, S)
    mask_head: np.ndarray   # (C, C)

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.class_head = np.asarray(self.class_head, dtype=np.float64)
        self.mask_head = np.asarray(self.mask_head, dtype=np.float64)
        k, c = self.queries.shape
        if k < 1:
            raise ValueError("need at least one query")
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"channels {c} must divide evenly into {self.heads} heads")

    @property
    def count(self) -> int:
        return self.queries.shape[0]

    @property
    def channels(self) -> int:
        return self.queries.shape[1]


def compute_ocr(v: SparseVoxelTensor, proxy: ProxyOccMap) -> np.ndarray:
    """(S, C) class-context matrix: per class, the softmax of that class's
    proxy scores over the active voxels weights the voxel features."""
    if v.active_count == 0:
        raise EmptyActiveSetError("cannot aggregate context from an empty tensor")
    if len(proxy.domain) != v.active_count or not np.array_equal(proxy.domain, v.coords):
        raise ValueError("proxy map domain must equal the tensor's active set")
    w = softmax_rows(proxy.probs.T)  # (S, N): softmax across voxels per class
    return w @ v.features.astype(np.float64)


def update_global_ocr(state: OcrState, r_new: np.ndarray) -> OcrState:
    """EMA step on the global context; returns a new state."""
    r_new = np.asarray(r_new, dtype=np.float64)
    if r_new.shape != state.R_global.shape:
        raise ValueError(f"shape {r_new.shape} != {state.R_global.shape}")
    blended = state.alpha * state.R_global + (1.0 - state.alpha) * r_new
    return OcrState(state.R, blended, state.alpha)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)


def _multi_head_attention(
    queries: np.ndarray, keys: np.ndarray, p: AttentionLayerParams, heads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Residual multi-head attention; returns (output, weights (H, K, M))."""
    dh = queries.shape[1] // heads
    q = _split_heads(queries @ p.w_q, heads)
    k = _split_heads(keys @ p.w_k, heads)
    v = _split_heads(keys @ p.w_v, heads)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    attn = softmax_rows(scores)
    out = attn @ v  # (H, K, dh)
    merged = out.transpose(1, 0, 2).reshape(queries.shape)
    return queries + merged @ p.w_o, attn


def query_context_attention(
    q: QuerySet, state: OcrState, return_weights: bool = False,
):
    """Refine the queries against the OCR context.

    Each query first pools a global prior from R_global (softmax over its
    rows, scaled by sqrt(C)), is shifted by it, then runs one cross-attention
    layer against R and one self-attention layer over the queries.
    """
    c = q.channels
    prior_w = softmax_rows(q.queries @ state.R_global.T / np.sqrt(c))  # (K, S)
    shifted = q.queries + prior_w @ state.R_global
    refined, w_cross = _multi_head_attention(shifted, state.R, q.cross, q.heads)
    refined, w_self = _multi_head_attention(refined, refined, q.self_attn, q.heads)
    if return_weights:
        return refined, {"prior": prior_w, "cross": w_cross, "self": w_self}
    return refined


def predict_heads(q_refined: np.ndarray, q: QuerySet) -> tuple[np.ndarray, np.ndarray]:
    """Per-query class score rows P (K, S) and mask embeddings E (K, C)."""
    scores = softmax_rows(np.asarray(q_refined, dtype=np.float64) @ q.class_head)
    embeddings = np.asarray(q_refined, dtype=np.float64) @ q.mask_head
    return scores, embeddings


@dataclass
class OccupancyPrediction:
    """Half-resolution class scores and the full-resolution label grid."""

    half_scores: DenseVoxelTensor
    full_labels: np.ndarray
    full_grid: VoxelGridSpec

    def __post_init__(self):
        hd = self.half_scores.grid.dims
        if self.full_grid.dims != tuple(2 * d for d in hd):
            raise ValueError(
                f"full grid {self.full_grid.dims} must be exactly twice the half grid {hd}")
        if self.full_labels.shape != self.full_grid.dims:
            raise ValueError("label grid does not match the full grid dims")
        s = self.half_scores.channel_count
        if self.full_labels.min() < 0 or self.full_labels.max() >= s:
            raise ValueError(f"labels must lie in [0, {s - 1}]")

    @property
    def num_classes(self) -> int:
        return self.half_scores.channel_count


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def labels_from_scores(scores: np.ndarray) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index (free space
    wins on all-zero rows)."""
    return np.argmax(scores, axis=-1).astype(np.int32)


def upsample_labels_nearest(labels: np.ndarray) -> np.ndarray:
    out = labels
    for axis in range(3):
        out = np.repeat(out, 2, axis=axis)
    return out


def upsample_scores_trilinear(scores: np.ndarray) -> np.ndarray:
    """2x trilinear upsampling with edge clamping, channels untouched."""
    out = np.asarray(scores, dtype=np.float64)
    for axis in range(3):
        n = out.shape[axis]
        pos = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
        hi = np.clip(lo + 1, 0, n - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        shape = [1] * out.ndim
        shape[axis] = 2 * n
        frac = frac.reshape(shape)
        out = np.take(out, lo, axis=axis) * (1 - frac) + np.take(out, hi, axis=axis) * frac
    return out


def compose_occupancy(
    p_scores: np.ndarray,
    embeddings: np.ndarray,
    v: SparseVoxelTensor,
    fill: np.ndarray,
    interpolation: str = "nearest",
) -> OccupancyPrediction:
    """Blend per-query voxel masks into the occupancy prediction.

    Voxel masks are sigmoid dot products between the mask embeddings and
    the densified sparse volume (empty cells take the fill embedding);
    half-res scores are mask-weighted sums of the query class rows, and
    the full-res labels upsample 2x (nearest on labels by default,
    trilinear on scores behind the flag).
    """
    if interpolation not in ("nearest", "trilinear"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    p_scores = np.asarray(p_scores, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    dense = densify(v, fill)
    flat = dense.values.reshape(-1, v.channel_count).astype(np.float64)
    masks = _sigmoid(flat @ embeddings.T)      # (cells, K)
    scores = masks @ p_scores                  # (cells, S)
    score_grid = scores.reshape(dense.grid.dims + (p_scores.shape[1],))

    half = DenseVoxelTensor(v.grid, score_grid.astype(np.float32))
    full_grid = v.grid.upsampled()
    if interpolation == "nearest":
        full_labels = upsample_labels_nearest(labels_from_scores(score_grid))
    else:
        full_labels = labels_from_scores(upsample_scores_trilinear(score_grid))
    return OccupancyPrediction(half, full_labels, full_grid)


def write_labels_text(pred: OccupancyPrediction, path) -> None:
    """Plain-text export: one "x y z label" line per non-free full-res voxel."""
    occupied = np.argwhere(pred.full_labels != 0)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for x, y, z in occupied:
            f.write(f"{x} {y} {z} {int(pred.full_labels[x, y, z])}\n")


def write_label_sidecar(pred: OccupancyPrediction, path, class_names: list[str]) -> None:
    g = pred.full_grid
    payload = {
        "dims": list(g.dims),
        "voxel_size": g.voxel_size,
        "origin": list(g.origin),
        "stride": g.stride,
        "class_names": class_names,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
