"""Semantics- and uncertainty-guided feature lifting.

Per-pixel semantic and depth distributions drive a binary keep mask over
(pixel, depth-bin) frustum points; kept points get the image feature plus
a sinusoidal encoding of the unsigned distance to the expected depth, are
unprojected through the camera, and are pooled into a half-resolution
sparse voxel grid.

Depth-bin arithmetic (expected depth, distances, the positional encoding)
stays in bin-index units; metric depth is used only for unprojection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import DenseVoxelTensor, SparseVoxelTensor, VoxelGridSpec

__all__ = [
    "PixelProbMaps",
    "CameraModel",
    "LiftConfig",
    "nonempty_prob",
    "cumulative_depth",
    "lift_mask",
    "expected_depth",
    "distance_encoding",
    "lift",
    "lift_many",
    "maps_to_tensors",
    "maps_from_tensors",
]

_ROW_SUM_TOL = 1e-5


@dataclass
class PixelProbMaps:
    """Per-pixel class distribution (S classes, class 0 free space) and
    depth-bin distribution (D bins) on an H_d x W_d pixel grid."""

    sem: np.ndarray    # (H, W, S)
    depth: np.ndarray  # (H, W, D)

    def __post_init__(self):
        self.sem = np.asarray(self.sem, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.sem.ndim != 3 or self.depth.ndim != 3:
            raise ValueError("sem and depth must be (H, W, *) arrays")
        if self.sem.shape[:2] != self.depth.shape[:2]:
            raise ValueError(
                f"pixel grids differ: sem {self.sem.shape[:2]} vs depth {self.depth.shape[:2]}")
        for name, arr in (("sem", self.sem), ("depth", self.depth)):
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            sums = arr.sum(axis=2)
            if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
                worst = float(np.abs(sums - 1.0).max())
                raise ValueError(f"{name} rows must sum to 1 (worst deviation {worst:.2e})")

    @property
    def height(self) -> int:
        return self.sem.shape[0]

    @property
    def width(self) -> int:
        return self.sem.shape[1]

    @property
    def num_classes(self) -> int:
        return self.sem.shape[2]

    @property
    def num_bins(self) -> int:
        return self.depth.shape[2]


@dataclass
class CameraModel:
    """Pinhole camera with uniform metric depth bins.

    ``extrinsics`` maps camera coordinates to world coordinates; bin i
    covers [depth_min + i*w, depth_min + (i+1)*w) with w the bin width and
    has its center at depth_min + (i + 0.5)*w.
    """

    intrinsics: np.ndarray  # 3x3
    extrinsics: np.ndarray  # 4x4 rigid, camera -> world
    depth_min: float
    depth_max: float
    bin_count: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64)
        k, t = self.intrinsics, self.extrinsics
        if k.shape != (3, 3) or t.shape != (4, 4):
            raise ValueError("intrinsics must be 3x3 and extrinsics 4x4")
        if abs(k[2, 2] - 1.0) > 1e-9 or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("intrinsics need K[2][2] == 1 and positive focal lengths")
        if abs(np.linalg.det(k)) < 1e-12:
            raise ValueError("degenerate camera: intrinsics are not invertible")
        r = t[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-5 or np.linalg.det(r) < 0:
            raise ValueError("extrinsic rotation must be orthonormal with determinant +1")
        if np.abs(t[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise ValueError("extrinsics bottom row must be (0, 0, 0, 1)")
        if not self.depth_min < self.depth_max:
            raise ValueError("depth_min must be below depth_max")
        if self.bin_count < 2:
            raise ValueError("need at least 2 depth bins")

    @property
    def bin_width(self) -> float:
        return (self.depth_max - self.depth_min) / self.bin_count

    def bin_centers(self) -> np.ndarray:
        i = np.arange(self.bin_count, dtype=np.float64)
        return self.depth_min + (i + 0.5) * self.bin_width

    def unproject(self, px: np.ndarray, py: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """World points of pixel centers (col px, row py) at planar depth.

        Pixel (h, w) rays pass through image point (w + 0.5, h + 0.5);
        depth is distance along the optical axis in meters.
        """
        k_inv = np.linalg.inv(self.intrinsics)
        ones = np.ones_like(px, dtype=np.float64)
        img = np.stack([px + 0.5, py + 0.5, ones], axis=-1)
        rays = img @ k_inv.T          # z-component is exactly 1
        cam = rays * depth[..., None]
        r, t = self.extrinsics[:3, :3], self.extrinsics[:3, 3]
        return cam @ r.T + t


@dataclass
class LiftConfig:
    tau_s: float = 0.1
    tau_d: float = 0.1
    temperature: float = 100.0
    channels: int = 16

    def __post_init__(self):
        if not (0.0 <= self.tau_s <= 1.0 and 0.0 <= self.tau_d <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.channels < 2 or self.channels % 2:
            raise ValueError("channel count must be even so sin/cos pairs tile exactly")


def nonempty_prob(maps: PixelProbMaps) -> np.ndarray:
    """(H, W) probability that a pixel shows anything but free space."""
    return 1.0 - maps.sem[:, :, 0]


def cumulative_depth(maps: PixelProbMaps) -> np.ndarray:
    """(H, W, D) prefix sums of the depth distribution along the bins."""
    return np.cumsum(maps.depth, axis=2)


def lift_mask(p_ne: np.ndarray, p_cum: np.ndarray, cfg: LiftConfig) -> np.ndarray:
    """(H, W, D) binary keep mask: strictly above both thresholds."""
    if p_ne.shape != p_cum.shape[:2]:
        raise ValueError(f"shape mismatch: {p_ne.shape} vs {p_cum.shape}")
    return ((p_ne > cfg.tau_s)[:, :, None] & (p_cum > cfg.tau_d)).astype(np.uint8)


def expected_depth(maps: PixelProbMaps) -> np.ndarray:
    """(H, W) expected depth in bin-index units."""
    idx = np.arange(maps.num_bins, dtype=np.float64)
    return maps.depth @ idx


def distance_encoding(maps: PixelProbMaps, cfg: LiftConfig) -> np.ndarray:
    """(H, W, D, C) sinusoidal encoding of |bin - expected depth|.

    Channel 2i is sin(delta / T^(2i/C)), channel 2i+1 the matching cos.
    """
    e_depth = expected_depth(maps)
    bins = np.arange(maps.num_bins, dtype=np.float64)
    delta = np.abs(bins[None, None, :] - e_depth[:, :, None])
    return _encode_delta(delta, cfg)


def _encode_delta(delta: np.ndarray, cfg: LiftConfig) -> np.ndarray:
    pairs = cfg.channels // 2
    freq = cfg.temperature ** (2.0 * np.arange(pairs) / cfg.channels)
    phase = delta[..., None] / freq
    pe = np.empty(delta.shape + (cfg.channels,), dtype=np.float64)
    pe[..., 0::2] = np.sin(phase)
    pe[..., 1::2] = np.cos(phase)
    return pe


def lift(
    features: np.ndarray,
    maps: PixelProbMaps,
    cam: CameraModel,
    grid: VoxelGridSpec,
    cfg: LiftConfig,
    reduce: str = "sum",
) -> SparseVoxelTensor:
    """Project masked frustum points into a sparse voxel tensor.

    Every kept (pixel, bin) contributes the image feature plus its
    distance encoding to the voxel containing the unprojected point;
    voxels pool contributions by sum (default) or mean.  Points outside
    the grid are dropped.
    """
    if reduce not in ("sum", "mean"):
        raise ValueError(f"reduce must be 'sum' or 'mean', got {reduce!r}")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[:2] != (maps.height, maps.width):
        raise ValueError("feature map pixel grid does not match the probability maps")
    if features.shape[2] != cfg.channels:
        raise ValueError(f"feature channels {features.shape[2]} != config channels {cfg.channels}")
    if maps.num_bins != cam.bin_count:
        raise ValueError("depth map bins do not match the camera bin count")

    mask = lift_mask(nonempty_prob(maps), cumulative_depth(maps), cfg)
    hh, ww, dd = np.nonzero(mask)
    if len(hh) == 0:
        return SparseVoxelTensor.empty(grid, cfg.channels)

    pe = _encode_delta(np.abs(dd - expected_depth(maps)[hh, ww]), cfg)
    lifted = features[hh, ww] + pe

    depth_m = cam.bin_centers()[dd]
    world = cam.unproject(ww.astype(np.float64), hh.astype(np.float64), depth_m)
    vox = np.floor((world - np.array(grid.origin)) / grid.cell_size).astype(np.int64)
    inside = grid.contains(vox)
    vox, lifted = vox[inside], lifted[inside]
    if len(vox) == 0:
        return SparseVoxelTensor.empty(grid, cfg.channels)

    keys = grid.linearize(vox)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    pooled = np.zeros((len(uniq), cfg.channels), dtype=np.float64)
    np.add.at(pooled, inverse, lifted)
    if reduce == "mean":
        pooled /= counts[:, None]
    coords = np.stack(np.unravel_index(uniq, grid.dims), axis=1).astype(np.int32)
    return SparseVoxelTensor(grid, coords, pooled)


def lift_many(
    per_camera: list[tuple[np.ndarray, PixelProbMaps, CameraModel]],
    grid: VoxelGridSpec,
    cfg: LiftConfig,
) -> SparseVoxelTensor:
    """Sum-pool lifts from several cameras into one sparse tensor."""
    if not per_camera:
        raise ValueError("need at least one camera")
    acc: dict[tuple, np.ndarray] = {}
    for features, maps, cam in per_camera:
        part = lift(features, maps, cam, grid, cfg, reduce="sum")
        for coord, feat in zip(map(tuple, part.coords.tolist()), part.features):
            if coord in acc:
                acc[coord] = acc[coord] + feat
            else:
                acc[coord] = feat.copy()
    if not acc:
        return SparseVoxelTensor.empty(grid, cfg.channels)
    coords = np.array(sorted(acc), dtype=np.int32)
    feats = np.stack([acc[tuple(c)] for c in coords.tolist()])
    return SparseVoxelTensor(grid, coords, feats)


def maps_to_tensors(maps: PixelProbMaps) -> tuple[DenseVoxelTensor, DenseVoxelTensor]:
    """Encode the pixel maps as dense (H, W, 1) voxel tensors for OVT I/O."""
    g = VoxelGridSpec(maps.height, maps.width, 1, 1.0)
    sem = DenseVoxelTensor(g, maps.sem[:, :, None, :].astype(np.float32))
    depth = DenseVoxelTensor(g, maps.depth[:, :, None, :].astype(np.float32))
    return sem, depth


def maps_from_tensors(sem: DenseVoxelTensor, depth: DenseVoxelTensor) -> PixelProbMaps:
    s = np.asarray(sem.values, dtype=np.float64)[:, :, 0, :]
    d = np.asarray(depth.values, dtype=np.float64)[:, :, 0, :]
    # f32 storage may push row sums slightly off 1; renormalize before validation
    s = s / np.maximum(s.sum(axis=2, keepdims=True), 1e-30)
    d = d / np.maximum(d.sum(axis=2, keepdims=True), 1e-30)
    return PixelProbMaps(s, d)
