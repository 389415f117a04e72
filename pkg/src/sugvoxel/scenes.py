"""Synthetic scene generation.

A scene grammar (ground plane, axis-aligned boxes, vertical poles) is
rasterized into a full-resolution label grid; per-pixel semantic and
depth distributions are synthesized by marching camera rays through the
grid.  At noise level 0 every hit pixel gets one-hot rows (depth at the
bin containing the first occupied voxel, semantics at its class) and sky
pixels get a uniform depth row with one-hot free-space semantics.

Also houses the ray-march oracle for the lift stage: the exact set of
half-resolution voxels the masked frustum points should activate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifting import CameraModel, PixelProbMaps
from .tensors import VoxelGridSpec

__all__ = [
    "Box",
    "Pole",
    "SceneGrammar",
    "SceneSample",
    "ScenePrimitiveError",
    "rasterize",
    "first_hits",
    "synth_maps",
    "synth_features",
    "random_grammar",
    "gen_scene",
    "surface_voxel_set",
]

MARCH_SUBSTEPS = 4  # ray-march step = voxel_size / MARCH_SUBSTEPS


class ScenePrimitiveError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned box over inclusive voxel ranges."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    label: int


@dataclass(frozen=True)
class Pole:
    """Vertical 1x1 column from z=0 up to z=top inclusive."""

    x: int
    y: int
    top: int
    label: int


@dataclass
class SceneGrammar:
    ground_height: int = 0  # number of bottom z-layers filled with ground_label
    ground_label: int = 1
    boxes: list[Box] = field(default_factory=list)
    poles: list[Pole] = field(default_factory=list)


@dataclass
class SceneSample:
    gt_labels: np.ndarray  # full-resolution label grid
    cam: CameraModel
    maps: PixelProbMaps
    features: np.ndarray   # (H_d, W_d, C)


def rasterize(grammar: SceneGrammar, grid: VoxelGridSpec) -> np.ndarray:
    """Label grid of the grammar; primitives outside the grid are errors."""
    if grid.stride != 1:
        raise ValueError("scenes rasterize at full resolution")
    gt = np.zeros(grid.dims, dtype=np.int32)
    if grammar.ground_height:
        if grammar.ground_height > grid.dims_z:
            raise ScenePrimitiveError(f"ground height {grammar.ground_height} exceeds grid")
        gt[:, :, : grammar.ground_height] = grammar.ground_label
    for box in grammar.boxes:
        lo, hi = np.array(box.lo), np.array(box.hi)
        if np.any(lo > hi):
            raise ScenePrimitiveError(f"box corners out of order: {box}")
        if np.any(lo < 0) or np.any(hi >= np.array(grid.dims)):
            raise ScenePrimitiveError(f"box outside grid: {box}")
        gt[lo[0]: hi[0] + 1, lo[1]: hi[1] + 1, lo[2]: hi[2] + 1] = box.label
    for pole in grammar.poles:
        if not (0 <= pole.x < grid.dims_x and 0 <= pole.y < grid.dims_y
                and 0 <= pole.top < grid.dims_z):
            raise ScenePrimitiveError(f"pole outside grid: {pole}")
        gt[pole.x, pole.y, : pole.top + 1] = pole.label
    return gt


def _pixel_rays(cam: CameraModel, image_hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins and per-unit-planar-depth directions."""
    h, w = image_hw
    k_inv = np.linalg.inv(cam.intrinsics)
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    img = np.stack([cols + 0.5, rows + 0.5, np.ones_like(cols)], axis=-1)
    dirs_cam = img @ k_inv.T  # z component is exactly 1 per pixel
    r, t = cam.extrinsics[:3, :3], cam.extrinsics[:3, 3]
    return t, dirs_cam @ r.T


def first_hits(
    gt_labels: np.ndarray, grid: VoxelGridSpec, cam: CameraModel, image_hw: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """First occupied voxel along each pixel ray.

    Returns (depth, label) maps; depth is planar (optical-axis) distance in
    meters, +inf where the ray never hits inside [depth_min, depth_max).
    """
    origin, dirs = _pixel_rays(cam, image_hw)
    h, w = image_hw
    hit_depth = np.full((h, w), np.inf)
    hit_label = np.zeros((h, w), dtype=np.int32)
    undecided = np.ones((h, w), dtype=bool)
    step = grid.voxel_size / MARCH_SUBSTEPS
    n_steps = int(np.ceil((cam.depth_max - cam.depth_min) / step))
    grid_origin = np.array(grid.origin)
    dims = np.array(grid.dims)
    for i in range(n_steps):
        z = cam.depth_min + i * step
        if z >= cam.depth_max:
            break
        idx = np.nonzero(undecided)
        if len(idx[0]) == 0:
            break
        pts = origin + dirs[idx] * z
        vox = np.floor((pts - grid_origin) / grid.voxel_size).astype(np.int64)
        inside = np.all((vox >= 0) & (vox < dims), axis=1)
        labels = np.zeros(len(vox), dtype=np.int32)
        v = vox[inside]
        labels[inside] = gt_labels[v[:, 0], v[:, 1], v[:, 2]]
        hits = labels != 0
        if hits.any():
            hy, hx = idx[0][hits], idx[1][hits]
            hit_depth[hy, hx] = z
            hit_label[hy, hx] = labels[hits]
            undecided[hy, hx] = False
    return hit_depth, hit_label


def depth_bin_of(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Index of the uniform bin containing each planar depth."""
    b = np.floor((depth - cam.depth_min) / cam.bin_width).astype(np.int64)
    return np.clip(b, 0, cam.bin_count - 1)


def synth_maps(
    hit_depth: np.ndarray,
    hit_label: np.ndarray,
    cam: CameraModel,
    num_classes: int,
    sigma: float,
) -> PixelProbMaps:
    """Per-pixel distributions from the hit maps.

    sigma=0 keeps exact one-hot rows.  sigma>0 blurs each depth row with a
    3-tap kernel plus a small uniform floor and mixes semantic rows toward
    uniform, renormalizing; all entries become strictly positive.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    h, w = hit_depth.shape
    d, s = cam.bin_count, num_classes
    sky = ~np.isfinite(hit_depth)

    depth = np.zeros((h, w, d))
    depth[sky] = 1.0 / d
    hidx = np.nonzero(~sky)
    bins = depth_bin_of(hit_depth[hidx], cam)
    depth[hidx[0], hidx[1], bins] = 1.0

    sem = np.zeros((h, w, s))
    sem[sky, 0] = 1.0
    sem[hidx[0], hidx[1], hit_label[hidx]] = 1.0

    if sigma > 0.0:
        a = 0.25 * sigma
        blurred = (1.0 - 2 * a) * depth
        blurred[:, :, 1:] += a * depth[:, :, :-1]
        blurred[:, :, :-1] += a * depth[:, :, 1:]
        floor = 0.1 * sigma
        depth = (1.0 - floor) * blurred + floor / d
        depth /= depth.sum(axis=2, keepdims=True)

        mix = 0.5 * sigma
        sem = (1.0 - mix) * sem + mix / s
        sem /= sem.sum(axis=2, keepdims=True)
    return PixelProbMaps(sem, depth)


def synth_features(hit_label: np.ndarray, channels: int) -> np.ndarray:
    """Deterministic (H, W, C) features from hit class and pixel position."""
    h, w = hit_label.shape
    c = np.arange(channels, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)[:, None, None]
    cols = np.arange(w, dtype=np.float64)[None, :, None]
    label = hit_label[:, :, None].astype(np.float64)
    return (
        np.sin(0.7 * (label + 1.0) * (c + 1.0))
        + 0.25 * np.sin(2.0 * np.pi * rows / max(h, 1) + c)
        + 0.25 * np.cos(2.0 * np.pi * cols / max(w, 1) + c)
    )


def random_grammar(
    seed: int, grid: VoxelGridSpec, num_classes: int,
    n_boxes: tuple[int, int] = (2, 4), n_poles: tuple[int, int] = (1, 3),
) -> SceneGrammar:
    """Ground plane plus a few random boxes and poles, fully inside the grid."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dx, dy, dz = grid.dims
    boxes = []
    for _ in range(int(rng.integers(n_boxes[0], n_boxes[1] + 1))):
        sx = int(rng.integers(3, max(4, dx // 6) + 1))
        sy = int(rng.integers(3, max(4, dy // 6) + 1))
        sz = int(rng.integers(2, max(3, dz - 2) + 1))
        x0 = int(rng.integers(0, dx - sx))
        y0 = int(rng.integers(0, dy - sy))
        label = int(rng.integers(2, num_classes)) if num_classes > 2 else 1
        boxes.append(Box((x0, y0, 1), (x0 + sx - 1, y0 + sy - 1, min(dz - 1, sz)), label))
    poles = []
    for _ in range(int(rng.integers(n_poles[0], n_poles[1] + 1))):
        x = int(rng.integers(0, dx))
        y = int(rng.integers(0, dy))
        top = int(rng.integers(dz // 2, dz))
        label = int(rng.integers(2, num_classes)) if num_classes > 2 else 1
        poles.append(Pole(x, y, min(top, dz - 1), label))
    return SceneGrammar(ground_height=1, ground_label=1, boxes=boxes, poles=poles)


def gen_scene(
    seed: int,
    grammar: SceneGrammar | None,
    grid: VoxelGridSpec,
    cam: CameraModel,
    image_hw: tuple[int, int],
    num_classes: int,
    channels: int,
    sigma: float = 0.0,
) -> SceneSample:
    """Deterministic scene: rasterized labels plus synthesized pixel maps."""
    if grammar is None:
        grammar = random_grammar(seed, grid, num_classes)
    gt = rasterize(grammar, grid)
    if gt.max() >= num_classes:
        raise ScenePrimitiveError(f"grammar uses label {gt.max()} >= num_classes {num_classes}")
    hit_depth, hit_label = first_hits(gt, grid, cam, image_hw)
    maps = synth_maps(hit_depth, hit_label, cam, num_classes, sigma)
    features = synth_features(hit_label, channels)
    return SceneSample(gt, cam, maps, features)


def surface_voxel_set(
    gt_labels: np.ndarray,
    grid: VoxelGridSpec,
    cam: CameraModel,
    half_grid: VoxelGridSpec,
    image_hw: tuple[int, int],
) -> np.ndarray:
    """Ray-march oracle for the lift stage's active set at sigma=0.

    For every pixel whose ray hits the scene, every depth bin from the
    first-hit bin onward is unprojected at its bin center and floor-binned
    into the half-resolution grid.  Returns the sorted unique (N, 3) coords.
    """
    hit_depth, _ = first_hits(gt_labels, grid, cam, image_hw)
    hy, hx = np.nonzero(np.isfinite(hit_depth))
    if len(hy) == 0:
        return np.empty((0, 3), dtype=np.int32)
    first_bin = depth_bin_of(hit_depth[hy, hx], cam)

    # independent unprojection: explicit pinhole inverse per (pixel, bin)
    k = cam.intrinsics
    fx, fy, cx, cy = k[0, 0], k[1, 1], k[0, 2], k[1, 2]
    skew = k[0, 1]
    r, t = cam.extrinsics[:3, :3], cam.extrinsics[:3, 3]
    centers = cam.bin_centers()

    coords = set()
    half_origin = np.array(half_grid.origin)
    for py, px, b0 in zip(hy.tolist(), hx.tolist(), first_bin.tolist()):
        v_img = py + 0.5
        u_img = px + 0.5
        y_cam_unit = (v_img - cy) / fy
        x_cam_unit = (u_img - cx - skew * y_cam_unit) / fx
        for d in range(b0, cam.bin_count):
            z = centers[d]
            cam_pt = np.array([x_cam_unit * z, y_cam_unit * z, z])
            world = r @ cam_pt + t
            vox = np.floor((world - half_origin) / half_grid.cell_size).astype(np.int64)
            if np.all(vox >= 0) and np.all(vox < np.array(half_grid.dims)):
                coords.add((int(vox[0]), int(vox[1]), int(vox[2])))
    if not coords:
        return np.empty((0, 3), dtype=np.int32)
    return np.array(sorted(coords), dtype=np.int32)
