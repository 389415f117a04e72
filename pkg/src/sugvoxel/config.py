"""Pipeline configuration.

Config files are flat UTF-8 ``key = value`` text with ``#`` comments.
Values are whitespace-separated scalars; the scene primitive keys
(``scene_box``, ``scene_pole``) may repeat.  A config plus its seeds fully
determines a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lifting import CameraModel, LiftConfig
from .scenes import Box, Pole, SceneGrammar
from .tensors import VoxelGridSpec

__all__ = ["PipelineConfig", "parse_config_text", "load_config", "default_config"]

_REPEATABLE = {"scene_box", "scene_pole"}


@dataclass
class PipelineConfig:
    grid: VoxelGridSpec            # full-resolution target grid
    cam: CameraModel
    image_hw: tuple[int, int]
    lift: LiftConfig
    lift_reduce: str = "sum"
    tau_p: float = 0.1
    prune_enabled: bool = True
    msca_strip_lengths: tuple[int, ...] = (3, 5)
    queries: int = 8
    heads: int = 4
    alpha: float = 0.9
    interpolation: str = "nearest"
    num_classes: int = 5
    sigma: float = 0.3
    seed: int = 7
    weights_seed: int = 1234
    weights_file: str | None = None
    out_dir: str = "out"
    grammar: SceneGrammar | None = None  # None: random grammar from the seed

    @property
    def half_grid(self) -> VoxelGridSpec:
        return VoxelGridSpec.at_stride(self.grid.dims, self.grid.voxel_size,
                                       self.grid.origin, stride=2)

    @property
    def class_names(self) -> list[str]:
        return ["free"] + [f"class{i}" for i in range(1, self.num_classes)]

    def with_thresholds(self, tau_s: float, tau_d: float, tau_p: float) -> "PipelineConfig":
        return replace(self, lift=replace(self.lift, tau_s=tau_s, tau_d=tau_d), tau_p=tau_p)


def _forward_x_extrinsics(position: tuple[float, float, float]) -> np.ndarray:
    """Camera at ``position`` looking along world +x, z-up.

    Optical axis (+z cam) maps to +x world, image right (+x cam) to -y
    world, image down (+y cam) to -z world.
    """
    t = np.eye(4)
    t[:3, :3] = np.array([[0.0, 0.0, 1.0],
                          [-1.0, 0.0, 0.0],
                          [0.0, -1.0, 0.0]])
    t[:3, 3] = position
    return t


def default_config() -> PipelineConfig:
    """Desk-scale defaults: 64x64x8 grid at 0.2 m, 32 depth bins, 5 classes."""
    grid = VoxelGridSpec(64, 64, 8, 0.2)
    cam = CameraModel(
        intrinsics=np.array([[24.0, 0.0, 16.0], [0.0, 24.0, 12.0], [0.0, 0.0, 1.0]]),
        extrinsics=_forward_x_extrinsics((0.2, 6.4, 0.8)),
        depth_min=0.4,
        depth_max=13.2,
        bin_count=32,
    )
    return PipelineConfig(grid=grid, cam=cam, image_hw=(24, 32), lift=LiftConfig())


def parse_config_text(text: str) -> dict[str, list[list[str]]]:
    """Raw key -> list of token lists (repeated keys keep every occurrence)."""
    out: dict[str, list[list[str]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        tokens = value.split()
        if key in out and key not in _REPEATABLE:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out.setdefault(key, []).append(tokens)
    return out


def _one(raw, key: str, default: list[str] | None = None) -> list[str]:
    if key in raw:
        return raw[key][0]
    if default is None:
        raise KeyError(f"config is missing required key {key!r}")
    return default


def _bool(tokens: list[str]) -> bool:
    v = tokens[0].lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected boolean, got {tokens[0]!r}")


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as f:
        raw = parse_config_text(f.read())
    base = default_config()

    dims = [int(v) for v in _one(raw, "grid_dims", ["64", "64", "8"])]
    voxel_size = float(_one(raw, "voxel_size", ["0.2"])[0])
    origin = tuple(float(v) for v in _one(raw, "origin", ["0", "0", "0"]))
    grid = VoxelGridSpec(dims[0], dims[1], dims[2], voxel_size, origin)

    img = [int(v) for v in _one(raw, "image_size", ["24", "32"])]
    focal = [float(v) for v in _one(raw, "focal", ["24", "24"])]
    if "principal" in raw:
        cx, cy = (float(v) for v in raw["principal"][0])
    else:
        cx, cy = img[1] / 2.0, img[0] / 2.0
    pos = tuple(float(v) for v in _one(raw, "camera_pos", ["0.2", "6.4", "0.8"]))
    depth_range = [float(v) for v in _one(raw, "depth_range", ["0.4", "13.2"])]
    bins = int(_one(raw, "depth_bins", ["32"])[0])
    cam = CameraModel(
        intrinsics=np.array([[focal[0], 0.0, cx], [0.0, focal[1], cy], [0.0, 0.0, 1.0]]),
        extrinsics=_forward_x_extrinsics(pos),
        depth_min=depth_range[0],
        depth_max=depth_range[1],
        bin_count=bins,
    )

    lift = LiftConfig(
        tau_s=float(_one(raw, "tau_s", ["0.1"])[0]),
        tau_d=float(_one(raw, "tau_d", ["0.1"])[0]),
        temperature=float(_one(raw, "temperature", ["100.0"])[0]),
        channels=int(_one(raw, "channels", ["16"])[0]),
    )

    grammar = _grammar_from(raw)
    return PipelineConfig(
        grid=grid,
        cam=cam,
        image_hw=(img[0], img[1]),
        lift=lift,
        lift_reduce=_one(raw, "lift_reduce", ["sum"])[0],
        tau_p=float(_one(raw, "tau_p", ["0.1"])[0]),
        prune_enabled=_bool(_one(raw, "prune_enabled", ["true"])),
        msca_strip_lengths=tuple(int(v) for v in _one(raw, "msca_strips", ["3", "5"])),
        queries=int(_one(raw, "queries", ["8"])[0]),
        heads=int(_one(raw, "heads", ["4"])[0]),
        alpha=float(_one(raw, "alpha", ["0.9"])[0]),
        interpolation=_one(raw, "interpolation", ["nearest"])[0],
        num_classes=int(_one(raw, "num_classes", ["5"])[0]),
        sigma=float(_one(raw, "sigma", ["0.3"])[0]),
        seed=int(_one(raw, "seed", ["7"])[0]),
        weights_seed=int(_one(raw, "weights_seed", ["1234"])[0]),
        weights_file=_one(raw, "weights_file", [""])[0] or None,
        out_dir=_one(raw, "out_dir", [base.out_dir])[0],
        grammar=grammar,
    )


def _grammar_from(raw) -> SceneGrammar | None:
    has_explicit = any(k in raw for k in ("scene_ground", "scene_box", "scene_pole"))
    if not has_explicit:
        return None
    ground = int(_one(raw, "scene_ground", ["0"])[0])
    ground_label = int(_one(raw, "scene_ground_class", ["1"])[0])
    boxes = [
        Box((int(t[0]), int(t[1]), int(t[2])), (int(t[3]), int(t[4]), int(t[5])), int(t[6]))
        for t in raw.get("scene_box", [])
    ]
    poles = [Pole(int(t[0]), int(t[1]), int(t[2]), int(t[3])) for t in raw.get("scene_pole", [])]
    return SceneGrammar(ground_height=ground, ground_label=ground_label,
                        boxes=boxes, poles=poles)
