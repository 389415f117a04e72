"""End-to-end pipeline execution, threshold sweeps, and kernel benchmarks.

A run is fully determined by (config, seed): scene synthesis, weight
initialization, lifting, completion, and decoding are all seeded and
single-threaded with fixed accumulation order.  Output artifacts are
byte-reproducible except ``stats.json``, whose wall-clock timings are
inherently run-dependent (its structure and counts are reproducible).
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .completion import complete
from .config import PipelineConfig
from .decoder import (
    EmptyActiveSetError,
    OccupancyPrediction,
    OcrState,
    compose_occupancy,
    compute_ocr,
    predict_heads,
    query_context_attention,
    update_global_ocr,
    upsample_labels_nearest,
    write_label_sidecar,
    write_labels_text,
)
from .kernels import CUBIC, HYPER_CROSS, ConvParams, GatherCounter, KernelSpec, submanifold_conv
from .lifting import lift
from .metrics import MetricsReport, iou_report, loss_metrics
from .ovt import write_tensor
from .scenes import SceneSample, gen_scene
from .tensors import SparseVoxelTensor, VoxelGridSpec
from .weights import (
    ArchSpec,
    completion_params_from_bundle,
    fill_embedding_from_bundle,
    init_weights,
    load_weights,
    query_set_from_bundle,
)

__all__ = [
    "PipelineStageError",
    "StatsRecord",
    "run_pipeline",
    "sweep",
    "bench_kernels",
    "write_sweep_csv",
    "arch_of",
    "write_bench_csv",
    "SWEEP_COLUMNS",
    "BENCH_COLUMNS",
]

SWEEP_COLUMNS = ("tau_s", "tau_d", "tau_p", "active_voxels",
                 "geometric_iou", "mean_iou", "wall_time_s")
BENCH_COLUMNS = ("grid_size", "density", "shape", "active_voxels", "gathers",
                 "interior_gathers_per_voxel", "interior_ratio_vs_cubic", "wall_time_s")


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; carries which one."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StatsRecord:
    thresholds: dict
    lift_active: int
    stage_actives: list
    gathers: list
    wall_times: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "thresholds": self.thresholds,
            "lift_active_voxels": self.lift_active,
            "stages": self.stage_actives,
            "gathers": self.gathers,
            "wall_times_s": self.wall_times,
        }
        return json.dumps(payload, indent=2) + "\n"


def arch_of(cfg: PipelineConfig) -> ArchSpec:
    return ArchSpec(
        channels=cfg.lift.channels,
        num_classes=cfg.num_classes,
        queries=cfg.queries,
        heads=cfg.heads,
        msca_strip_lengths=cfg.msca_strip_lengths,
    )


def _bundle_of(cfg: PipelineConfig) -> dict:
    if cfg.weights_file:
        return load_weights(cfg.weights_file)
    return init_weights(cfg.weights_seed, arch_of(cfg))


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:  # noqa: BLE001 - rewrap with stage attribution
        raise PipelineStageError(name, e) from e


def run_pipeline(
    cfg: PipelineConfig,
    out_dir: str | Path | None = None,
    scene: SceneSample | None = None,
    bundle: dict | None = None,
) -> tuple[OccupancyPrediction, MetricsReport, StatsRecord]:
    """Lift -> complete -> decode -> metrics on a synthetic scene.

    ``scene`` and ``bundle`` default to deterministic synthesis from the
    config seeds; sweeps pass them in to share one scene across cells.
    """
    times: dict[str, float] = {}
    counter = GatherCounter()

    t0 = time.perf_counter()
    if scene is None:
        scene = _stage("gen", gen_scene, cfg.seed, cfg.grammar, cfg.grid, cfg.cam,
                       cfg.image_hw, cfg.num_classes, cfg.lift.channels, cfg.sigma)
    if bundle is None:
        bundle = _stage("weights", _bundle_of, cfg)
    times["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    v0 = _stage("lift", lift, scene.features, scene.maps, scene.cam,
                cfg.half_grid, cfg.lift, cfg.lift_reduce)
    times["lift"] = time.perf_counter() - t0

    arch = arch_of(cfg)
    comp = completion_params_from_bundle(bundle, arch, cfg.tau_p, cfg.prune_enabled)
    stage_actives: list = []
    t0 = time.perf_counter()
    final, proxies = _stage("complete", complete, v0, comp, counter, stage_actives)
    times["complete"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    queries = query_set_from_bundle(bundle, arch)
    state = OcrState.initial(cfg.num_classes, cfg.lift.channels, cfg.alpha)
    try:
        r = compute_ocr(final, proxies[-1])
    except EmptyActiveSetError:
        r = state.R_global.copy()
    state = OcrState(r, state.R_global, cfg.alpha)
    state = update_global_ocr(state, r)
    refined = query_context_attention(queries, state)
    p_scores, embeddings = predict_heads(refined, queries)
    fill = fill_embedding_from_bundle(bundle)
    pred = _stage("decode", compose_occupancy, p_scores, embeddings, final, fill,
                  cfg.interpolation)
    times["decode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = _stage("metrics", _evaluate, pred, scene.gt_labels, cfg.num_classes)
    times["metrics"] = time.perf_counter() - t0

    stats = StatsRecord(
        thresholds={"tau_s": cfg.lift.tau_s, "tau_d": cfg.lift.tau_d, "tau_p": cfg.tau_p},
        lift_active=v0.active_count,
        stage_actives=stage_actives,
        gathers=[{"op": rec.op, "kernel": rec.kernel, "outputs": rec.outputs,
                  "gathers": rec.gathers} for rec in counter.records],
        wall_times=times,
    )

    if out_dir is not None:
        _write_artifacts(Path(out_dir), cfg, scene, v0, final, pred, report, stats)
    return pred, report, stats


def _evaluate(pred: OccupancyPrediction, gt_labels: np.ndarray, num_classes: int) -> MetricsReport:
    report = iou_report(pred.full_labels, gt_labels, num_classes)
    scores = pred.half_scores.values.astype(np.float64)
    full_scores = np.stack(
        [upsample_labels_nearest(scores[..., s]) for s in range(num_classes)], axis=-1)
    sums = np.maximum(full_scores.sum(axis=-1, keepdims=True), 1e-30)
    report.losses = loss_metrics(full_scores / sums, gt_labels)
    return report


def _write_artifacts(out, cfg, scene, v0, final, pred, report, stats) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(v0, out / "v0.ovt")
    write_tensor(final, out / "completed.ovt")
    write_tensor(pred.half_scores, out / "prediction_half.ovt")
    write_labels_text(pred, out / "prediction_labels.txt")
    write_label_sidecar(pred, out / "prediction_labels.json", cfg.class_names)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    (out / "stats.json").write_text(stats.to_json(), encoding="utf-8")


def sweep(
    cfg: PipelineConfig,
    tau_s_values: list[float],
    tau_d_values: list[float],
    tau_p_values: list[float],
) -> list[dict]:
    """One pipeline run per threshold-grid cell on a shared scene/weights.

    Rows follow the product order (tau_s outer, tau_p inner).  The
    ``active_voxels`` column is the lift-stage count, which depends only on
    (tau_s, tau_d).
    """
    if not (tau_s_values and tau_d_values and tau_p_values):
        raise ValueError("threshold grid must be non-empty")
    scene = gen_scene(cfg.seed, cfg.grammar, cfg.grid, cfg.cam, cfg.image_hw,
                      cfg.num_classes, cfg.lift.channels, cfg.sigma)
    bundle = _bundle_of(cfg)
    rows = []
    for ts, td, tp in itertools.product(tau_s_values, tau_d_values, tau_p_values):
        cell = cfg.with_thresholds(ts, td, tp)
        t0 = time.perf_counter()
        _, report, stats = run_pipeline(cell, scene=scene, bundle=bundle)
        wall = time.perf_counter() - t0
        rows.append({
            "tau_s": ts, "tau_d": td, "tau_p": tp,
            "active_voxels": stats.lift_active,
            "geometric_iou": report.geometric_iou,
            "mean_iou": report.mean_iou,
            "wall_time_s": wall,
        })
    return rows


def bench_kernels(
    sizes: list[int],
    densities: list[float],
    shapes: list[str] = (CUBIC, HYPER_CROSS),
    seed: int = 0,
    channels: int = 8,
) -> list[dict]:
    """Gather counts and wall time of submanifold convs per configuration.

    Each (size, density) pair reuses the same active pattern for every
    kernel shape, so the gather columns compare like for like; the ratio
    column relates each row's interior gathers per voxel to the cubic
    kernel's on that pattern.
    """
    rows = []
    for n, density in itertools.product(sizes, densities):
        rng = np.random.Generator(np.random.PCG64(seed + 1000 * n))
        grid = VoxelGridSpec(n, n, n, 1.0)
        mask = rng.random(grid.dims) < density
        coords = np.argwhere(mask).astype(np.int32)
        feats = rng.normal(size=(len(coords), channels)).astype(np.float32)
        t = SparseVoxelTensor(grid, coords, feats)
        interior = np.all((t.coords >= 1) & (t.coords <= n - 2), axis=1)

        per_shape: dict[str, dict] = {}
        for shape in shapes:
            spec = KernelSpec(shape, 3)
            w = rng.normal(size=(spec.volume, channels, channels)).astype(np.float32)
            params = ConvParams(spec, w, np.zeros(channels, dtype=np.float32))
            counter = GatherCounter()
            t0 = time.perf_counter()
            submanifold_conv(t, params, counter)
            wall = time.perf_counter() - t0
            rec = counter.records[0]
            ipv = float(rec.per_voxel[interior].mean()) if interior.any() else None
            per_shape[shape] = {
                "grid_size": n, "density": density, "shape": shape,
                "active_voxels": t.active_count, "gathers": rec.gathers,
                "interior_gathers_per_voxel": ipv,
                "interior_ratio_vs_cubic": None,
                "wall_time_s": wall,
            }
        cubic_ipv = per_shape.get(CUBIC, {}).get("interior_gathers_per_voxel")
        for shape in shapes:
            row = per_shape[shape]
            ipv = row["interior_gathers_per_voxel"]
            if cubic_ipv and ipv:
                row["interior_ratio_vs_cubic"] = cubic_ipv / ipv
            rows.append(row)
    return rows


def _write_csv(rows: list[dict], columns: tuple, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row[c] is None else row[c] for c in columns])


def write_sweep_csv(rows: list[dict], path) -> None:
    _write_csv(rows, SWEEP_COLUMNS, path)


def write_bench_csv(rows: list[dict], path) -> None:
    _write_csv(rows, BENCH_COLUMNS, path)
