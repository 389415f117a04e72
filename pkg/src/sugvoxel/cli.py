"""Command line interface.

    sugvoxel <subcommand> --config <path> [--seed N] [--out <dir>]

Stage subcommands (gen, lift, complete, decode) recompute their upstream
stages deterministically from the config and write only their own
artifacts; ``pipeline`` writes everything including metrics and stats.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .completion import complete
from .config import PipelineConfig, default_config, load_config
from .kernels import KernelSpec, receptive_field
from .lifting import lift, maps_to_tensors
from .ovt import write_tensor
from .pipeline import (
    arch_of,
    bench_kernels,
    run_pipeline,
    sweep,
    write_bench_csv,
    write_sweep_csv,
)
from .scenes import gen_scene
from .tensors import DenseVoxelTensor, SparseVoxelTensor, VoxelGridSpec
from .weights import completion_params_from_bundle, init_weights, load_weights


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", type=Path, default=None, help="output directory")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sugvoxel",
                                     description="sparse semantic occupancy engine")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("gen", "synthesize a scene and write its tensors"),
        ("lift", "run the view transform and write the lifted sparse volume"),
        ("complete", "run lifting plus sparse completion"),
        ("decode", "run the full forward pass and write the prediction"),
        ("pipeline", "full run with metrics and statistics"),
    ):
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub)

    sub = subs.add_parser("sweep", help="threshold sweep over a fixed scene")
    _add_common(sub)
    sub.add_argument("--tau-s", type=_floats, default=[0.0, 0.1, 0.3])
    sub.add_argument("--tau-d", type=_floats, default=[0.0, 0.1, 0.3])
    sub.add_argument("--tau-p", type=_floats, default=[0.0, 0.1, 0.3])

    sub = subs.add_parser("bench", help="kernel gather-count benchmark")
    _add_common(sub)
    sub.add_argument("--sizes", type=_ints, default=[8, 16])
    sub.add_argument("--densities", type=_floats, default=[0.1, 0.5, 1.0])

    sub = subs.add_parser("rf", help="print receptive-field offset sets")
    sub.add_argument("--shape", choices=["cubic", "hyper_cross"], default="hyper_cross")
    sub.add_argument("--size", type=int, default=3)
    sub.add_argument("--layers", type=int, default=3)
    return parser


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def _scene_and_bundle(cfg: PipelineConfig):
    scene = gen_scene(cfg.seed, cfg.grammar, cfg.grid, cfg.cam, cfg.image_hw,
                      cfg.num_classes, cfg.lift.channels, cfg.sigma)
    if cfg.weights_file:
        bundle = load_weights(cfg.weights_file)
    else:
        bundle = init_weights(cfg.weights_seed, arch_of(cfg))
    return scene, bundle


def _grid_at(cfg: PipelineConfig, stride: int) -> VoxelGridSpec:
    return VoxelGridSpec.at_stride(cfg.grid.dims, cfg.grid.voxel_size, cfg.grid.origin, stride)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "rf":
        specs = [KernelSpec(args.shape, args.size)] * args.layers
        offsets = receptive_field(specs)
        print(f"# {args.layers} x {args.shape}-{args.size}: {len(offsets)} offsets")
        for x, y, z in offsets:
            print(f"{x} {y} {z}")
        return 0

    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "gen":
        scene, _ = _scene_and_bundle(cfg)
        gt = DenseVoxelTensor(cfg.grid, scene.gt_labels[..., None].astype(np.float32))
        write_tensor(gt, out / "gt.ovt")
        sem, depth = maps_to_tensors(scene.maps)
        write_tensor(sem, out / "sem.ovt")
        write_tensor(depth, out / "depth.ovt")
        feats = DenseVoxelTensor(sem.grid, scene.features[:, :, None, :].astype(np.float32))
        write_tensor(feats, out / "features.ovt")
        print(f"wrote scene tensors to {out}")
        return 0

    if args.command == "lift":
        scene, _ = _scene_and_bundle(cfg)
        v0 = lift(scene.features, scene.maps, scene.cam, cfg.half_grid, cfg.lift,
                  cfg.lift_reduce)
        write_tensor(v0, out / "v0.ovt")
        print(f"lifted {v0.active_count} active voxels -> {out / 'v0.ovt'}")
        return 0

    if args.command == "complete":
        scene, bundle = _scene_and_bundle(cfg)
        v0 = lift(scene.features, scene.maps, scene.cam, cfg.half_grid, cfg.lift,
                  cfg.lift_reduce)
        params = completion_params_from_bundle(bundle, arch_of(cfg), cfg.tau_p,
                                               cfg.prune_enabled)
        final, proxies = complete(v0, params)
        write_tensor(final, out / "completed.ovt")
        for i, proxy in enumerate(proxies):
            stride = 16 >> i
            probs = SparseVoxelTensor(_grid_at(cfg, stride), proxy.domain,
                                      proxy.probs.astype(np.float32))
            write_tensor(probs, out / f"proxy_stride{stride}.ovt")
        print(f"completed volume has {final.active_count} active voxels -> {out}")
        return 0

    if args.command in ("decode", "pipeline"):
        pred, report, stats = run_pipeline(cfg, out_dir=out)
        if args.command == "decode":
            (out / "metrics.json").unlink(missing_ok=True)
            (out / "stats.json").unlink(missing_ok=True)
            print(f"wrote prediction artifacts to {out}")
        else:
            print(f"geometric IoU {report.geometric_iou:.4f}, "
                  f"mIoU {report.mean_iou:.4f}; artifacts in {out}")
        return 0

    if args.command == "sweep":
        rows = sweep(cfg, args.tau_s, args.tau_d, args.tau_p)
        write_sweep_csv(rows, out / "sweep.csv")
        print(f"wrote {len(rows)} sweep rows to {out / 'sweep.csv'}")
        return 0

    if args.command == "bench":
        rows = bench_kernels(args.sizes, args.densities, seed=cfg.seed)
        write_bench_csv(rows, out / "bench.csv")
        print(f"wrote {len(rows)} bench rows to {out / 'bench.csv'}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
