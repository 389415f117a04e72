"""Deterministic weight initialization and the weights bundle format.

All matrices are drawn from a single integer-seeded PCG64 stream in a
fixed construction order with scale 1/sqrt(fan_in), so a seed fully
reproduces the bundle bit-for-bit across runs and platforms.  The bundle
serializes as name-sorted (shape, float32 payload) records.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .completion import (
    CompletionParams,
    DecoderStageParams,
    DepthwiseParams,
    EncoderStageParams,
    MscaParams,
)
from .decoder import AttentionLayerParams, QuerySet
from .kernels import CUBIC, HYPER_CROSS, ConvParams, KernelSpec

__all__ = [
    "ArchSpec",
    "init_weights",
    "save_weights",
    "load_weights",
    "bundle_hash",
    "completion_params_from_bundle",
    "query_set_from_bundle",
    "fill_embedding_from_bundle",
]

_MAGIC = b"SUGW"
_VERSION = 1

_BLOCK_SIZES = (3, 2, 2)


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the full model: channel width, classes, decoder queries."""

    channels: int = 16
    num_classes: int = 5
    queries: int = 8
    heads: int = 4
    msca_strip_lengths: tuple[int, ...] = (3, 5)
    blocks_per_stage: int = 2


def _draw(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(np.float32)


def init_weights(seed: int, arch: ArchSpec = ArchSpec()) -> dict[str, np.ndarray]:
    """Weights bundle for the completion network, decoder, and heads."""
    rng = np.random.Generator(np.random.PCG64(seed))
    c, s = arch.channels, arch.num_classes
    out: dict[str, np.ndarray] = {}

    def conv(name: str, spec: KernelSpec, c_in: int, c_out: int) -> None:
        out[f"{name}.w"] = _draw(rng, (spec.volume, c_in, c_out), spec.volume * c_in)
        out[f"{name}.b"] = np.zeros(c_out, dtype=np.float32)

    def block(name: str) -> None:
        for layer, size in enumerate(_BLOCK_SIZES):
            conv(f"{name}.l{layer}", KernelSpec(HYPER_CROSS, size), c, c)

    for stage in range(4):
        if stage > 0:
            conv(f"enc{stage}.down", KernelSpec(CUBIC, 2), c, c)
        for b in range(arch.blocks_per_stage):
            block(f"enc{stage}.block{b}")

    cubic3 = KernelSpec(CUBIC, 3)
    out["msca.dw.w"] = _draw(rng, (cubic3.volume, c), cubic3.volume)
    for i, length in enumerate(arch.msca_strip_lengths):
        for axis in range(3):
            out[f"msca.scale{i}.axis{axis}.w"] = _draw(rng, (length, c), length)
    out["msca.pointwise"] = _draw(rng, (c, c), c)
    out["bottleneck.head"] = _draw(rng, (c, s), c)

    for stage in range(3):
        conv(f"dec{stage}.up", KernelSpec(CUBIC, 2), c, c)
        conv(f"dec{stage}.fuse", KernelSpec(CUBIC, 1), c, c)
        for b in range(arch.blocks_per_stage):
            block(f"dec{stage}.block{b}")
        out[f"dec{stage}.head"] = _draw(rng, (c, s), c)

    out["ocr.queries"] = _draw(rng, (arch.queries, c), c)
    for layer in ("cross", "self"):
        for mat in ("w_q", "w_k", "w_v", "w_o"):
            out[f"ocr.{layer}.{mat}"] = _draw(rng, (c, c), c)
    out["ocr.class_head"] = _draw(rng, (c, s), c)
    out["ocr.mask_head"] = _draw(rng, (c, c), c)
    out["fill"] = _draw(rng, (c,), c)
    return out


def save_weights(bundle: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(bundle_to_bytes(bundle))


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return bundle_from_bytes(f.read())


def bundle_to_bytes(bundle: dict[str, np.ndarray]) -> bytes:
    chunks = [_MAGIC, struct.pack("<BI", _VERSION, len(bundle))]
    for name in sorted(bundle):
        arr = np.ascontiguousarray(bundle[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def bundle_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != _MAGIC:
        raise ValueError(f"not a weights bundle (magic {bytes(data[:4])!r})")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported bundle version {version}")
    pos = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos: pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        out[name] = arr.copy()
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes in weights bundle")
    return out


def bundle_hash(bundle: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(bundle_to_bytes(bundle)).hexdigest()


def _conv_from(bundle: dict[str, np.ndarray], name: str, spec: KernelSpec) -> ConvParams:
    return ConvParams(spec, bundle[f"{name}.w"], bundle[f"{name}.b"])


def _block_from(bundle: dict[str, np.ndarray], name: str):
    return tuple(
        _conv_from(bundle, f"{name}.l{layer}", KernelSpec(HYPER_CROSS, size))
        for layer, size in enumerate(_BLOCK_SIZES)
    )


def completion_params_from_bundle(
    bundle: dict[str, np.ndarray],
    arch: ArchSpec = ArchSpec(),
    tau_p: float = 0.1,
    prune_enabled: bool = True,
) -> CompletionParams:
    encoder = []
    for stage in range(4):
        down = _conv_from(bundle, f"enc{stage}.down", KernelSpec(CUBIC, 2)) if stage else None
        blocks = [_block_from(bundle, f"enc{stage}.block{b}") for b in range(arch.blocks_per_stage)]
        encoder.append(EncoderStageParams(blocks=blocks, down=down))

    branches = []
    for i, length in enumerate(arch.msca_strip_lengths):
        branches.append([
            DepthwiseParams.strip(axis, length, bundle[f"msca.scale{i}.axis{axis}.w"])
            for axis in range(3)
        ])
    msca = MscaParams(
        dw=DepthwiseParams(KernelSpec(CUBIC, 3).offsets, bundle["msca.dw.w"]),
        branches=branches,
        pointwise=bundle["msca.pointwise"],
    )

    decoder = []
    for stage in range(3):
        decoder.append(DecoderStageParams(
            up=_conv_from(bundle, f"dec{stage}.up", KernelSpec(CUBIC, 2)),
            fuse=_conv_from(bundle, f"dec{stage}.fuse", KernelSpec(CUBIC, 1)),
            blocks=[_block_from(bundle, f"dec{stage}.block{b}")
                    for b in range(arch.blocks_per_stage)],
            head=bundle[f"dec{stage}.head"],
        ))
    return CompletionParams(
        encoder=encoder,
        msca=msca,
        decoder=decoder,
        bottleneck_head=bundle["bottleneck.head"],
        tau_p=tau_p,
        prune_enabled=prune_enabled,
    )


def query_set_from_bundle(bundle: dict[str, np.ndarray], arch: ArchSpec = ArchSpec()) -> QuerySet:
    def attn(layer: str) -> AttentionLayerParams:
        return AttentionLayerParams(
            bundle[f"ocr.{layer}.w_q"], bundle[f"ocr.{layer}.w_k"],
            bundle[f"ocr.{layer}.w_v"], bundle[f"ocr.{layer}.w_o"])

    return QuerySet(
        queries=bundle["ocr.queries"],
        cross=attn("cross"),
        self_attn=attn("self"),
        heads=arch.heads,
        class_head=bundle["ocr.class_head"],
        mask_head=bundle["ocr.mask_head"],
    )


def fill_embedding_from_bundle(bundle: dict[str, np.ndarray]) -> np.ndarray:
    return bundle["fill"]
