"""Coordinate-indexed sparse and dense voxel tensors.

The sparse tensor is the central representation of the pipeline: a set of
active voxel coordinates at some stride, each carrying a C-dim float32
feature vector.  Active voxels are kept in canonical lexicographic order
by (x, y, z) so every downstream operation is deterministic.  Tensors are
immutable after construction; operations build new tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Coord3",
    "VoxelGridSpec",
    "SparseVoxelTensor",
    "DenseVoxelTensor",
    "densify",
    "sparsify",
    "keep_any_nonzero",
    "keep_not_equal",
]

# Absolute tolerance used for feature equality checks throughout the package.
FEATURE_ATOL = 1e-5

_VALID_STRIDES = (1, 2, 4, 8, 16, 32)


class Coord3(NamedTuple):
    """Integer voxel index triple in the owning grid's index space."""

    x: int
    y: int
    z: int


@dataclass(frozen=True)
class VoxelGridSpec:
    """Geometry of a voxel grid at a given stride.

    ``dims_*`` are the cell counts of *this* grid (already divided by the
    stride); ``voxel_size`` is the full-resolution voxel edge in meters, so
    one cell of this grid spans ``voxel_size * stride`` meters.  ``origin``
    is the world-space position of the grid's minimum corner.
    """

    dims_x: int
    dims_y: int
    dims_z: int
    voxel_size: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    stride: int = 1

    def __post_init__(self):
        if min(self.dims_x, self.dims_y, self.dims_z) < 1:
            raise ValueError(f"grid dims must be positive, got {self.dims}")
        if self.stride not in _VALID_STRIDES:
            raise ValueError(f"stride must be one of {_VALID_STRIDES}, got {self.stride}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if len(self.origin) != 3:
            raise ValueError("origin must be a 3-vector")

    @classmethod
    def at_stride(
        cls,
        full_dims: tuple[int, int, int],
        voxel_size: float,
        origin: tuple[float, float, float] = (0.0, 0.0, 0.0),
        stride: int = 1,
    ) -> "VoxelGridSpec":
        """Grid covering ``full_dims`` full-resolution cells at ``stride``.

        Dims are ceil-divided so the strided grid always covers the full
        extent.
        """
        dims = tuple(-(-d // stride) for d in full_dims)
        return cls(dims[0], dims[1], dims[2], voxel_size, origin, stride)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.dims_x, self.dims_y, self.dims_z)

    @property
    def cell_count(self) -> int:
        return self.dims_x * self.dims_y * self.dims_z

    @property
    def cell_size(self) -> float:
        """Edge length of one cell of this grid, in meters."""
        return self.voxel_size * self.stride

    def downsampled(self) -> "VoxelGridSpec":
        """The grid one stride level coarser (dims ceil-halved)."""
        if self.stride * 2 not in _VALID_STRIDES:
            raise ValueError(f"cannot downsample past stride {self.stride}")
        return VoxelGridSpec(
            -(-self.dims_x // 2),
            -(-self.dims_y // 2),
            -(-self.dims_z // 2),
            self.voxel_size,
            self.origin,
            self.stride * 2,
        )

    def upsampled(self, dims: tuple[int, int, int] | None = None) -> "VoxelGridSpec":
        """The grid one stride level finer.

        Ceil-division loses the exact finer dims, so callers that know them
        (e.g. a decoder with encoder skip grids) pass ``dims`` explicitly;
        the default doubles every axis.
        """
        if self.stride == 1:
            raise ValueError("already at full resolution")
        if dims is None:
            dims = (self.dims_x * 2, self.dims_y * 2, self.dims_z * 2)
        return VoxelGridSpec(dims[0], dims[1], dims[2], self.voxel_size, self.origin, self.stride // 2)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        """Boolean mask of which (N, 3) integer coords lie inside the grid."""
        coords = np.asarray(coords)
        return np.all((coords >= 0) & (coords < np.array(self.dims)), axis=-1)

    def linearize(self, coords: np.ndarray) -> np.ndarray:
        """Row-major linear key of in-bounds (N, 3) coords."""
        c = np.asarray(coords, dtype=np.int64)
        return (c[..., 0] * self.dims_y + c[..., 1]) * self.dims_z + c[..., 2]


def _canonical_order(coords: np.ndarray) -> np.ndarray:
    """Permutation sorting coords lexicographically by (x, y, z)."""
    return np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))


class SparseVoxelTensor:
    """Active voxel set with per-voxel feature vectors.

    ``coords`` is an (N, 3) int32 array in canonical lexicographic order,
    ``features`` the matching (N, C) float32 array.  Construction validates
    bounds and uniqueness; out-of-grid coords are errors, never clamped.
    """

    __slots__ = ("grid", "coords", "features", "_keys", "_index")

    def __init__(self, grid: VoxelGridSpec, coords, features):
        coords = np.asarray(coords, dtype=np.int32).reshape(-1, 3)
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise ValueError(f"features must be (N, C), got shape {features.shape}")
        if len(features) != len(coords):
            raise ValueError(f"{len(coords)} coords but {len(features)} feature rows")
        if len(coords) and not grid.contains(coords).all():
            bad = coords[~grid.contains(coords)][0]
            raise ValueError(f"coord {tuple(bad)} outside grid dims {grid.dims}")

        order = _canonical_order(coords)
        coords = np.ascontiguousarray(coords[order])
        features = np.ascontiguousarray(features[order])
        keys = grid.linearize(coords)
        if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
            dup = coords[1:][keys[1:] == keys[:-1]][0]
            raise ValueError(f"duplicate active coord {tuple(dup)}")

        self.grid = grid
        self.coords = coords
        self.features = features
        self._keys = keys
        self._index = {Coord3(*c): i for i, c in enumerate(coords.tolist())}
        self.coords.setflags(write=False)
        self.features.setflags(write=False)

    @classmethod
    def empty(cls, grid: VoxelGridSpec, channels: int) -> "SparseVoxelTensor":
        return cls(grid, np.empty((0, 3), np.int32), np.empty((0, channels), np.float32))

    @property
    def channel_count(self) -> int:
        return self.features.shape[1]

    @property
    def active_count(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __contains__(self, coord) -> bool:
        return Coord3(*coord) in self._index

    def feature_at(self, coord) -> np.ndarray:
        return self.features[self._index[Coord3(*coord)]]

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row indices of (N, 3) query coords; -1 where inactive or off-grid.

        Vectorized binary search over the canonically sorted linear keys.
        """
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        out = np.full(len(coords), -1, dtype=np.int64)
        inside = self.grid.contains(coords)
        if not inside.any() or len(self._keys) == 0:
            return out
        keys = self.grid.linearize(coords[inside])
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        hit = self._keys[pos] == keys
        found = np.where(hit, pos, -1)
        out[inside] = found
        return out

    def with_features(self, features: np.ndarray) -> "SparseVoxelTensor":
        """Same active set, new feature rows (aligned with ``coords``)."""
        return SparseVoxelTensor(self.grid, self.coords, features)

    def equal_mapping(self, other: "SparseVoxelTensor", atol: float = FEATURE_ATOL) -> bool:
        """True if both tensors carry the same coord -> feature mapping."""
        return (
            self.grid.dims == other.grid.dims
            and self.grid.stride == other.grid.stride
            and self.active_count == other.active_count
            and self.channel_count == other.channel_count
            and np.array_equal(self.coords, other.coords)
            and np.allclose(self.features, other.features, atol=atol, rtol=0.0)
        )


class DenseVoxelTensor:
    """Dense (X, Y, Z, C) float32 value grid over a VoxelGridSpec."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: VoxelGridSpec, values):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 4 or values.shape[:3] != grid.dims:
            raise ValueError(f"values shape {values.shape} does not match grid dims {grid.dims}")
        self.grid = grid
        self.values = values

    @classmethod
    def full(cls, grid: VoxelGridSpec, channels: int, fill: float = 0.0) -> "DenseVoxelTensor":
        return cls(grid, np.full(grid.dims + (channels,), fill, dtype=np.float32))

    @property
    def channel_count(self) -> int:
        return self.values.shape[3]


def densify(sparse: SparseVoxelTensor, fill: Sequence[float] | np.ndarray) -> DenseVoxelTensor:
    """Dense tensor equal to ``sparse`` on its active set and ``fill`` elsewhere."""
    fill = np.asarray(fill, dtype=np.float32).reshape(-1)
    if fill.shape[0] != sparse.channel_count:
        raise ValueError(f"fill has {fill.shape[0]} channels, tensor has {sparse.channel_count}")
    values = np.broadcast_to(fill, sparse.grid.dims + (len(fill),)).copy()
    c = sparse.coords
    values[c[:, 0], c[:, 1], c[:, 2]] = sparse.features
    return DenseVoxelTensor(sparse.grid, values)


def sparsify(dense: DenseVoxelTensor, keep: Callable[[np.ndarray], bool]) -> SparseVoxelTensor:
    """Sparse tensor over the cells whose feature vector satisfies ``keep``."""
    flat = dense.values.reshape(-1, dense.channel_count)
    mask = np.fromiter((bool(keep(v)) for v in flat), dtype=bool, count=len(flat))
    idx = np.flatnonzero(mask)
    coords = np.stack(np.unravel_index(idx, dense.grid.dims), axis=1).astype(np.int32)
    return SparseVoxelTensor(dense.grid, coords, flat[idx])


def keep_any_nonzero(v: np.ndarray) -> bool:
    return bool(np.any(v != 0.0))


def keep_not_equal(fill: Sequence[float] | np.ndarray) -> Callable[[np.ndarray], bool]:
    """Predicate rejecting exactly the fill vector (densify's retraction partner)."""
    fill = np.asarray(fill, dtype=np.float32).reshape(-1)
    return lambda v: not np.array_equal(v, fill)
