"""Volume container, block partitioning, projections and the VOLF file format.

Arrays are indexed ``data[x, y, z]`` with x and y lateral and z the depth
axis. On disk voxels are written x-fastest, which is Fortran order for this
indexing.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}

VOLF_MAGIC = b"VOLF"
VOLF_VERSION = 1
_VOLF_HEADER = struct.Struct("<4sH3I3f")


class VolumeFormatError(ValueError):
    """Raised when a VOLF file is malformed."""


@dataclass(frozen=True)
class Volume:
    """Dense 3D amplitude field with voxel pitch in micrometers."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume amplitudes must be finite")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nz(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> Volume:
        return Volume(data, self.spacing)


@dataclass(frozen=True)
class BlockSpec:
    """Block edge lengths in voxels along x, y and z."""

    h: int
    w: int
    l: int  # noqa: E741

    def __post_init__(self):
        for name in ("h", "w", "l"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"block dimension {name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.l)

    def validate_for(self, dims) -> None:
        for size, n, name in zip(self.as_tuple(), dims, "hwl"):
            if size > n:
                raise ValueError(f"block dimension {name}={size} exceeds volume dimension {n}")

    @classmethod
    def parse(cls, text: str) -> BlockSpec:
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        if len(parts) != 3:
            raise ValueError(f"block spec needs three integers h,w,l, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass(frozen=True)
class BlockGrid:
    """Partition of a volume into axis-aligned blocks.

    ``blocks`` holds ``(x_slice, y_slice, z_slice)`` tuples with x varying
    slowest and z fastest. ``starts`` holds the block start offsets per axis.
    """

    dims: tuple[int, int, int]
    spec: BlockSpec
    starts: tuple[np.ndarray, np.ndarray, np.ndarray]
    blocks: list = field(repr=False)

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(len(s) for s in self.starts)

    def __len__(self) -> int:
        return len(self.blocks)


def partition(dims, spec: BlockSpec) -> BlockGrid:
    """Split ``dims`` into blocks of ``spec``; trailing blocks may be smaller."""
    dims = tuple(int(d) for d in dims)
    spec.validate_for(dims)
    starts = tuple(np.arange(0, n, size) for n, size in zip(dims, spec.as_tuple()))
    ranges = [
        [slice(int(s), int(min(s + size, n))) for s in axis_starts]
        for axis_starts, size, n in zip(starts, spec.as_tuple(), dims)
    ]
    blocks = list(itertools.product(*ranges))
    return BlockGrid(dims=dims, spec=spec, starts=starts, blocks=blocks)


def block_std(vol: Volume | np.ndarray, block) -> float:
    """Population standard deviation of the voxels inside ``block``."""
    data = vol.data if isinstance(vol, Volume) else np.asarray(vol)
    for sl, n in zip(block, data.shape):
        if sl.start < 0 or sl.stop > n or sl.start >= sl.stop:
            raise IndexError(f"block {block} lies outside volume of shape {data.shape}")
    values = data[block]
    return float(np.sqrt(np.mean((values - values.mean()) ** 2)))


def _block_sums(data: np.ndarray, starts) -> np.ndarray:
    out = data
    for axis, axis_starts in enumerate(starts):
        out = np.add.reduceat(out, axis_starts, axis=axis)
    return out


def _block_sizes(grid: BlockGrid) -> tuple[np.ndarray, ...]:
    return tuple(np.diff(np.append(s, n)) for s, n in zip(grid.starts, grid.dims))


def expand_blocks(values: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Broadcast one value per block back onto the voxel grid."""
    out = values
    for axis, sizes in enumerate(_block_sizes(grid)):
        out = np.repeat(out, sizes, axis=axis)
    return out


def block_std_map(data: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Two-pass population STD of every block, shaped like ``grid.counts``."""
    sx, sy, sz = _block_sizes(grid)
    counts = sx[:, None, None] * sy[None, :, None] * sz[None, None, :]
    means = _block_sums(data, grid.starts) / counts
    centered = data - expand_blocks(means, grid)
    return np.sqrt(_block_sums(centered * centered, grid.starts) / counts)


@dataclass(frozen=True)
class MapImage:
    """2D projection image.

    ``pixels`` has shape ``(height, width)``. For a z projection, width runs
    along x and height along y. ``depth_index`` holds the argmax position
    along the projected axis when available.
    """

    pixels: np.ndarray
    depth_index: np.ndarray | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise ValueError("MapImage pixels must be 2D")
        object.__setattr__(self, "pixels", pixels)
        if self.depth_index is not None:
            depth = np.asarray(self.depth_index, dtype=np.int64)
            if depth.shape != pixels.shape:
                raise ValueError("depth_index must match pixel dimensions")
            object.__setattr__(self, "depth_index", depth)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES[axis]
        except KeyError:
            raise ValueError(f"axis must be one of x, y, z; got {axis!r}") from None
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2; got {axis!r}")
    return int(axis)


def map_project(vol: Volume, axis="z") -> MapImage:
    """Maximum amplitude projection; ties resolve to the smallest index."""
    a = _axis_index(axis)
    depth = np.argmax(vol.data, axis=a)
    pixels = np.take_along_axis(vol.data, np.expand_dims(depth, a), axis=a).squeeze(a)
    # remaining axes keep their order (u, v); images are stored (v, u)
    return MapImage(pixels.T, depth.T)


def bscan_extract(vol: Volume, axis="y", index: int = 0) -> np.ndarray:
    """Depth-versus-lateral slice at a fixed x or y index.

    Returns an array of shape ``(nz, n_lateral)`` so that rows run in depth.
    """
    a = _axis_index(axis)
    if a == 2:
        raise ValueError("B-scans are taken at a lateral (x or y) index")
    n = vol.shape[a]
    if not 0 <= index < n:
        raise IndexError(f"index {index} out of range for axis {axis!r} of length {n}")
    return np.take(vol.data, index, axis=a).T.copy()


def write_volf(path, vol: Volume) -> None:
    nx, ny, nz = vol.shape
    header = _VOLF_HEADER.pack(VOLF_MAGIC, VOLF_VERSION, nx, ny, nz, *vol.spacing)
    payload = np.asarray(vol.data, dtype="<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def read_volf(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _VOLF_HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, version, nx, ny, nz, sx, sy, sz = _VOLF_HEADER.unpack_from(raw)
    if magic != VOLF_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != VOLF_VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    count = nx * ny * nz
    expected = _VOLF_HEADER.size + 4 * count
    if len(raw) != expected:
        raise VolumeFormatError(f"{path}: payload has {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_VOLF_HEADER.size)
    return Volume(data.reshape((nx, ny, nz), order="F").astype(np.float64), (sx, sy, sz))


def quantize_f32(vol: Volume) -> Volume:
    """Round amplitudes through float32, matching what VOLF stores."""
    return vol.with_data(vol.data.astype(np.float32).astype(np.float64))
