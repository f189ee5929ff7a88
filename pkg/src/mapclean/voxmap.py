"""Sparse voxel submaps with per-voxel frame-index sets.

The map state holds three co-registered stores over the same integer grid:
ground, non-ground and dynamic. Every voxel keeps all its points plus the
set of scan indices that observed it; min/max/cardinality of that set are
cached so retrieval queries stay O(1) per voxel.

Keys are (i, j, k) integer triples at the API surface. Internally each key
is packed into one int64 (21 bits per axis) and every submap maintains a
per-column sorted list of occupied k levels, so vertical-column searches
cost a dict hit plus a bisect instead of probing every cell in range.

All mutation happens on the caller's thread (single-writer contract);
read-only queries may run concurrently between mutation batches.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass, field

import numpy as np

from .io import PointCloud

# grid indices live in [-2^20, 2^20): 21 bits per axis packed into an int64
_OFF = 1 << 20
_SPAN = 1 << 21
_M21 = _SPAN - 1


def voxel_key(p, voxel_size: float):
    """Integer grid cell of a single point: floor(coordinate / size) per axis."""
    return tuple(int(v) for v in np.floor(np.asarray(p, dtype=np.float64) / voxel_size))


def voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    """(N, 3) int64 grid cells for a point array."""
    return np.floor(np.asarray(xyz, dtype=np.float64) / voxel_size).astype(np.int64)


def pack_key(key) -> int:
    i, j, k = key
    return ((i + _OFF) << 42) | ((j + _OFF) << 21) | (k + _OFF)


def unpack_key(packed: int) -> tuple:
    return (int((packed >> 42) - _OFF),
            int(((packed >> 21) & _M21) - _OFF),
            int((packed & _M21) - _OFF))


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Fold (N, 3) integer keys into single int64s for fast grouping."""
    k = keys + _OFF
    if k.size and (k.min() < 0 or k.max() >= _SPAN):
        raise OverflowError("voxel index outside packable range (+/- 2^20 cells)")
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def cells_in_range(vertical_range: float, voxel_size: float) -> int:
    """Number of whole cells covered by a vertical range, floor(range/size).

    A small epsilon absorbs IEEE division noise so 3.0 m / 0.2 m is 15, not 14.
    """
    return int(math.floor(vertical_range / voxel_size + 1e-9))


class VoxelData:
    """Points plus the set of frame indices that observed the cell."""

    __slots__ = ("blocks", "n_points", "frame_set", "min_frame", "max_frame")

    def __init__(self):
        self.blocks = []        # list of (m, 3) float32 arrays
        self.n_points = 0
        self.frame_set = set()
        self.min_frame = None
        self.max_frame = None

    @property
    def count(self):
        """Cached cardinality of the frame set (total observation count)."""
        return len(self.frame_set)

    def add_frame(self, f: int):
        if f not in self.frame_set:
            self.frame_set.add(f)
            if self.min_frame is None or f < self.min_frame:
                self.min_frame = f
            if self.max_frame is None or f > self.max_frame:
                self.max_frame = f

    def add_block(self, pts: np.ndarray, f: int):
        if len(pts):
            self.blocks.append(np.asarray(pts, dtype=np.float32))
            self.n_points += len(pts)
        self.add_frame(f)

    def merge(self, other: "VoxelData"):
        self.blocks.extend(other.blocks)
        self.n_points += other.n_points
        for f in other.frame_set:
            self.add_frame(f)

    def points(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros((0, 3), dtype=np.float32)
        return np.concatenate(self.blocks, axis=0)


class Submap:
    """One sparse key -> VoxelData store with a per-column k index."""

    def __init__(self, voxel_size: float):
        self.voxel_size = voxel_size
        self.cells = {}      # packed key -> VoxelData
        self._columns = {}   # packed (i, j) column -> sorted list of k

    def __contains__(self, key):
        return pack_key(key) in self.cells

    def __len__(self):
        return len(self.cells)

    def get(self, key):
        return self.cells.get(pack_key(key))

    def keys(self):
        return [unpack_key(p) for p in self.cells]

    def insert(self, p, f: int):
        """Insert a single point observed at frame f."""
        pts = np.asarray(p, dtype=np.float64).reshape(1, 3)
        self._insert_packed(pack_keys(voxel_keys(pts, self.voxel_size))[0].item(),
                            pts, f)

    def insert_block(self, key, pts: np.ndarray, f: int):
        """Insert a block of points that all share one voxel key."""
        self._insert_packed(pack_key(key), pts, f)

    def insert_grouped(self, packed_keys, blocks, f: int):
        """Insert pre-grouped float32 blocks, one per packed key."""
        cells = self.cells
        for pk, block in zip(packed_keys, blocks):
            vd = cells.get(pk)
            if vd is None:
                self._insert_packed(pk, block, f)
                continue
            vd.blocks.append(block)
            vd.n_points += block.shape[0]
            fs = vd.frame_set
            if f not in fs:
                fs.add(f)
                if f > vd.max_frame:
                    vd.max_frame = f
                elif f < vd.min_frame:
                    vd.min_frame = f

    def total_points(self) -> int:
        return sum(vd.n_points for vd in self.cells.values())

    # -- packed-key internals ------------------------------------------------

    def _insert_packed(self, pk: int, pts, f: int):
        vd = self.cells.get(pk)
        if vd is None:
            vd = VoxelData()
            self.cells[pk] = vd
            self._index_add(pk)
        vd.add_block(pts, f)

    def _index_add(self, pk: int):
        col = self._columns.get(pk >> 21)
        if col is None:
            self._columns[pk >> 21] = [(pk & _M21) - _OFF]
        else:
            insort(col, (pk & _M21) - _OFF)

    def _pop_packed(self, pk: int):
        vd = self.cells.pop(pk, None)
        if vd is not None:
            col = self._columns[pk >> 21]
            col.remove((pk & _M21) - _OFF)
            if not col:
                del self._columns[pk >> 21]
        return vd

    def _put_packed(self, pk: int, vd: VoxelData):
        existing = self.cells.get(pk)
        if existing is None:
            self.cells[pk] = vd
            self._index_add(pk)
        else:
            existing.merge(vd)

    def _first_below(self, pk: int, steps: int):
        """Packed key of the nearest occupied cell under pk within steps."""
        col = self._columns.get(pk >> 21)
        if not col:
            return None
        k = (pk & _M21) - _OFF
        idx = bisect_left(col, k) - 1
        if idx >= 0 and k - col[idx] <= steps:
            return pk - (k - col[idx])
        return None

    def _all_above(self, pk: int, steps: int) -> list:
        """Packed keys of occupied cells above pk within steps, bottom-up."""
        col = self._columns.get(pk >> 21)
        if not col:
            return []
        k = (pk & _M21) - _OFF
        out = []
        for idx in range(bisect_right(col, k), len(col)):
            dk = col[idx] - k
            if dk > steps:
                break
            out.append(pk + dk)
        return out


@dataclass
class MapState:
    """Ground, non-ground and dynamic submaps sharing one grid."""

    voxel_size: float = 0.2
    ground: Submap = None
    nonground: Submap = None
    dynamic: Submap = None
    move_warnings: int = 0
    last_frame: int = field(default=None)

    def __post_init__(self):
        if self.ground is None:
            self.ground = Submap(self.voxel_size)
        if self.nonground is None:
            self.nonground = Submap(self.voxel_size)
        if self.dynamic is None:
            self.dynamic = Submap(self.voxel_size)


def ground_voxel_below(state: MapState, key, max_range: float):
    """First ground voxel found descending the z-column from key, or None.

    Equivalent to probing (i, j, k-1) ... (i, j, k-floor(max_range/size)) and
    stopping at the first occupied cell.
    """
    steps = cells_in_range(max_range, state.voxel_size)
    pk = state.ground._first_below(pack_key(key), steps)
    return None if pk is None else unpack_key(pk)


def nonground_voxels_above(state: MapState, key, max_range: float) -> list:
    """All non-ground voxels in the z-column above key within range, bottom-up."""
    steps = cells_in_range(max_range, state.voxel_size)
    return [unpack_key(pk)
            for pk in state.nonground._all_above(pack_key(key), steps)]


def move_voxel(src: Submap, dst: Submap, key) -> bool:
    """Transfer a whole voxel between submaps, merging on key collision.

    A missing source key is tolerated (no-op); callers track the warning
    counter on MapState if they care.
    """
    pk = pack_key(key)
    vd = src._pop_packed(pk)
    if vd is None:
        return False
    dst._put_packed(pk, vd)
    return True


def export_static_map(state: MapState) -> PointCloud:
    """All points in the ground and non-ground submaps; dynamic excluded."""
    blocks = []
    for submap in (state.ground, state.nonground):
        for vd in submap.cells.values():
            blocks.extend(vd.blocks)
    if not blocks:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(np.concatenate(blocks, axis=0).astype(np.float64))


def export_dynamic_map(state: MapState) -> PointCloud:
    blocks = []
    for vd in state.dynamic.cells.values():
        blocks.extend(vd.blocks)
    if not blocks:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(np.concatenate(blocks, axis=0).astype(np.float64))


def dump_csv(state: MapState, path) -> None:
    """One row per voxel: submap, i, j, k, count, min_frame, max_frame."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["submap", "i", "j", "k", "count", "min_frame", "max_frame"])
        for name, submap in (("ground", state.ground),
                             ("nonground", state.nonground),
                             ("dynamic", state.dynamic)):
            for pk, vd in submap.cells.items():
                i, j, k = unpack_key(pk)
                writer.writerow([name, i, j, k, vd.count, vd.min_frame, vd.max_frame])
