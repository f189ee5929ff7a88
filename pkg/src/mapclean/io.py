"""Scan/pose/label file formats, map writers and rigid transforms.

Formats:
  * velodyne ``.bin`` scans: consecutive little-endian float32 records
    ``x y z intensity`` (16 bytes per point), sensor frame.
  * odometry pose files: one text line per scan, 12 whitespace-separated
    floats forming a row-major 3x4 matrix ``[R | t]`` (sensor -> world).
  * ``.label`` files: one little-endian uint32 per point; the low 16 bits
    hold the semantic class, the high 16 bits the instance id.
  * map output: PCD v0.7 (ascii or binary) and binary little-endian PLY.

All math runs in float64; on-disk coordinates are float32, matching the
datasets this tooling targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

SCAN_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4
ROTATION_TOL = 1e-6


@dataclass
class PointCloud:
    """Ordered 3-D points with optional intensity and per-point labels."""

    xyz: np.ndarray                 # (N, 3) float64
    intensity: np.ndarray = None    # (N,) float32, optional
    semantic: np.ndarray = None     # (N,) uint16, optional
    instance: np.ndarray = None     # (N,) uint16, optional
    dropped_nonfinite: int = 0      # points discarded at parse time

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        for name in ("intensity", "semantic", "instance"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr)
                if len(arr) != n:
                    raise ContractError(
                        f"{name} has {len(arr)} entries for {n} points")
                setattr(self, name, arr)

    def __len__(self):
        return len(self.xyz)

    def select(self, mask) -> "PointCloud":
        """Subset by boolean mask or index array; labels follow the points."""
        return PointCloud(
            self.xyz[mask],
            None if self.intensity is None else self.intensity[mask],
            None if self.semantic is None else self.semantic[mask],
            None if self.instance is None else self.instance[mask],
        )


@dataclass
class Pose:
    """Rigid transform mapping sensor coordinates into the world frame."""

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > ROTATION_TOL or np.linalg.det(self.rotation) < 0:
            raise ContractError(f"rotation not orthonormal (drift {err:.3e})")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self @ other) p = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Project a drifted rotation back onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(r)
    fix = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    return u @ fix @ vt


def read_scan(path) -> PointCloud:
    """Read a binary scan file; drops non-finite points, counting them."""
    path = Path(path)
    size = path.stat().st_size
    if size % SCAN_RECORD_BYTES != 0:
        offset = size - size % SCAN_RECORD_BYTES
        raise ParseError(
            f"{path}: truncated record at byte {offset} "
            f"(file size {size} is not a multiple of {SCAN_RECORD_BYTES})")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(raw).all(axis=1)
    dropped = int(len(raw) - finite.sum())
    if dropped:
        raw = raw[finite]
    return PointCloud(raw[:, :3].astype(np.float64),
                      intensity=raw[:, 3].copy(),
                      dropped_nonfinite=dropped)


def read_poses(path) -> list:
    """Read an odometry pose file, one 3x4 row-major matrix per line.

    Rotations whose orthonormality drift exceeds 1e-6 are re-projected
    onto SO(3) before the pose is built.
    """
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != 12:
                raise ParseError(
                    f"{path}: line {lineno} has {len(tokens)} tokens, expected 12")
            try:
                vals = np.array([float(t) for t in tokens], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            mat = vals.reshape(3, 4)
            r, t = mat[:, :3], mat[:, 3]
            if np.abs(r @ r.T - np.eye(3)).max() > ROTATION_TOL:
                r = orthonormalize(r)
            poses.append(Pose(r, t))
    return poses


def write_poses(path, poses) -> None:
    with open(path, "w") as fh:
        for p in poses:
            mat = np.hstack([p.rotation, p.translation[:, None]])
            fh.write(" ".join(f"{v:.17g}" for v in mat.ravel()) + "\n")


def read_labels(path):
    """Read a .label file -> (semantic uint16 array, instance uint16 array)."""
    path = Path(path)
    size = path.stat().st_size
    if size % LABEL_RECORD_BYTES != 0:
        raise ParseError(
            f"{path}: truncated label file (size {size} not a multiple of 4)")
    raw = np.fromfile(path, dtype="<u4")
    semantic = (raw & 0xFFFF).astype(np.uint16)
    instance = (raw >> 16).astype(np.uint16)
    return semantic, instance


def write_labels(path, semantic, instance=None) -> None:
    semantic = np.asarray(semantic, dtype=np.uint32)
    if instance is None:
        instance = np.zeros_like(semantic)
    packed = (semantic & 0xFFFF) | (np.asarray(instance, dtype=np.uint32) << 16)
    packed.astype("<u4").tofile(path)


def attach_labels(cloud: PointCloud, semantic, instance) -> PointCloud:
    """Pair a scan with its label arrays; lengths must match exactly."""
    if len(semantic) != len(cloud):
        raise ContractError(
            f"label count {len(semantic)} does not match point count {len(cloud)}")
    cloud.semantic = np.asarray(semantic, dtype=np.uint16)
    cloud.instance = np.asarray(instance, dtype=np.uint16)
    return cloud


def transform_to_world(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Map every point p to R p + t; intensity/labels are preserved."""
    out = cloud.select(slice(None))
    out.xyz = cloud.xyz @ pose.rotation.T + pose.translation
    out.dropped_nonfinite = cloud.dropped_nonfinite
    return out


def range_mask(xyz: np.ndarray, min_range: float, max_range: float) -> np.ndarray:
    """Boolean mask of points whose sensor-frame range lies in [min, max]."""
    r = np.linalg.norm(xyz, axis=1)
    return (r >= min_range) & (r <= max_range)


# --------------------------------------------------------------------------
# map output: PCD v0.7 and binary PLY

MAP_FORMATS = ("ascii-pcd", "binary-pcd", "ply")


def _pcd_header(n, with_intensity, data):
    fields = "x y z intensity" if with_intensity else "x y z"
    k = 4 if with_intensity else 3
    return "\n".join([
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        f"FIELDS {fields}",
        "SIZE " + " ".join(["4"] * k),
        "TYPE " + " ".join(["F"] * k),
        "COUNT " + " ".join(["1"] * k),
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        f"DATA {data}",
    ]) + "\n"


def write_map(path, cloud: PointCloud, format: str = "ascii-pcd") -> None:
    """Write a cloud to disk; read_map() on the result restores coordinates
    at float32 precision."""
    if format not in MAP_FORMATS:
        raise ContractError(f"unknown map format {format!r}, expected one of {MAP_FORMATS}")
    path = Path(path)
    n = len(cloud)
    with_int = cloud.intensity is not None
    cols = cloud.xyz.astype(np.float32)
    if with_int:
        cols = np.column_stack([cols, np.asarray(cloud.intensity, dtype=np.float32)])
    try:
        if format == "ascii-pcd":
            with open(path, "w") as fh:
                fh.write(_pcd_header(n, with_int, "ascii"))
                for row in cols:
                    fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
        elif format == "binary-pcd":
            with open(path, "wb") as fh:
                fh.write(_pcd_header(n, with_int, "binary").encode("ascii"))
                fh.write(cols.astype("<f4").tobytes())
        else:
            props = ["x", "y", "z"] + (["intensity"] if with_int else [])
            header = "\n".join(
                ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
                + [f"property float {p}" for p in props]
                + ["end_header"]) + "\n"
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                fh.write(cols.astype("<f4").tobytes())
    except OSError as exc:
        raise OSError(f"failed writing map to {path}: {exc}") from exc


def read_map(path) -> PointCloud:
    """Read back a map written by write_map (PCD ascii/binary or binary PLY)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"ply":
        return _read_ply(path)
    return _read_pcd(path)


def _read_pcd(path) -> PointCloud:
    with open(path, "rb") as fh:
        header = {}
        while True:
            line = fh.readline().decode("ascii").strip()
            if line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            header[key] = rest
            if key == "DATA":
                break
        fields = header.get("FIELDS", "x y z").split()
        n = int(header["POINTS"])
        k = len(fields)
        if header["DATA"] == "ascii":
            arr = np.loadtxt(fh, dtype=np.float32, ndmin=2) if n else np.zeros((0, k), np.float32)
        else:
            arr = np.frombuffer(fh.read(4 * k * n), dtype="<f4").reshape(n, k)
    arr = arr.reshape(n, k)
    intensity = arr[:, 3].copy() if "intensity" in fields else None
    return PointCloud(arr[:, :3].astype(np.float64), intensity=intensity)


def _read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        n = 0
        props = []
        while True:
            line = fh.readline().decode("ascii").strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        k = len(props)
        arr = np.frombuffer(fh.read(4 * k * n), dtype="<f4").reshape(n, k)
    intensity = arr[:, props.index("intensity")].copy() if "intensity" in props else None
    return PointCloud(arr[:, :3].astype(np.float64), intensity=intensity)


# --------------------------------------------------------------------------
# odometry calibration

def read_calibration(path) -> dict:
    """Parse a KITTI-style calib.txt into name -> 3x4 row-major matrices."""
    out = {}
    with open(path) as fh:
        for line in fh:
            name, _, rest = line.partition(":")
            vals = rest.split()
            if len(vals) == 12:
                out[name.strip()] = np.array(
                    [float(v) for v in vals], dtype=np.float64).reshape(3, 4)
    return out


def poses_to_velodyne_frame(poses, tr_3x4: np.ndarray) -> list:
    """Rebase camera-frame odometry poses onto the velodyne frame.

    tr_3x4 maps velodyne coordinates into the camera frame; the returned
    poses map velodyne points of each scan into the first scan's velodyne
    world frame: T' = Tr^-1 . T . Tr.
    """
    tr = np.eye(4)
    tr[:3, :] = tr_3x4
    tr_inv = np.linalg.inv(tr)
    out = []
    for p in poses:
        m = tr_inv @ p.matrix() @ tr
        out.append(Pose(orthonormalize(m[:3, :3]), m[:3, 3]))
    return out


# --------------------------------------------------------------------------
# sequence loading

def list_scan_files(scan_dir) -> list:
    files = sorted(Path(scan_dir).glob("*.bin"))
    if not files:
        raise FileNotFoundError(f"no .bin scans under {scan_dir}")
    return files


def load_sequence(scan_dir, pose_file, start=None, end=None,
                  min_range=None, max_range=None, label_dir=None):
    """Yield (frame_index, cloud, pose) over a scan directory.

    Frame indices refer to positions in the full sequence; start/end bound
    them inclusively. The range filter, when given, is applied in the
    sensor frame before anything else sees the points.
    """
    files = list_scan_files(scan_dir)
    poses = read_poses(pose_file)
    if len(files) != len(poses):
        raise ContractError(
            f"{len(files)} scans but {len(poses)} poses")
    lo = 0 if start is None else start
    hi = len(files) - 1 if end is None else end
    if lo < 0 or hi >= len(files) or lo > hi:
        raise ContractError(
            f"frame window [{lo}, {hi}] outside sequence of {len(files)} scans")
    for idx in range(lo, hi + 1):
        cloud = read_scan(files[idx])
        if label_dir is not None:
            sem, inst = read_labels(Path(label_dir) / (files[idx].stem + ".label"))
            attach_labels(cloud, sem, inst)
        if min_range is not None or max_range is not None:
            keep = range_mask(cloud.xyz,
                              0.0 if min_range is None else min_range,
                              np.inf if max_range is None else max_range)
            cloud = cloud.select(keep)
        yield idx, cloud, poses[idx]
