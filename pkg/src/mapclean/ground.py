"""Two-step ground segmentation: range-image candidate extraction, then
sector-wise PCA plane refinement.

Step one projects the scan into a beam/azimuth range image and walks each
column bottom-up, keeping cells while the inclination angle between
consecutive returns stays shallow. Step two fits a plane per x-y sector to
the surviving candidates (seeded from the lowest points, iterated with an
inlier threshold) and keeps candidates close to their sector plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import PointCloud

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pure-numpy fallbacks below
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(fn):
            return fn
        return deco


@dataclass
class GroundSegConfig:
    rows: int = 64
    cols: int = 2048
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    angle_threshold_deg: float = 10.0
    sectors_x: int = 4
    sectors_y: int = 4
    footprint: float = 160.0          # x-y extent of the sector grid, meters
    seed_fraction: float = 0.2
    iterations: int = 3
    plane_dist_threshold: float = 0.25
    min_sector_candidates: int = 10
    max_fit_points: int = 4000   # per-sector cap during plane iteration


@dataclass
class RangeImage:
    ranges: np.ndarray       # (rows, cols) float64, 0 where empty
    point_index: np.ndarray  # (rows, cols) int64, -1 where empty
    point_rows: np.ndarray   # (N,) row of every scan point, -1 outside FOV
    point_cols: np.ndarray   # (N,) col of every scan point, -1 outside FOV


@dataclass
class GroundModel:
    """Per-sector planes n . p = d over the x-y footprint grid."""

    normals: np.ndarray      # (S, 3); NaN rows where no plane
    offsets: np.ndarray      # (S,)
    has_plane: np.ndarray    # (S,) bool
    sectors_x: int
    sectors_y: int
    footprint: float


@njit(cache=True)
def _project_kernel(xyz, rows, cols, fov_up_deg, fov_down_deg):
    n = xyz.shape[0]
    ranges_img = np.zeros((rows, cols), dtype=np.float64)
    index_img = np.full((rows, cols), -1, dtype=np.int64)
    prow = np.full(n, -1, dtype=np.int64)
    pcol = np.full(n, -1, dtype=np.int64)
    span = fov_up_deg - fov_down_deg
    for i in range(n):
        x, y, z = xyz[i, 0], xyz[i, 1], xyz[i, 2]
        r = math.sqrt(x * x + y * y + z * z)
        if r <= 1e-9:
            continue
        s = z / r
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        elev = math.degrees(math.asin(s))
        row = int(math.floor((elev - fov_down_deg) / span * rows))
        if row == rows:
            row = rows - 1  # elevation exactly at the top edge
        if row < 0 or row >= rows:
            continue
        col = int(math.floor((math.atan2(y, x) + math.pi)
                             / (2.0 * math.pi) * cols))
        if col < 0:
            col = 0
        elif col >= cols:
            col = cols - 1
        prow[i] = row
        pcol[i] = col
        if index_img[row, col] < 0 or r < ranges_img[row, col]:
            ranges_img[row, col] = r
            index_img[row, col] = i
    return ranges_img, index_img, prow, pcol


def _project_numpy(xyz, rows, cols, fov_up_deg, fov_down_deg):
    n = len(xyz)
    ranges_img = np.zeros((rows, cols), dtype=np.float64)
    index_img = np.full((rows, cols), -1, dtype=np.int64)
    prow = np.full(n, -1, dtype=np.int64)
    pcol = np.full(n, -1, dtype=np.int64)

    r = np.linalg.norm(xyz, axis=1)
    ok = r > 1e-9
    elev = np.zeros(n)
    elev[ok] = np.degrees(np.arcsin(np.clip(xyz[ok, 2] / r[ok], -1.0, 1.0)))
    az = np.arctan2(xyz[:, 1], xyz[:, 0])  # (-pi, pi]

    span = fov_up_deg - fov_down_deg
    row = np.floor((elev - fov_down_deg) / span * rows).astype(np.int64)
    row[row == rows] = rows - 1  # elevation exactly at the top edge
    col = np.floor((az + np.pi) / (2.0 * np.pi) * cols).astype(np.int64)
    col = np.clip(col, 0, cols - 1)

    valid = ok & (row >= 0) & (row < rows)
    prow[valid] = row[valid]
    pcol[valid] = col[valid]

    # write far points first so the nearest survives; on exact range ties the
    # lowest point index wins, matching the sequential kernel
    vidx = np.nonzero(valid)[0]
    order = vidx[np.lexsort((-vidx, -r[vidx]))]
    ranges_img[row[order], col[order]] = r[order]
    index_img[row[order], col[order]] = order
    return ranges_img, index_img, prow, pcol


def build_range_image(scan: PointCloud, rows: int, cols: int,
                      fov_up_deg: float = 2.0,
                      fov_down_deg: float = -24.8) -> RangeImage:
    """Spherical projection; on cell collisions the nearer point wins."""
    if rows < 2 or cols < 2:
        raise ValueError("range image needs rows, cols >= 2")
    xyz = np.ascontiguousarray(scan.xyz)
    if len(xyz) == 0:
        return RangeImage(np.zeros((rows, cols)),
                          np.full((rows, cols), -1, dtype=np.int64),
                          np.full(0, -1, dtype=np.int64),
                          np.full(0, -1, dtype=np.int64))
    project = _project_kernel if HAVE_NUMBA else _project_numpy
    return RangeImage(*project(xyz, rows, cols,
                               float(fov_up_deg), float(fov_down_deg)))


@njit(cache=True)
def _walk_kernel(index_img, xyz, tan_thr):
    rows, cols = index_img.shape
    cand = np.zeros((rows, cols), dtype=np.bool_)
    for c in range(cols):
        prev = -1
        prev_row = -1
        bottom_row = -1
        for row in range(rows):
            i = index_img[row, c]
            if i < 0:
                continue
            if prev < 0:
                bottom_row = row
            else:
                dz = abs(xyz[i, 2] - xyz[prev, 2])
                dx = xyz[i, 0] - xyz[prev, 0]
                dy = xyz[i, 1] - xyz[prev, 1]
                if dz < tan_thr * math.hypot(dx, dy):
                    cand[row, c] = True
                    if prev_row == bottom_row:
                        cand[bottom_row, c] = True
                else:
                    break  # once exceeded, nothing above may be marked
            prev = i
            prev_row = row
    return cand


def _walk_numpy(index_img, xyz, tan_thr):
    rows, cols = index_img.shape
    occ = index_img >= 0
    idx = np.where(occ, index_img, 0)
    cx = xyz[:, 0][idx]
    cy = xyz[:, 1][idx]
    cz = xyz[:, 2][idx]
    row_no = np.where(occ, np.arange(rows)[:, None], -1)
    last_occ = np.maximum.accumulate(row_no, axis=0)
    prev = np.vstack([np.full((1, cols), -1, np.int64), last_occ[:-1]])
    has_prev = occ & (prev >= 0)

    prev_idx = np.clip(prev, 0, None)
    px = np.take_along_axis(cx, prev_idx, axis=0)
    py = np.take_along_axis(cy, prev_idx, axis=0)
    pz = np.take_along_axis(cz, prev_idx, axis=0)
    dz = np.abs(cz - pz)
    dxy = np.hypot(cx - px, cy - py)
    step_ok = dz < tan_thr * dxy

    # chain of shallow steps from the bottom; empty cells and the bottom-most
    # occupied cell pass through
    passthrough = np.where(has_prev, step_ok, True)
    chain = np.logical_and.accumulate(passthrough, axis=0)
    cand = occ & chain & has_prev

    # the bottom-most cell joins iff its step up to the second cell is shallow
    col_any = occ.any(axis=0)
    bottom = np.argmax(occ, axis=0)
    occ2 = occ.copy()
    occ2[bottom[col_any], np.nonzero(col_any)[0]] = False
    col_two = occ2.any(axis=0)
    second = np.argmax(occ2, axis=0)
    c2 = np.nonzero(col_two)[0]
    cand[bottom[c2], c2] = cand[second[c2], c2]
    return cand


def extract_candidates(img: RangeImage, scan: PointCloud,
                       angle_threshold_deg: float = 10.0) -> np.ndarray:
    """Per-point mask of ground candidates.

    In each image column, consecutive occupied cells are walked bottom-up;
    cells stay candidates while the step inclination atan2(|dz|, dxy) is
    below the threshold (compared via tangents), and marking stops at the
    first steep step. All scan points projecting into a candidate cell
    inherit candidacy.
    """
    n = len(scan)
    mask = np.zeros(n, dtype=bool)
    if n == 0 or not (img.point_index >= 0).any():
        return mask
    walk = _walk_kernel if HAVE_NUMBA else _walk_numpy
    cand = walk(img.point_index, np.ascontiguousarray(scan.xyz),
                math.tan(math.radians(angle_threshold_deg)))
    in_img = img.point_rows >= 0
    mask[in_img] = cand[img.point_rows[in_img], img.point_cols[in_img]]
    return mask


def _fit_plane(pts: np.ndarray):
    """Least-squares plane via covariance eigendecomposition.

    Returns (unit normal with positive z, offset) or None when the points
    span fewer than two directions or the plane is near-vertical.
    """
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    w, v = np.linalg.eigh(cov)
    if w[1] < 1e-9:
        return None
    normal = v[:, 0]
    if abs(normal[2]) < 1e-6:
        return None
    if normal[2] < 0:
        normal = -normal
    return normal, float(normal @ mean)


def _sector_ids(xyz: np.ndarray, cfg: GroundSegConfig) -> np.ndarray:
    half = cfg.footprint / 2.0
    ix = np.clip(np.floor((xyz[:, 0] + half) / (cfg.footprint / cfg.sectors_x)),
                 0, cfg.sectors_x - 1).astype(np.int64)
    iy = np.clip(np.floor((xyz[:, 1] + half) / (cfg.footprint / cfg.sectors_y)),
                 0, cfg.sectors_y - 1).astype(np.int64)
    return ix * cfg.sectors_y + iy


def fit_ground_model(scan: PointCloud, candidates: np.ndarray,
                     cfg: GroundSegConfig):
    """Fit per-sector planes to candidates and classify them.

    Returns (ground_mask, GroundModel). Sectors with too few candidates
    borrow the nearest fitted sector's plane; sectors whose candidates are
    degenerate (collinear or near-vertical) mark no ground.
    """
    n_sect = cfg.sectors_x * cfg.sectors_y
    normals = np.full((n_sect, 3), np.nan)
    offsets = np.full(n_sect, np.nan)
    has_plane = np.zeros(n_sect, dtype=bool)
    ground = np.zeros(len(scan), dtype=bool)

    xyz = scan.xyz
    cand_idx = np.nonzero(candidates)[0]
    if len(cand_idx) == 0:
        return ground, GroundModel(normals, offsets, has_plane,
                                   cfg.sectors_x, cfg.sectors_y, cfg.footprint)
    sect_cand = _sector_ids(xyz[cand_idx], cfg)

    # group candidate indices per sector in one radix pass
    order = np.argsort(sect_cand.astype(np.uint16), kind="stable")
    sorted_sid = sect_cand[order]
    uniq_sid, starts = np.unique(sorted_sid, return_index=True)
    bounds = np.append(starts[1:], len(order))
    groups = {int(s): cand_idx[order[lo:hi]]
              for s, lo, hi in zip(uniq_sid, starts, bounds)}

    poisoned = set()
    for sid in range(n_sect):
        idx = groups.get(sid, ())
        if len(idx) < cfg.min_sector_candidates:
            continue
        pts = xyz[idx]
        if len(pts) > cfg.max_fit_points:
            # plane fitting saturates quickly; an even subsample keeps the
            # iteration cost bounded while the final test sees every point
            pts = pts[:: len(pts) // cfg.max_fit_points + 1]
        k = max(3, int(np.ceil(cfg.seed_fraction * len(pts))))
        seeds = pts[np.argpartition(pts[:, 2], k - 1)[:k]]
        work = seeds
        plane = None
        for _ in range(cfg.iterations):
            fit = _fit_plane(work)
            if fit is None:
                plane = None
                poisoned.add(sid)
                break
            plane = fit
            dist = np.abs(pts @ plane[0] - plane[1])
            work = pts[dist < cfg.plane_dist_threshold]
            if len(work) < 3:
                break
        if plane is not None:
            normals[sid] = plane[0]
            offsets[sid] = plane[1]
            has_plane[sid] = True

    # neighbor fallback for under-populated sectors (not degenerate ones)
    fitted = np.nonzero(has_plane)[0]
    if len(fitted):
        fx, fy = fitted // cfg.sectors_y, fitted % cfg.sectors_y
        for sid in np.unique(sect_cand):
            if has_plane[sid] or sid in poisoned:
                continue
            gx, gy = sid // cfg.sectors_y, sid % cfg.sectors_y
            d2 = (fx - gx) ** 2 + (fy - gy) ** 2
            src = fitted[np.argmin(d2)]
            normals[sid] = normals[src]
            offsets[sid] = offsets[src]
            has_plane[sid] = True

    usable = has_plane[sect_cand]
    idx = cand_idx[usable]
    if len(idx):
        sid = sect_cand[usable]
        dist = np.abs(np.einsum("ij,ij->i", xyz[idx], normals[sid]) - offsets[sid])
        ground[idx] = dist <= cfg.plane_dist_threshold
    return ground, GroundModel(normals, offsets, has_plane,
                               cfg.sectors_x, cfg.sectors_y, cfg.footprint)


def refine_pca(scan: PointCloud, candidates: np.ndarray, cfg: GroundSegConfig):
    """Refine candidates into final (G, U) clouds; G u U partitions the scan."""
    ground_mask, _ = fit_ground_model(scan, candidates, cfg)
    return scan.select(ground_mask), scan.select(~ground_mask)


def segment_ground_mask(scan: PointCloud, cfg: GroundSegConfig) -> np.ndarray:
    """Boolean ground mask over the scan (full two-step segmentation)."""
    if len(scan) == 0:
        return np.zeros(0, dtype=bool)
    img = build_range_image(scan, cfg.rows, cfg.cols,
                            cfg.fov_up_deg, cfg.fov_down_deg)
    cand = extract_candidates(img, scan, cfg.angle_threshold_deg)
    ground_mask, _ = fit_ground_model(scan, cand, cfg)
    return ground_mask


def segment_ground(scan: PointCloud, cfg: GroundSegConfig = None):
    """Split a scan into (G, U); every point lands in exactly one side."""
    cfg = cfg or GroundSegConfig()
    mask = segment_ground_mask(scan, cfg)
    return scan.select(mask), scan.select(~mask)


def warmup_kernels():
    """Trigger JIT compilation outside any timed section (no-op without numba)."""
    if HAVE_NUMBA:
        pts = np.array([[5.0, 0.0, -1.0], [6.0, 0.1, -1.0], [6.0, 0.1, 1.0]])
        _, index_img, _, _ = _project_kernel(pts, 4, 4, 2.0, -24.8)
        _walk_kernel(index_img, pts, 0.18)
