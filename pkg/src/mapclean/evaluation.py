"""Voxel-wise preservation/rejection scoring and the runtime benchmark.

Ground truth is built by accumulating every labeled world-frame point into
an evaluation grid (0.2 m by default): a voxel containing at least one
moving-class point is dynamic ground truth, all other occupied voxels are
static ground truth. A cleaned map is then scored by which ground-truth
voxels still contain points.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .io import PointCloud
from .voxmap import pack_keys, voxel_keys

# moving-class semantic labels used as dynamic ground truth by default
MOVING_CLASSES = frozenset(range(252, 260))

EVAL_VOXEL_SIZE = 0.2


@dataclass
class EvalReport:
    pr: float                    # None when no static ground truth exists
    rr: float                    # None when no dynamic ground truth exists
    f1: float                    # None when either rate is undefined
    static_voxels_total: int
    static_voxels_preserved: int
    dynamic_voxels_total: int
    dynamic_voxels_rejected: int
    eval_voxel_size: float = EVAL_VOXEL_SIZE

    def triple(self) -> str:
        """PR[%]/RR[%]/F1 in benchmark-table style; dashes mark degenerate values."""
        pr = "-" if self.pr is None else f"{100.0 * self.pr:.3f}"
        rr = "-" if self.rr is None else f"{100.0 * self.rr:.3f}"
        f1 = "-" if self.f1 in (None, 0.0) else f"{self.f1:.3f}"
        return f"{pr}/{rr}/{f1}"

    def to_dict(self) -> dict:
        return {
            "pr": self.pr, "rr": self.rr, "f1": self.f1,
            "static_voxels_total": self.static_voxels_total,
            "static_voxels_preserved": self.static_voxels_preserved,
            "dynamic_voxels_total": self.dynamic_voxels_total,
            "dynamic_voxels_rejected": self.dynamic_voxels_rejected,
            "eval_voxel_size": self.eval_voxel_size,
        }


def build_ground_truth(clouds_world, moving_classes=MOVING_CLASSES,
                       voxel_size: float = EVAL_VOXEL_SIZE):
    """Accumulate labeled world-frame clouds into (static, dynamic) voxel sets.

    Every cloud needs semantic labels; a voxel seeing any moving-class point
    is dynamic ground truth.
    """
    moving = np.array(sorted(moving_classes), dtype=np.uint16)
    occupied = set()
    dynamic = set()
    for cloud in clouds_world:
        if cloud.semantic is None:
            raise ContractError("ground truth needs per-point semantic labels")
        packed = pack_keys(voxel_keys(cloud.xyz, voxel_size))
        occupied.update(np.unique(packed).tolist())
        is_moving = np.isin(cloud.semantic, moving)
        if is_moving.any():
            dynamic.update(np.unique(packed[is_moving]).tolist())
    return occupied - dynamic, dynamic


def score(clean_map: PointCloud, static_gt: set, dynamic_gt: set,
          voxel_size: float = EVAL_VOXEL_SIZE) -> EvalReport:
    """Voxel-wise preservation rate, rejection rate and their harmonic mean.

    PR = fraction of static-GT voxels still containing a point; RR = fraction
    of dynamic-GT voxels containing none. An empty ground-truth side leaves
    the corresponding rate undefined (None) and omits F1.
    """
    if len(clean_map):
        clean = set(np.unique(pack_keys(voxel_keys(clean_map.xyz, voxel_size))).tolist())
    else:
        clean = set()
    preserved = len(static_gt & clean)
    surviving_dynamic = len(dynamic_gt & clean)
    rejected = len(dynamic_gt) - surviving_dynamic

    pr = preserved / len(static_gt) if static_gt else None
    rr = rejected / len(dynamic_gt) if dynamic_gt else None
    if pr is None or rr is None:
        f1 = None
    elif pr + rr > 0:
        f1 = 2.0 * pr * rr / (pr + rr)
    else:
        f1 = 0.0
    return EvalReport(pr, rr, f1,
                      static_voxels_total=len(static_gt),
                      static_voxels_preserved=preserved,
                      dynamic_voxels_total=len(dynamic_gt),
                      dynamic_voxels_rejected=rejected,
                      eval_voxel_size=voxel_size)


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# per-frame runtime benchmark

PHASES = ("ground_segmentation", "map_management", "dynamic_removal", "total")
_PHASE_ATTR = {"ground_segmentation": "seg_ms", "map_management": "map_ms",
               "dynamic_removal": "removal_ms", "total": "total_ms"}


@dataclass
class BenchReport:
    frames: int
    stats: dict = field(default_factory=dict)  # phase -> {mean, median, p95}

    def rows(self):
        for phase in PHASES:
            if phase in self.stats:
                s = self.stats[phase]
                yield phase, s["mean_ms"], s["median_ms"], s["p95_ms"]

    def table(self) -> str:
        lines = [f"{'phase':<20} {'mean_ms':>9} {'median_ms':>10} {'p95_ms':>9}"]
        for phase, mean, median, p95 in self.rows():
            lines.append(f"{phase:<20} {mean:>9.2f} {median:>10.2f} {p95:>9.2f}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase", "mean_ms", "median_ms", "p95_ms"])
            for row in self.rows():
                writer.writerow([row[0]] + [f"{v:.4f}" for v in row[1:]])


def summarize_reports(reports) -> BenchReport:
    """Aggregate per-frame timing reports into the three-phase table."""
    reports = list(reports)
    if not reports:
        return BenchReport(frames=0)
    stats = {}
    for phase, attr in _PHASE_ATTR.items():
        vals = [getattr(r, attr) for r in reports]
        vals_sorted = sorted(vals)
        p95 = vals_sorted[min(len(vals) - 1, int(np.ceil(0.95 * len(vals))) - 1)]
        stats[phase] = {
            "mean_ms": statistics.fmean(vals),
            "median_ms": statistics.median(vals),
            "p95_ms": p95,
        }
    return BenchReport(frames=len(reports), stats=stats)


def benchmark(frames, pipeline) -> BenchReport:
    """Drive (frame_index, cloud, pose) tuples through a pipeline and time it."""
    for f, cloud, pose in frames:
        pipeline.process(cloud, pose, f)
    return summarize_reports(pipeline.reports)
