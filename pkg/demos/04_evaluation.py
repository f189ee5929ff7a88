# # Scoring a cleaned map
#
# Evaluation is voxel-wise at 0.2 m: accumulate every labeled point of the
# sequence into a grid; a voxel containing any moving-class point is dynamic
# ground truth, the rest are static ground truth. The cleaned map is scored
# by preservation rate (static voxels that kept a point), rejection rate
# (dynamic voxels emptied out) and their harmonic mean.

from pathlib import Path

import numpy as np

from mapclean import (OnlinePipeline, PointCloud, RemovalConfig,
                      build_ground_truth, export_static_map, ground_cfg_for,
                      load_scenario, render_sequence, score,
                      transform_to_world)
from mapclean.simulate import semantic_from_labels

root = Path(__file__).resolve().parent.parent / "scenarios"
scenario = load_scenario(root / "suddenly-appear.yaml")
frames = render_sequence(scenario)

# ground truth from the labeled world-frame accumulation
clouds = []
for fr in frames:
    semantic, _ = semantic_from_labels(fr.labels)
    clouds.append(transform_to_world(
        PointCloud(fr.scan.xyz.copy(), semantic=semantic), fr.pose))
static_gt, dynamic_gt = build_ground_truth(clouds)
print(f"ground truth: {len(static_gt)} static voxels, "
      f"{len(dynamic_gt)} dynamic voxels")

# score the raw accumulation first: everything preserved, nothing rejected
raw = PointCloud(np.vstack([c.xyz for c in clouds]))
print("raw map           PR/RR/F1 =", score(raw, static_gt, dynamic_gt).triple())

# now the pipeline's cleaned map
pipe = OnlinePipeline(voxel_size=0.2, removal_cfg=RemovalConfig(),
                      ground_cfg=ground_cfg_for(scenario))
for f, fr in enumerate(frames):
    pipe.process(fr.scan, fr.pose, f)
cleaned = export_static_map(pipe.state)
report = score(cleaned, static_gt, dynamic_gt)
print("cleaned map       PR/RR/F1 =", report.triple())
print(f"  static voxels preserved: {report.static_voxels_preserved}"
      f"/{report.static_voxels_total}")
print(f"  dynamic voxels rejected: {report.dynamic_voxels_rejected}"
      f"/{report.dynamic_voxels_total}")

# over-deleting can only trade preservation for rejection: cut away half
# the world and watch PR fall while RR stays pinned at 100
keep = cleaned.xyz[:, 0] < 0.0
print("everything at x >= 0 deleted:",
      score(PointCloud(cleaned.xyz[keep]), static_gt, dynamic_gt).triple())
