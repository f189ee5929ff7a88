# # Cross-checking the online pipeline against a brute-force replay
#
# The simulator ships an independent classifier that replays a sequence
# with plain dict/set bookkeeping, walks every point of every frame, and
# recomputes all statistics from raw frame sets, with none of the online
# pipeline's caching or de-duplication. On identical inputs the per-voxel
# verdicts must agree exactly; anything else is a bug in one of the two.

from pathlib import Path

from mapclean import (OnlinePipeline, RemovalConfig, load_scenario,
                      oracle_classify, render_sequence)
from mapclean.simulate import ground_mask_from_labels

root = Path(__file__).resolve().parent.parent / "scenarios"

for name in ("suddenly-appear", "suddenly-disappear", "continuous-mover",
             "crowd"):
    frames = render_sequence(load_scenario(root / f"{name}.yaml"))

    # both sides consume the simulator's exact labels, isolating the
    # classification logic from segmentation error
    pipe = OnlinePipeline(voxel_size=0.2, removal_cfg=RemovalConfig())
    for f, fr in enumerate(frames):
        pipe.process(fr.scan, fr.pose, f,
                     ground_mask=ground_mask_from_labels(fr.labels))
    verdict = pipe.classification()

    reference = oracle_classify(frames, RemovalConfig(), voxel_size=0.2)

    mismatches = sum(1 for k in set(verdict) | set(reference)
                     if verdict.get(k) != reference.get(k))
    by_state = {s: sum(1 for v in verdict.values() if v == s)
                for s in ("static", "dynamic", "restored")}
    print(f"{name:20s} voxels={len(verdict):5d} {by_state} "
          f"mismatches={mismatches}")
    assert mismatches == 0
