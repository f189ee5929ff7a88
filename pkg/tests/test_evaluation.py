import numpy as np
import pytest

from mapclean.errors import ContractError
from mapclean.evaluation import (BenchReport, build_ground_truth, score,
                                 summarize_reports)
from mapclean.io import PointCloud
from mapclean.removal import FrameReport
from mapclean.voxmap import pack_keys, voxel_keys


def centers(keys, s=0.2):
    return (np.asarray(keys, dtype=np.float64) + 0.5) * s


def labeled(keys, classes):
    return PointCloud(centers(keys), semantic=np.asarray(classes, np.uint16))


def packed(keys):
    return set(pack_keys(np.asarray(keys, dtype=np.int64)).tolist())


STATIC_KEYS = [(i, 0, 0) for i in range(10)]
DYNAMIC_KEYS = [(i, 5, 0) for i in range(10)]


def simple_gt():
    cloud = labeled(STATIC_KEYS + DYNAMIC_KEYS, [40] * 10 + [252] * 10)
    return build_ground_truth([cloud])


def test_gt_all_static():
    cloud = labeled(STATIC_KEYS, [40] * 10)
    static, dynamic = build_ground_truth([cloud])
    assert len(dynamic) == 0
    assert static == packed(STATIC_KEYS)


def test_gt_mixed_voxel_is_dynamic():
    # two points in one voxel, one of them moving
    pts = np.array([[0.05, 0.05, 0.05], [0.15, 0.12, 0.1]])
    cloud = PointCloud(pts, semantic=np.array([40, 252], np.uint16))
    static, dynamic = build_ground_truth([cloud])
    assert len(static) == 0
    assert len(dynamic) == 1


def test_gt_requires_labels():
    with pytest.raises(ContractError):
        build_ground_truth([PointCloud(np.zeros((1, 3)))])


def test_score_clean_equals_raw():
    static, dynamic = simple_gt()
    raw = PointCloud(centers(STATIC_KEYS + DYNAMIC_KEYS))
    rep = score(raw, static, dynamic)
    assert rep.pr == 1.0
    assert rep.rr == 0.0
    assert rep.f1 == 0.0
    assert rep.triple() == "100.000/0.000/-"


def test_score_perfect_removal():
    static, dynamic = simple_gt()
    clean = PointCloud(centers(STATIC_KEYS))
    rep = score(clean, static, dynamic)
    assert (rep.pr, rep.rr, rep.f1) == (1.0, 1.0, 1.0)
    assert rep.triple() == "100.000/100.000/1.000"


def test_score_equal_rates_harmonic_mean():
    static, dynamic = simple_gt()
    clean = PointCloud(centers(STATIC_KEYS[:9] + DYNAMIC_KEYS[:1]))
    rep = score(clean, static, dynamic)
    assert rep.pr == pytest.approx(0.9)
    assert rep.rr == pytest.approx(0.9)
    assert rep.f1 == pytest.approx(0.9)


def test_score_undefined_rates():
    static, dynamic = simple_gt()
    rep = score(PointCloud(centers(STATIC_KEYS)), static, set())
    assert rep.rr is None and rep.f1 is None
    assert rep.pr == 1.0
    rep = score(PointCloud(np.zeros((0, 3))), set(), dynamic)
    assert rep.pr is None and rep.f1 is None


def test_score_monotone_under_deletion():
    rng = np.random.default_rng(0)
    static, dynamic = simple_gt()
    pts = centers(STATIC_KEYS + DYNAMIC_KEYS)
    keep = np.ones(len(pts), dtype=bool)
    prev = score(PointCloud(pts), static, dynamic)
    for _ in range(20):
        alive = np.nonzero(keep)[0]
        if not len(alive):
            break
        keep[rng.choice(alive)] = False
        rep = score(PointCloud(pts[keep]), static, dynamic)
        assert rep.pr <= prev.pr
        assert rep.rr >= prev.rr
        prev = rep


def test_f1_between_rates():
    rng = np.random.default_rng(1)
    static, dynamic = simple_gt()
    pts = centers(STATIC_KEYS + DYNAMIC_KEYS)
    for _ in range(30):
        keep = rng.random(len(pts)) < rng.uniform(0.2, 0.9)
        rep = score(PointCloud(pts[keep]), static, dynamic)
        if rep.f1 is None or rep.pr + rep.rr == 0:
            continue
        assert min(rep.pr, rep.rr) - 1e-12 <= rep.f1 <= max(rep.pr, rep.rr) + 1e-12


def test_report_counts():
    static, dynamic = simple_gt()
    clean = PointCloud(centers(STATIC_KEYS[:7] + DYNAMIC_KEYS[:2]))
    rep = score(clean, static, dynamic)
    assert rep.static_voxels_total == 10
    assert rep.static_voxels_preserved == 7
    assert rep.dynamic_voxels_total == 10
    assert rep.dynamic_voxels_rejected == 8
    d = rep.to_dict()
    assert d["pr"] == rep.pr and d["eval_voxel_size"] == 0.2


# -- benchmark aggregation -----------------------------------------------------

def fake_report(frame, seg, mp, rem):
    return FrameReport(frame=frame, seg_ms=seg, map_ms=mp, removal_ms=rem,
                       total_ms=seg + mp + rem)


def test_bench_empty():
    rep = summarize_reports([])
    assert rep.frames == 0
    assert list(rep.rows()) == []


def test_bench_stats_and_csv(tmp_path):
    reports = [fake_report(i, 10.0 + i, 5.0, 2.0) for i in range(10)]
    rep = summarize_reports(reports)
    assert rep.frames == 10
    assert rep.stats["ground_segmentation"]["mean_ms"] == pytest.approx(14.5)
    assert rep.stats["map_management"]["median_ms"] == pytest.approx(5.0)
    path = tmp_path / "bench.csv"
    rep.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "phase,mean_ms,median_ms,p95_ms"
    assert len(lines) == 5
    # phase means sum to the total mean
    total = rep.stats["total"]["mean_ms"]
    parts = sum(rep.stats[p]["mean_ms"] for p in
                ("ground_segmentation", "map_management", "dynamic_removal"))
    assert parts <= total + 1e-9
