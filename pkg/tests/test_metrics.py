import itertools
import math

import numpy as np
import pytest

from cvis_forge.errors import MissingScores
from cvis_forge.geometry import Pose
from cvis_forge.metrics import (
    RECALL_POINTS,
    A3dpConfig,
    Detection,
    a3dp,
    ap_from_ranking,
    average_precision,
    iou_2d,
    pose_error,
    shape_similarity,
)
from cvis_forge.rle import rle_encode
from cvis_forge.template import Dimensions

DIMS = Dimensions(1.8, 1.5, 4.5)


def test_iou_examples():
    assert iou_2d((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert iou_2d((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert math.isclose(iou_2d((0, 0, 1, 1), (0.5, 0, 1.5, 1)), 1 / 3)


def test_iou_of_masks():
    a = np.zeros((10, 10), bool)
    b = np.zeros((10, 10), bool)
    a[2:6, 2:6] = True
    b[4:8, 2:6] = True
    assert math.isclose(iou_2d(rle_encode(a), rle_encode(b)), 8 / 24)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(score=float("nan"))
    with pytest.raises(ValueError):
        Detection(bbox2d=(5, 0, 1, 1))


def _box(i, shift=0.0):
    return (10.0 * i + shift, 0.0, 10.0 * i + 8 + shift, 8.0)


def test_perfect_detections():
    gts = [Detection(None, _box(i)) for i in range(4)]
    dets = [Detection(1.0, _box(i)) for i in range(4)]
    assert average_precision(dets, gts) == 1.0


def test_no_detections():
    assert average_precision([], [Detection(None, _box(0))]) == 0.0


def test_empty_conventions():
    assert average_precision([], []) == 1.0
    assert average_precision([Detection(0.5, _box(0))], []) == 0.0


def test_hand_enumerated_ranking():
    gts = [Detection(None, _box(0)), Detection(None, _box(1))]
    dets = [Detection(0.9, _box(0)), Detection(0.8, _box(5)), Detection(0.7, _box(1))]
    # precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1: 51 recall points at 1, 50 at 2/3
    assert math.isclose(average_precision(dets, gts, iou_thresholds=(0.5,)), (51 + 50 * 2 / 3) / 101)


def _oracle_ap(tp, n_gt):
    if n_gt == 0:
        return 0.0 if len(tp) else 1.0
    prefix = []
    hits = 0
    for i, t in enumerate(tp, 1):
        hits += t
        prefix.append((hits / n_gt, hits / i))
    total = 0.0
    for r in RECALL_POINTS:
        ok = [p for rec, p in prefix if rec >= r]
        total += max(ok) if ok else 0.0
    return total / len(RECALL_POINTS)


def test_ap_matches_oracle_on_every_small_ranking():
    for n in range(7):
        for tp in itertools.product((False, True), repeat=n):
            for n_gt in range(max(sum(tp), 0), 7):
                assert math.isclose(ap_from_ranking(np.array(tp, bool), n_gt), _oracle_ap(tp, n_gt), abs_tol=1e-12)


def _oracle_match(dets, gts, thr):
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    free = list(range(len(gts)))
    tp = []
    for i in order:
        scores = [(iou_2d(dets[i].bbox2d, gts[j].bbox2d), -j) for j in free]
        best = max(scores, default=(0.0, 0))
        if best[0] >= thr:
            free.remove(-best[1])
            tp.append(True)
        else:
            tp.append(False)
    return tp


def test_average_precision_matches_oracle_on_random_small_cases():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n_gt = int(rng.integers(0, 5))
        n_det = int(rng.integers(0, 7))
        gts = [Detection(None, _box(int(rng.integers(0, 4)))) for _ in range(n_gt)]
        dets = [Detection(float(rng.choice([0.3, 0.5, 0.9])), _box(int(rng.integers(0, 4)), rng.uniform(-3, 3)))
                for _ in range(n_det)]
        thresholds = (0.5, 0.75)
        expect = np.mean([_oracle_ap(_oracle_match(dets, gts, t), n_gt) for t in thresholds])
        assert math.isclose(average_precision(dets, gts, thresholds), expect, abs_tol=1e-12)


def test_map_monotone_in_threshold():
    rng = np.random.default_rng(1)
    gts = [Detection(None, _box(i)) for i in range(5)]
    dets = [Detection(float(rng.random()), _box(i, rng.uniform(-2, 2))) for i in range(5)]
    aps = [average_precision(dets, gts, (t,)) for t in np.linspace(0.5, 0.95, 10)]
    assert all(b <= a for a, b in zip(aps, aps[1:]))
    assert all(0 <= a <= 1 for a in aps)


def test_missing_scores():
    with pytest.raises(MissingScores):
        average_precision([Detection(None, _box(0))], [Detection(None, _box(0))])


def test_pose_error_examples():
    p = Pose.from_euler(0.4, translation=(3, 4, 0))
    same = Detection(pose=p, dimensions=DIMS)
    assert pose_error(same, same) == (0.0, 0.0, 1.0)
    flipped = Detection(pose=Pose.from_euler(0.4 + math.pi, translation=(3, 4, 0)), dimensions=DIMS)
    assert math.isclose(pose_error(same, flipped)[1], math.pi, abs_tol=1e-9)
    assert math.isclose(shape_similarity(Dimensions(2, 2, 2), Dimensions(1, 1, 1)), 1 / 8)


def _pose_pairs(n=6, offset=(0.0, 0.0, 0.0), seed=0):
    rng = np.random.default_rng(seed)
    gts, ests = [], []
    for _ in range(n):
        p = Pose.from_euler(rng.uniform(-3, 3), translation=(rng.uniform(-20, 20), rng.uniform(5, 40), 0.7))
        gts.append(Detection(None, pose=p, dimensions=DIMS))
        moved = Pose(p.rotation, p.translation + np.array(offset))
        ests.append(Detection(float(rng.random()), pose=moved, dimensions=DIMS))
    return ests, gts


@pytest.mark.parametrize("mode", ["abs", "rel"])
def test_a3dp_perfect(mode):
    ests, gts = _pose_pairs()
    r = a3dp(ests, gts, A3dpConfig.default(mode))
    assert r.mean == r.c_l == r.c_s == 1.0


def test_a3dp_ten_meters_off():
    ests, gts = _pose_pairs(offset=(10.0, 0.0, 0.0))
    r = a3dp(ests, gts, A3dpConfig.default("abs"))
    assert r.mean == r.c_l == r.c_s == 0.0


def test_a3dp_levels_are_monotone():
    rng = np.random.default_rng(3)
    ests, gts = _pose_pairs(n=20, seed=3)
    noisy = []
    for e in ests:
        pose = Pose.from_euler(0.05 * rng.normal(), translation=rng.normal(0, 0.7, 3)).compose(e.pose)
        noisy.append(Detection(e.score, pose=pose, dimensions=Dimensions(1.8 * rng.uniform(0.8, 1.0), 1.5, 4.5)))
    r = a3dp(noisy, gts)
    assert all(b <= a for a, b in zip(r.per_level, r.per_level[1:]))
    assert 0 < r.mean < 1 and r.c_l == r.per_level[0] and r.c_s == r.per_level[5]


def test_a3dp_mode_consistency_at_unit_distance():
    rng = np.random.default_rng(4)
    gts, ests = [], []
    for i in range(8):
        d = rng.normal(size=3)
        p = Pose.from_euler(rng.uniform(-3, 3), translation=d / np.linalg.norm(d))
        gts.append(Detection(None, pose=p, dimensions=DIMS))
        off = Pose.from_euler(rng.normal(0, 0.2), translation=rng.normal(0, 0.8, 3))
        ests.append(Detection(float(rng.random()), pose=off.compose(p), dimensions=DIMS))
    levels = A3dpConfig.default_levels("abs")
    abs_r = a3dp(ests, gts, A3dpConfig(levels, "abs"))
    rel_r = a3dp(ests, gts, A3dpConfig(levels, "rel"))
    assert abs_r == rel_r


def test_a3dp_relative_scales_with_distance():
    # 1 m error passes a 0.1-relative threshold at 20 m but not at 5 m
    near = Detection(None, pose=Pose.from_euler(0, translation=(0, 5, 0)), dimensions=DIMS)
    far = Detection(None, pose=Pose.from_euler(0, translation=(0, 20, 0)), dimensions=DIMS)
    shift = lambda g: Detection(1.0, pose=Pose(g.pose.rotation, g.pose.translation + [1, 0, 0]), dimensions=DIMS)
    cfg = A3dpConfig.default("rel")
    assert a3dp([shift(far)], [far], cfg).c_l == 1.0
    assert a3dp([shift(near)], [near], cfg).c_l == 0.0


def test_a3dp_requires_scores():
    _, gts = _pose_pairs(n=2)
    with pytest.raises(MissingScores):
        a3dp([Detection(None, pose=gts[0].pose, dimensions=DIMS)], gts)


def test_a3dp_config_validation_and_dict():
    cfg = A3dpConfig.default("rel")
    assert A3dpConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        A3dpConfig(levels=cfg.levels[::-1])
    with pytest.raises(ValueError):
        A3dpConfig(levels=cfg.levels[:5])
    with pytest.raises(ValueError):
        A3dpConfig(mode="both")
