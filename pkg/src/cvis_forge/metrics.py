"""Detection mAP and joint 3D pose precision (A3DP)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingScores
from .geometry import Pose, rotation_distance
from .rle import RLE, rle_decode
from .template import Dimensions

COCO_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class Detection:
    """A prediction or a ground-truth instance.

    ``image_id`` scopes matching; ground truths ignore ``score``.
    """

    score: float | None = 1.0
    bbox2d: tuple | None = None
    mask: RLE | None = None
    pose: Pose | None = None
    dimensions: Dimensions | None = None
    shape_id: str | None = None
    image_id: str | int = 0

    def __post_init__(self):
        if self.score is not None and not math.isfinite(self.score):
            raise ValueError("score must be finite")
        if self.bbox2d is not None:
            x0, y0, x1, y1 = self.bbox2d
            if x1 < x0 or y1 < y0:
                raise ValueError(f"bbox {self.bbox2d} is not well ordered")


def iou_2d(a, b) -> float:
    """IoU of two ``(xmin, ymin, xmax, ymax)`` boxes or two RLE masks."""
    if isinstance(a, RLE) or isinstance(b, RLE):
        ma, mb = rle_decode(a), rle_decode(b)
        if ma.shape != mb.shape:
            raise ValueError("masks differ in size")
        union = np.count_nonzero(ma | mb)
        return float(np.count_nonzero(ma & mb) / union) if union else 0.0
    ax0, ay0, ax1, ay1 = map(float, a)
    bx0, by0, bx1, by1 = map(float, b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def ap_from_ranking(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from TP flags already sorted by score."""
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        return 0.0 if tp.size else 1.0
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    return float(np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0).mean())


def _ranked(dets) -> list:
    if any(d.score is None for d in dets):
        raise MissingScores("every prediction needs a score")
    order = np.argsort(-np.array([d.score for d in dets], dtype=np.float64), kind="stable")
    return [dets[i] for i in order]


def greedy_match(dets, gts, quality) -> np.ndarray:
    """TP flags for score-ranked ``dets``.

    ``quality(det, gt)`` returns ``None`` when the pair does not match and
    otherwise a value to maximize; each ground truth is used once and ties
    go to the earlier ground truth.
    """
    used = np.zeros(len(gts), bool)
    tp = np.zeros(len(dets), bool)
    for i, d in enumerate(dets):
        best, best_q = -1, -math.inf
        for j, g in enumerate(gts):
            if used[j] or g.image_id != d.image_id:
                continue
            q = quality(d, g)
            if q is not None and q > best_q:
                best, best_q = j, q
        if best >= 0:
            used[best] = True
            tp[i] = True
    return tp


def _region(d: Detection, use_masks: bool):
    return d.mask if use_masks else d.bbox2d


def average_precision(dets, gts, iou_thresholds=COCO_IOU_THRESHOLDS, use_masks: bool = False) -> float:
    """COCO-style mAP over the IoU thresholds (boxes, or masks with ``use_masks``)."""
    ranked = _ranked(list(dets))
    gts = list(gts)
    ious = {}

    def iou(d, g):
        key = (id(d), id(g))
        if key not in ious:
            ious[key] = iou_2d(_region(d, use_masks), _region(g, use_masks))
        return ious[key]

    aps = []
    for thr in iou_thresholds:
        tp = greedy_match(ranked, gts, lambda d, g: (v if (v := iou(d, g)) >= thr else None))
        aps.append(ap_from_ranking(tp, len(gts)))
    return float(np.mean(aps))


def shape_similarity(a: Dimensions, b: Dimensions) -> float:
    """3D IoU of two boxes sharing center and axes."""
    da, db = a.as_array(), b.as_array()
    inter = float(np.prod(np.minimum(da, db)))
    return inter / (float(np.prod(da)) + float(np.prod(db)) - inter)


def pose_error(est: Detection, gt: Detection) -> tuple[float, float, float]:
    """``(translation distance, rotation angle, shape similarity)``."""
    trans = float(np.linalg.norm(est.pose.translation - gt.pose.translation))
    rot = rotation_distance(est.pose, gt.pose)
    sim = shape_similarity(est.dimensions, gt.dimensions) if est.dimensions and gt.dimensions else 1.0
    return trans, rot, sim


@dataclass(frozen=True)
class A3dpConfig:
    """Ten joint (translation, rotation, shape) thresholds from loose to strict."""

    levels: tuple = field(default_factory=lambda: A3dpConfig.default_levels("abs"))
    mode: str = "abs"
    loose_index: int = 0
    strict_index: int = 5

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.shape != (10, 3):
            raise ValueError("A3DP needs 10 levels of (translation, rotation, shape)")
        if self.mode not in ("abs", "rel"):
            raise ValueError("mode must be 'abs' or 'rel'")
        if np.any(np.diff(lv[:, 0]) > 0) or np.any(np.diff(lv[:, 1]) > 0) or np.any(np.diff(lv[:, 2]) < 0):
            raise ValueError("levels must tighten monotonically")
        if not (0 <= self.loose_index < 10 and 0 <= self.strict_index < 10):
            raise ValueError("level indices must be in 0..9")

    @staticmethod
    def default_levels(mode: str = "abs") -> tuple:
        trans = np.linspace(2.8, 0.1, 10) if mode == "abs" else np.linspace(0.10, 0.01, 10)
        rot = np.linspace(math.pi / 6, math.pi / 60, 10)
        shape = np.linspace(0.5, 0.95, 10)
        return tuple((float(t), float(r), float(s)) for t, r, s in zip(trans, rot, shape))

    @classmethod
    def default(cls, mode: str = "abs") -> "A3dpConfig":
        return cls(cls.default_levels(mode), mode)

    def to_dict(self) -> dict:
        return {"levels": [list(l) for l in self.levels], "mode": self.mode,
                "loose_index": self.loose_index, "strict_index": self.strict_index}

    @classmethod
    def from_dict(cls, d: dict) -> "A3dpConfig":
        mode = d.get("mode", "abs")
        levels = tuple(tuple(map(float, l)) for l in d["levels"]) if "levels" in d else cls.default_levels(mode)
        return cls(levels, mode, int(d.get("loose_index", 0)), int(d.get("strict_index", 5)))


@dataclass(frozen=True)
class A3dpResult:
    mean: float
    c_l: float
    c_s: float
    per_level: tuple


def a3dp(estimates, gts, cfg: A3dpConfig = A3dpConfig(), camera_centers=None) -> A3dpResult:
    """Per-level AP of joint pose matches, averaged over levels.

    In ``rel`` mode the translation threshold of a level is multiplied by the
    ground truth's distance to its camera (``camera_centers[image_id]``,
    default the origin).
    """
    ranked = _ranked(list(estimates))
    gts = list(gts)
    errs = {}

    def err(d, g):
        key = (id(d), id(g))
        if key not in errs:
            errs[key] = pose_error(d, g)
        return errs[key]

    def distance(g):
        c = np.zeros(3) if camera_centers is None else np.asarray(camera_centers.get(g.image_id, np.zeros(3)))
        return float(np.linalg.norm(g.pose.translation - c))

    per_level = []
    for t_thr, r_thr, s_thr in cfg.levels:
        def quality(d, g, t_thr=t_thr, r_thr=r_thr, s_thr=s_thr):
            t, r, s = err(d, g)
            limit = t_thr * distance(g) if cfg.mode == "rel" else t_thr
            return -t if (t <= limit and r <= r_thr and s >= s_thr) else None
        per_level.append(ap_from_ranking(greedy_match(ranked, gts, quality), len(gts)))
    return A3dpResult(float(np.mean(per_level)), per_level[cfg.loose_index], per_level[cfg.strict_index],
                      tuple(per_level))
