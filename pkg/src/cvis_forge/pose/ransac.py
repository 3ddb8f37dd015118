"""Robust pose from noisy correspondences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NoConsensus, TooFewPoints
from ..geometry import CameraExtrinsics, CameraIntrinsics, Pose
from .solvers import (
    MIN_POINTS,
    CorrespondenceSet,
    DegenerateConfiguration,
    epnp,
    minimal_solve,
    refine_pose,
    reprojection_errors,
    rms,
)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_threshold: float = 2.0
    min_sample: int = 4
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.min_sample != 4:
            raise ValueError("min_sample is fixed at 4")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "inlier_threshold": self.inlier_threshold,
                "min_sample": self.min_sample, "confidence": self.confidence, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RansacConfig":
        return cls(**{k: d[k] for k in ("iterations", "inlier_threshold", "min_sample", "confidence", "seed") if k in d})


@dataclass
class PoseEstimate:
    pose: Pose  # canonical -> camera
    inlier_mask: np.ndarray
    rms_reprojection: float
    iterations_used: int

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())


def adaptive_iterations(inlier_ratio: float, confidence: float, sample: int = 4) -> float:
    """Trials needed so that an all-inlier sample is drawn with ``confidence``."""
    p = inlier_ratio ** sample
    if p <= 0:
        return math.inf
    if p >= 1:
        return 1
    return math.log(1 - confidence) / math.log(1 - p)


def _canonical_order(cs: CorrespondenceSet) -> np.ndarray:
    keys = np.hstack([cs.pixels, cs.points]).T[::-1]
    return np.lexsort(keys)


def _fit_inliers(cs: CorrespondenceSet, mask: np.ndarray, k: CameraIntrinsics, init: Pose | None) -> Pose:
    sub = cs.subset(np.flatnonzero(mask))
    try:
        start = epnp(sub, k).pose
    except DegenerateConfiguration:
        if init is None:
            raise
        start = init
    return refine_pose(start, sub, k)


def ransac_pnp(cs: CorrespondenceSet, k: CameraIntrinsics, cfg: RansacConfig = RansacConfig()) -> PoseEstimate:
    """RANSAC over 4-point P3P hypotheses, then EPnP and refinement on the consensus set.

    Correspondences are first put into a canonical order and then shuffled
    by the seed, so the estimate does not depend on the input order.
    """
    n = len(cs)
    if n < MIN_POINTS:
        raise TooFewPoints(f"need >= {MIN_POINTS} correspondences, got {n}")
    rng = np.random.default_rng(cfg.seed)
    order = _canonical_order(cs)[rng.permutation(n)]
    work = cs.subset(order)

    best_mask = None
    best_key = (-1, math.inf)
    needed = float(cfg.iterations)
    it = 0
    while it < min(cfg.iterations, needed):
        it += 1
        sample = rng.choice(n, size=cfg.min_sample, replace=False)
        for cand in minimal_solve(work.subset(sample), k):
            err = reprojection_errors(cand, work, k)
            mask = err < cfg.inlier_threshold
            count = int(mask.sum())
            key = (count, float(np.sum(np.minimum(err, cfg.inlier_threshold) ** 2)))
            if count > best_key[0] or (count == best_key[0] and key[1] < best_key[1]):
                best_key, best_mask = key, mask
                needed = adaptive_iterations(count / n, cfg.confidence, cfg.min_sample)
    if best_mask is None or best_key[0] < MIN_POINTS:
        raise NoConsensus(f"best consensus {max(best_key[0], 0)} < {MIN_POINTS}")

    pose = None
    mask = best_mask
    for _ in range(3):
        pose = _fit_inliers(work, mask, k, pose)
        new_mask = reprojection_errors(pose, work, k) < cfg.inlier_threshold
        if new_mask.sum() < MIN_POINTS:
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    errs = reprojection_errors(pose, work, k)
    final = np.zeros(n, bool)
    final[order] = mask
    return PoseEstimate(pose, final, rms(errs[mask]), it)


def camera_to_world(pose_cam: Pose, e: CameraExtrinsics) -> Pose:
    """Object -> world pose from an object -> camera pose."""
    return e.world_to_camera.inverse().compose(pose_cam)
