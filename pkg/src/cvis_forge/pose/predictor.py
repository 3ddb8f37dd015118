"""Stand-in for a learned pixel -> canonical point regressor, and size recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDenseMap, TooFewPoints
from ..template import Dimensions, VehicleTemplate, deform_points
from .solvers import CorrespondenceSet

DEFAULT_OUTLIER_BOX = ((-1.2, -2.6, -0.8), (1.2, 2.6, 0.8))
TRIM_PERCENT = 1.0
TRIM_MIN_POINTS = 100


@dataclass(frozen=True)
class NoiseModel:
    pixel_sigma: float = 0.0
    point_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_box: tuple = DEFAULT_OUTLIER_BOX
    seed: int = 0
    samples: int = 500  # correspondences drawn per instance
    dimension_sigma: float = 0.0

    def __post_init__(self):
        if self.pixel_sigma < 0 or self.point_sigma < 0 or self.dimension_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        lo, hi = np.asarray(self.outlier_box, float)
        if lo.shape != (3,) or np.any(hi <= lo):
            raise ValueError("outlier_box must be ((xmin, ymin, zmin), (xmax, ymax, zmax)) with min < max")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    def to_dict(self) -> dict:
        return {"pixel_sigma": self.pixel_sigma, "point_sigma": self.point_sigma,
                "outlier_fraction": self.outlier_fraction,
                "outlier_box": [list(map(float, b)) for b in self.outlier_box],
                "seed": self.seed, "samples": self.samples, "dimension_sigma": self.dimension_sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        d = dict(d)
        if "outlier_box" in d:
            d["outlier_box"] = tuple(tuple(b) for b in d["outlier_box"])
        return cls(**d)


def simulate_predictor(ann, nm: NoiseModel, template: VehicleTemplate | None = None) -> CorrespondenceSet:
    """Noisy correspondences drawn from an annotation's dense map.

    With ``template`` the canonical points are moved onto the instance's
    deformed shape, so that a rigid solve recovers the annotated pose exactly.
    The returned set also carries a (noisy) dimension estimate.
    """
    pixels, points = ann.dense_map.pixels, ann.dense_map.points
    n_all = len(pixels)
    if n_all == 0:
        raise EmptyDenseMap(f"instance {ann.instance_id} has an empty dense map")
    rng = np.random.default_rng(nm.seed)
    if nm.samples < n_all:
        idx = np.sort(rng.choice(n_all, size=nm.samples, replace=False))
    else:
        idx = np.arange(n_all)
    px = pixels[idx].astype(np.float64)
    pts = points[idx].astype(np.float64)
    if template is not None:
        pts = deform_points(template, ann.coeffs, pts)
    n = len(idx)
    if nm.pixel_sigma > 0:
        px = px + rng.normal(0.0, nm.pixel_sigma, size=px.shape)
    if nm.point_sigma > 0:
        pts = pts + rng.normal(0.0, nm.point_sigma, size=pts.shape)
    n_out = int(round(nm.outlier_fraction * n))
    if n_out:
        lo, hi = np.asarray(nm.outlier_box, float)
        which = rng.choice(n, size=n_out, replace=False)
        pts[which] = rng.uniform(lo, hi, size=(n_out, 3))
    dims = ann.dimensions.as_array()
    if nm.dimension_sigma > 0:
        dims = np.maximum(dims + rng.normal(0.0, nm.dimension_sigma, size=3), 1e-3)
    return CorrespondenceSet(px, pts, Dimensions(*dims))


def estimate_dimensions(points) -> Dimensions:
    """Robust (w, h, l) extents of a canonical point cloud.

    Extents span the 1st..99th percentile per axis; clouds with fewer than
    100 distinct points use the plain min..max span.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 3), axis=0)
    if len(pts) < 2:
        raise TooFewPoints("need >= 2 distinct points")
    if len(pts) >= TRIM_MIN_POINTS:
        lo, hi = np.percentile(pts, [TRIM_PERCENT, 100 - TRIM_PERCENT], axis=0)
    else:
        lo, hi = pts.min(0), pts.max(0)
    ext = np.maximum(hi - lo, 1e-9)
    return Dimensions(w=float(ext[0]), h=float(ext[2]), l=float(ext[1]))
