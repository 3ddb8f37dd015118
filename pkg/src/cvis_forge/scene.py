"""Vehicle placement and scene composition with ground-truth annotations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementExhausted
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    OrientedBox,
    Plane,
    Pose,
    ground_plane_from_extrinsics,
    obb_intersect,
)
from .raster import DirectionalLight, Framebuffer, PosedVehicle, apply_shadow, rasterize, shadow_mask
from .rle import RLE, rle_encode
from .template import Dimensions, ShapeCoefficients, VehicleTemplate, bbox_center, canonical_dimensions, deform

TINY_MASK_PIXELS = 50
DEFAULT_MIN_GAP = 0.3


@dataclass(eq=False)
class Background:
    image: np.ndarray
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    light: DirectionalLight
    ground: Plane = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.uint8)
        k = self.intrinsics
        if self.image.shape != (k.height, k.width, 3):
            raise ValueError(f"background {self.image.shape} does not match camera {k.height}x{k.width}")
        if self.ground is None:
            self.ground = ground_plane_from_extrinsics(self.extrinsics)

    @classmethod
    def procedural(cls, k: CameraIntrinsics, e: CameraExtrinsics, light: DirectionalLight, seed: int = 0):
        from .textures import procedural_background

        return cls(procedural_background(k.width, k.height, k, e, seed), k, e, light)


@dataclass(frozen=True)
class PlacementConfig:
    count: int = 1
    yaw_range: tuple = (-math.pi, math.pi)
    region: tuple = ((-5.0, 5.0), (-5.0, 5.0))  # ((xmin, xmax), (ymin, ymax)) on the ground
    min_gap: float = DEFAULT_MIN_GAP
    max_attempts: int = 1000
    seed: int = 0

    def __post_init__(self):
        (x0, x1), (y0, y1) = self.region
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate placement region {self.region}")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.min_gap < 0:
            raise ValueError("min_gap must be >= 0")
        if self.max_attempts < self.count:
            raise ValueError("max_attempts must be >= count")
        if self.yaw_range[1] < self.yaw_range[0]:
            raise ValueError("yaw_range must be (low, high)")

    def to_dict(self) -> dict:
        return {"count": self.count, "yaw_range": list(self.yaw_range),
                "region": [list(self.region[0]), list(self.region[1])],
                "min_gap": self.min_gap, "max_attempts": self.max_attempts, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementConfig":
        d = dict(d)
        if "yaw_range" in d:
            d["yaw_range"] = tuple(d["yaw_range"])
        if "region" in d:
            d["region"] = tuple(tuple(r) for r in d["region"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Placement:
    template: VehicleTemplate
    coeffs: ShapeCoefficients
    pose: Pose  # object -> world


@dataclass(eq=False)
class DenseMap:
    """Visible pixels ``(col, row)`` and the canonical point rendered there.

    Points are float32 values (held as float64) so they survive the binary
    raster round trip unchanged.
    """

    pixels: np.ndarray  # (n, 2) int64
    points: np.ndarray  # (n, 3) float64

    def __len__(self):
        return len(self.pixels)

    def equals(self, other: "DenseMap") -> bool:
        return np.array_equal(self.pixels, other.pixels) and np.array_equal(self.points, other.points)


@dataclass(eq=False)
class SceneAnnotation:
    instance_id: int
    template_id: str
    coeffs: ShapeCoefficients
    pose: Pose
    dimensions: Dimensions
    bbox2d: tuple | None  # (xmin, ymin, xmax, ymax) pixel-edge bounds; None when not visible
    mask: RLE
    bbox3d: OrientedBox
    dense_map: DenseMap
    tiny: bool = False

    def equals(self, other: "SceneAnnotation") -> bool:
        return (self.instance_id == other.instance_id and self.template_id == other.template_id
                and self.coeffs == other.coeffs and self.pose.allclose(other.pose, 0.0)
                and self.dimensions == other.dimensions and self.bbox2d == other.bbox2d
                and self.mask == other.mask and self.tiny == other.tiny
                and np.array_equal(self.bbox3d.center, other.bbox3d.center)
                and np.array_equal(self.bbox3d.half_extents, other.bbox3d.half_extents)
                and np.array_equal(self.bbox3d.rotation, other.bbox3d.rotation)
                and self.dense_map.equals(other.dense_map))


@dataclass(eq=False)
class Scene:
    image: np.ndarray
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    light: DirectionalLight
    annotations: list = field(default_factory=list)
    name: str = "scene"


def object_box(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Object-frame box center and half extents of a vertex set."""
    return bbox_center(vertices), 0.5 * (vertices.max(0) - vertices.min(0))


def world_box(vertices: np.ndarray, pose: Pose, margin: float = 0.0) -> OrientedBox:
    c, half = object_box(vertices)
    return OrientedBox(pose.apply(c), half + margin, pose.rotation)


def place_vehicles(bg: Background, cfg: PlacementConfig, fleet) -> list[Pose]:
    """Rejection-sample collision-free ground poses, one per vehicle.

    The fleet of ``(template, coeffs)`` pairs is cycled when shorter than
    ``cfg.count``. Every box is inflated by ``min_gap / 2`` before testing.
    """
    if cfg.count == 0:
        return []
    if len(fleet) == 0:
        raise ValueError("fleet must contain at least one vehicle")
    rng = np.random.default_rng(cfg.seed)
    (x0, x1), (y0, y1) = cfg.region
    poses: list[Pose] = []
    boxes: list[OrientedBox] = []
    failures = 0
    for i in range(cfg.count):
        template, coeffs = fleet[i % len(fleet)]
        verts = deform(template, coeffs)
        lift = -verts[:, 2].min()
        while True:
            x = rng.uniform(x0, x1)
            y = rng.uniform(y0, y1)
            yaw = rng.uniform(*cfg.yaw_range)
            pose = Pose.from_euler(yaw, 0.0, 0.0, (x, y, lift))
            box = world_box(verts, pose, cfg.min_gap / 2)
            if not any(obb_intersect(box, other) for other in boxes):
                poses.append(pose)
                boxes.append(box)
                break
            failures += 1
            if failures >= cfg.max_attempts:
                raise PlacementExhausted(f"placed {len(poses)} of {cfg.count} after {failures} failed samples")
    return poses


def _annotation(fb: Framebuffer, inst_id: int, p: Placement) -> SceneAnnotation:
    verts = deform(p.template, p.coeffs)
    dims = canonical_dimensions(verts)
    c, half = object_box(verts)
    box = OrientedBox(p.pose.apply(c), half, p.pose.rotation)
    mask = fb.instance_id == inst_id
    rows, cols = np.nonzero(mask)
    bbox2d = None
    if rows.size:
        bbox2d = (float(cols.min()) - 0.5, float(rows.min()) - 0.5, float(cols.max()) + 0.5, float(rows.max()) + 0.5)
    pts = fb.canon_point[rows, cols].astype(np.float32).astype(np.float64)
    dense = DenseMap(np.stack([cols, rows], 1).astype(np.int64), pts)
    return SceneAnnotation(inst_id, p.template.template_id, p.coeffs, p.pose, dims, bbox2d,
                           rle_encode(mask), box, dense, tiny=bool(rows.size < TINY_MASK_PIXELS))


def compose(bg: Background, placements, atlases, return_framebuffer: bool = False):
    """Render textured vehicles over the background and extract annotations.

    Shadows of all vehicles are merged and applied once, so overlapping
    shadows do not darken twice. Instance ids are ``1..n`` in placement order.
    """
    if len(placements) != len(atlases):
        raise ValueError(f"{len(placements)} placements vs {len(atlases)} atlases")
    k, e = bg.intrinsics, bg.extrinsics
    fb = Framebuffer.create(k.width, k.height, bg.image)
    vehicles = [PosedVehicle(p.template, p.coeffs, p.pose, a) for p, a in zip(placements, atlases)]
    if vehicles:
        shadow = np.zeros((k.height, k.width), bool)
        for v in vehicles:
            shadow |= shadow_mask(v.world_vertices(), v.template.triangles, bg.light, bg.ground, k, e)
        apply_shadow(fb, shadow, bg.light.shadow_strength)
    for i, v in enumerate(vehicles, start=1):
        rasterize(v, k, e, fb, i, bg.light)
    anns = [_annotation(fb, i, p) for i, p in enumerate(placements, start=1)]
    return (fb.color, anns, fb) if return_framebuffer else (fb.color, anns)
