"""Deterministic software rasterizer.

Pixel centers sit at integer image coordinates. Coverage uses edge functions
with a top-left style tie rule, so a pixel center on an edge shared by two
triangles is drawn exactly once. Attributes are interpolated perspective
correctly. Depth ties between instances go to the lower instance id, which
makes rendering order-independent.

Shading is one Lambert term ``AMBIENT + DIFFUSE * max(0, n . -light)`` per
triangle, modulating a bilinear texture lookup. Baking divides the same term
back out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .atlas import TextureAtlas
from .errors import IncompleteTexture, LightParallelToPlane
from .geometry import EPS, CameraExtrinsics, CameraIntrinsics, Plane, Pose, project_camera_points
from .imageio import write_dense_raster, write_png
from .template import ShapeCoefficients, VehicleTemplate, deform

AMBIENT = 0.5
DIFFUSE = 0.5


@dataclass(eq=False)
class Framebuffer:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf where empty
    instance_id: np.ndarray  # (H, W) int32, 0 = background
    part_id: np.ndarray  # (H, W) int32, 0 = none
    canon_point: np.ndarray  # (H, W, 3) float64, NaN where empty

    @classmethod
    def create(cls, width: int, height: int, background: np.ndarray | None = None) -> "Framebuffer":
        if background is None:
            color = np.zeros((height, width, 3), np.uint8)
        else:
            color = np.array(background, dtype=np.uint8, copy=True)
            if color.shape != (height, width, 3):
                raise ValueError(f"background {color.shape} does not match {height}x{width}")
        return cls(
            color,
            np.full((height, width), np.inf),
            np.zeros((height, width), np.int32),
            np.zeros((height, width), np.int32),
            np.full((height, width, 3), np.nan),
        )

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @property
    def height(self) -> int:
        return self.color.shape[0]

    def copy(self) -> "Framebuffer":
        return Framebuffer(self.color.copy(), self.depth.copy(), self.instance_id.copy(),
                           self.part_id.copy(), self.canon_point.copy())

    def equals(self, other: "Framebuffer") -> bool:
        return (np.array_equal(self.color, other.color) and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.instance_id, other.instance_id)
                and np.array_equal(self.part_id, other.part_id)
                and np.array_equal(self.canon_point, other.canon_point, equal_nan=True))

    def save_color_png(self, path) -> None:
        write_png(path, self.color)

    def save_canon_raster(self, path) -> None:
        write_dense_raster(path, self.canon_point)


@dataclass(frozen=True, eq=False)
class DirectionalLight:
    direction: np.ndarray  # from the light toward the scene
    shadow_strength: float = 0.5

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(d)
        if abs(norm - 1.0) > 1e-12:  # keep already-unit input bitwise stable across save/load
            d = d / norm
        if d[2] >= 0:
            raise ValueError("light must come from above (direction z < 0)")
        if not 0.0 < self.shadow_strength <= 1.0:
            raise ValueError("shadow_strength must be in (0, 1]")
        object.__setattr__(self, "direction", d)

    def to_dict(self) -> dict:
        return {"direction": self.direction.tolist(), "shadow_strength": self.shadow_strength}

    @classmethod
    def from_dict(cls, d) -> "DirectionalLight":
        return cls(d["direction"], float(d.get("shadow_strength", 0.5)))


@dataclass(frozen=True, eq=False)
class PosedVehicle:
    """A template instance: shape, object-to-world pose and texture."""

    template: VehicleTemplate
    coeffs: ShapeCoefficients
    pose: Pose
    atlas: TextureAtlas | None = None

    def object_vertices(self) -> np.ndarray:
        return deform(self.template, self.coeffs)

    def world_vertices(self) -> np.ndarray:
        return self.pose.apply(self.object_vertices())


# ---------------------------------------------------------------------------
# core scan conversion


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns_edge(ax, ay, bx, by) -> bool:
    # antisymmetric in edge direction: of two triangles sharing an edge,
    # exactly one includes centers lying on it
    dx, dy = bx - ax, by - ay
    return dy > 0 or (dy == 0 and dx < 0)


def cover_triangle(p0, p1, p2, width: int, height: int):
    """Pixels whose centers a 2D triangle covers.

    Returns ``(ys, xs, bary)`` with screen-space barycentrics ``(n, 3)`` for
    the vertices in the given order, or ``None`` if nothing is covered.
    Works for either winding.
    """
    us = (p0[0], p1[0], p2[0])
    vs = (p0[1], p1[1], p2[1])
    x0 = max(math.ceil(min(us)), 0)
    x1 = min(math.floor(max(us)), width - 1)
    y0 = max(math.ceil(min(vs)), 0)
    y1 = min(math.floor(max(vs)), height - 1)
    if x0 > x1 or y0 > y1:
        return None
    area = _edge(p0[0], p0[1], p1[0], p1[1], p2[0], p2[1])
    if area == 0 or not math.isfinite(area):
        return None
    order = (0, 1, 2) if area > 0 else (0, 2, 1)
    q = [(p0, p1, p2)[i] for i in order]
    area = abs(area)
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64), np.arange(y0, y1 + 1, dtype=np.float64))
    xs = xs.ravel()
    ys = ys.ravel()
    w = np.empty((xs.size, 3))
    inside = np.ones(xs.size, bool)
    for i in range(3):
        a, b = q[(i + 1) % 3], q[(i + 2) % 3]
        wi = _edge(a[0], a[1], b[0], b[1], xs, ys)
        if _owns_edge(a[0], a[1], b[0], b[1]):
            inside &= wi >= 0
        else:
            inside &= wi > 0
        w[:, i] = wi
    if not inside.any():
        return None
    bary = w[inside] / area
    if order != (0, 1, 2):
        bary = bary[:, [0, 2, 1]]
    return ys[inside].astype(np.int64), xs[inside].astype(np.int64), bary


def iter_fragments(cam_vertices: np.ndarray, triangles: np.ndarray, k: CameraIntrinsics,
                   cull_backfaces: bool = True) -> Iterator[tuple]:
    """Yield ``(tri, ys, xs, weights, depth)`` per triangle.

    ``weights`` are perspective-correct barycentrics. Triangles touching the
    near plane (any vertex with z <= 1e-6 m) are skipped whole.
    """
    if len(triangles) == 0:
        return
    tv = cam_vertices[triangles]  # (m, 3, 3)
    z = tv[:, :, 2]
    ok = np.all(z > EPS, axis=1)
    if cull_backfaces:
        n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        ok &= np.einsum("ij,ij->i", n, -tv.mean(axis=1)) > 0
    pix = project_camera_points(np.where(ok[:, None, None], tv, 1.0), k)
    for t in np.nonzero(ok)[0]:
        cov = cover_triangle(pix[t, 0], pix[t, 1], pix[t, 2], k.width, k.height)
        if cov is None:
            continue
        ys, xs, bary = cov
        wz = bary / z[t]
        inv = wz.sum(axis=1)
        yield t, ys, xs, wz / inv[:, None], 1.0 / inv


def lambert(normals: np.ndarray, light: DirectionalLight | None) -> np.ndarray:
    """Per-triangle shading factor in ``[AMBIENT, 1]``; 1 everywhere without a light."""
    if light is None:
        return np.ones(len(normals))
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return AMBIENT + DIFFUSE * np.maximum(0.0, -(n @ light.direction))


def triangle_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    tv = vertices[triangles]
    return np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])


def _depth_wins(new_depth, old_depth, new_id, old_id):
    return (new_depth < old_depth) | ((new_depth == old_depth) & (new_id < old_id))


def rasterize(vehicle: PosedVehicle, k: CameraIntrinsics, e: CameraExtrinsics, fb: Framebuffer,
              instance_id: int, light: DirectionalLight | None = None) -> None:
    """Z-buffered draw of a textured vehicle into ``fb`` (in place).

    ``canon_point`` receives the interpolated mean-shape (undeformed)
    position, so the dense map always targets the shared template space.
    """
    if instance_id <= 0:
        raise ValueError("instance_id must be positive")
    atlas = vehicle.atlas
    if atlas is None or not atlas.is_complete:
        raise IncompleteTexture("atlas has invalid texels; inpaint before rendering")
    t = vehicle.template
    if len(t.triangles) == 0:
        return
    world = vehicle.world_vertices()
    cam = e.world_to_camera.apply(world)
    shade = lambert(triangle_normals(world, t.triangles), light)
    for tri, ys, xs, w, depth in iter_fragments(cam, t.triangles, k):
        win = _depth_wins(depth, fb.depth[ys, xs], instance_id, fb.instance_id[ys, xs])
        if not win.any():
            continue
        ys, xs, w, depth = ys[win], xs[win], w[win], depth[win]
        idx = t.triangles[tri]
        part = int(t.part_label[tri])
        uv = w @ t.uv[idx]
        rgb = atlas.sample(uv, np.full(len(uv), part)) * shade[tri]
        fb.color[ys, xs] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
        fb.depth[ys, xs] = depth
        fb.instance_id[ys, xs] = instance_id
        fb.part_id[ys, xs] = part
        fb.canon_point[ys, xs] = w @ t.mean_shape[idx]


def render_depth_ids(vehicle: PosedVehicle, k: CameraIntrinsics, e: CameraExtrinsics):
    """Depth and triangle-index buffers of a single vehicle (-1 = empty)."""
    t = vehicle.template
    depth = np.full((k.height, k.width), np.inf)
    tri_id = np.full((k.height, k.width), -1, np.int64)
    cam = e.world_to_camera.apply(vehicle.world_vertices())
    for tri, ys, xs, _, d in iter_fragments(cam, t.triangles, k):
        win = d < depth[ys, xs]
        depth[ys[win], xs[win]] = d[win]
        tri_id[ys[win], xs[win]] = tri
    return depth, tri_id


# ---------------------------------------------------------------------------
# shadows


def _light_direction(light) -> np.ndarray:
    if isinstance(light, DirectionalLight):
        return light.direction
    d = np.asarray(light, dtype=np.float64).reshape(3)
    return d / np.linalg.norm(d)


def shadow_point(p, light, ground: Plane) -> np.ndarray:
    """Slide ``p`` along the light direction onto the ground plane."""
    d = _light_direction(light)
    denom = float(ground.normal @ d)
    if abs(denom) <= 1e-9:
        raise LightParallelToPlane("light direction is parallel to the ground")
    p = np.asarray(p, dtype=np.float64)
    t = (ground.offset - p @ ground.normal) / denom
    return p + np.multiply.outer(t, d) if p.ndim > 1 else p + t * d


def shadow_mask(world_vertices: np.ndarray, triangles: np.ndarray, light, ground: Plane,
                k: CameraIntrinsics, e: CameraExtrinsics) -> np.ndarray:
    """Image pixels covered by the ground-projected mesh (union over triangles)."""
    mask = np.zeros((k.height, k.width), bool)
    if len(triangles) == 0:
        return mask
    ground_pts = shadow_point(np.asarray(world_vertices, dtype=np.float64), light, ground)
    cam = e.world_to_camera.apply(ground_pts)
    tv = cam[triangles]
    ok = np.all(tv[:, :, 2] > EPS, axis=1)
    pix = project_camera_points(np.where(ok[:, None, None], tv, 1.0), k)
    for t in np.nonzero(ok)[0]:
        cov = cover_triangle(pix[t, 0], pix[t, 1], pix[t, 2], k.width, k.height)
        if cov is not None:
            mask[cov[0], cov[1]] = True
    return mask


def apply_shadow(fb: Framebuffer, mask: np.ndarray, strength: float) -> None:
    """Darken background pixels under ``mask`` by ``1 - strength``."""
    target = mask & (fb.instance_id == 0)
    scaled = fb.color[target].astype(np.float64) * (1.0 - strength)
    fb.color[target] = np.rint(scaled).astype(np.uint8)


def shadow_pass(vehicle: PosedVehicle, light: DirectionalLight, ground: Plane,
                k: CameraIntrinsics, e: CameraExtrinsics, fb: Framebuffer) -> None:
    """Cast the vehicle's hard planar shadow onto background pixels of ``fb``."""
    mask = shadow_mask(vehicle.world_vertices(), vehicle.template.triangles, light, ground, k, e)
    apply_shadow(fb, mask, light.shadow_strength)
