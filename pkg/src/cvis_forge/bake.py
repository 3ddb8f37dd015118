"""Pull image pixels back onto the template's UV atlas.

Each texel is mapped to a surface point through an inverse-atlas table built
once per (template, resolution) by scan-converting triangles in UV space.
A texel is valid when its surface point

* lies on a front-facing triangle,
* is resolved by the image: one texel step projects to at least
  ``MIN_FOOTPRINT`` pixels in every direction (minified texels cannot be
  recovered from point-sampled pixels),
* projects with all four bilinear taps inside the image, and
* passes a two-sided depth test at every tap: the rendered depth there must
  agree, within ``DEPTH_BIAS``, with the depth of the texel's own triangle
  plane along that tap's ray, and the tap must show the texel's own part.
  Taps seeing an occluder, the background, a differently oriented surface or
  the far side of a UV seam fail.

Known shading is divided out per tap using the rendered triangle index.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .atlas import PART_COUNT, TextureAtlas, part_map
from .errors import MeshFullyOutsideFrustum
from .geometry import CameraExtrinsics, CameraIntrinsics, pixel_rays, project_camera_points
from .raster import DirectionalLight, PosedVehicle, cover_triangle, lambert, render_depth_ids, triangle_normals
from .template import VehicleTemplate

DEPTH_BIAS = 1e-3
MIN_FOOTPRINT = 1.0  # pixels per texel along the most compressed direction


def _texel_jacobians(template: VehicleTemplate, cam_vertices: np.ndarray, resolution: int) -> np.ndarray:
    """Per-triangle ``d(camera point) / d(texel coords)``, shape ``(m, 3, 2)``."""
    uvt = template.uv[template.triangles] * resolution
    X = cam_vertices[template.triangles]
    dU = np.stack([uvt[:, 1] - uvt[:, 0], uvt[:, 2] - uvt[:, 0]], axis=2)  # (m, 2, 2)
    dX = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)  # (m, 3, 2)
    return dX @ np.linalg.inv(dU)


def texel_footprint(template, cam_vertices, resolution, pts, tris, k: CameraIntrinsics) -> np.ndarray:
    """Smallest singular value of the texel -> pixel Jacobian at every texel."""
    M = _texel_jacobians(template, cam_vertices, resolution)[tris]  # (r, r, 3, 2)
    x, y, z = (np.nan_to_num(pts[..., i], nan=1.0) for i in range(3))
    z = np.where(z > 1e-9, z, 1e-9)
    P = np.zeros(pts.shape[:2] + (2, 3))
    P[..., 0, 0] = k.fx / z
    P[..., 0, 1] = k.skew / z
    P[..., 0, 2] = -(k.fx * x + k.skew * y) / z**2
    P[..., 1, 1] = k.fy / z
    P[..., 1, 2] = -k.fy * y / z**2
    return np.linalg.svd(P @ M, compute_uv=False)[..., -1]


@lru_cache(maxsize=16)
def inverse_atlas(template: VehicleTemplate, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-texel ``(triangle index, barycentrics)``; ``-1`` for texels no part covers.

    Texels of a part cell that no triangle covers exactly (possible only on
    island borders) take the closest point of the part's triangles.
    """
    tri_of = np.full((resolution, resolution), -1, np.int64)
    bary = np.zeros((resolution, resolution, 3))
    uvt = template.uv[template.triangles] * resolution - 0.5  # texel-center coordinates
    for t in range(len(template.triangles)):
        cov = cover_triangle(uvt[t, 0], uvt[t, 1], uvt[t, 2], resolution, resolution)
        if cov is None:
            continue
        ys, xs, w = cov
        tri_of[ys, xs] = t
        bary[ys, xs] = w

    pm = part_map(resolution)
    for r, c in zip(*np.nonzero(tri_of < 0)):
        part = pm[r, c]
        cand = np.nonzero(template.part_label == part)[0]
        if cand.size == 0:
            continue
        p = np.array([c, r], dtype=np.float64)
        a, b, d = uvt[cand, 0], uvt[cand, 1], uvt[cand, 2]
        # barycentrics in each candidate, clamped onto the triangle
        v0, v1, v2 = b - a, d - a, p - a
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        d20 = np.einsum("ij,ij->i", v2, v0)
        d21 = np.einsum("ij,ij->i", v2, v1)
        den = d00 * d11 - d01 * d01
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = (d11 * d20 - d01 * d21) / den
            l2 = (d00 * d21 - d01 * d20) / den
        lam = np.clip(np.stack([1 - l1 - l2, l1, l2], axis=1), 0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        recon = lam[:, :1] * a + lam[:, 1:2] * b + lam[:, 2:] * d
        best = int(np.argmin(np.linalg.norm(recon - p, axis=1)))
        tri_of[r, c] = cand[best]
        bary[r, c] = lam[best]
    tri_of.setflags(write=False)
    bary.setflags(write=False)
    return tri_of, bary


def texel_surface_points(template: VehicleTemplate, vertices: np.ndarray, resolution: int):
    """Surface point of every texel for the given vertex positions, NaN where unmapped."""
    tri_of, bary = inverse_atlas(template, resolution)
    mapped = tri_of >= 0
    pts = np.full((resolution, resolution, 3), np.nan)
    idx = template.triangles[tri_of[mapped]]
    pts[mapped] = np.einsum("nk,nkj->nj", bary[mapped], vertices[idx])
    return pts, tri_of


def bake(image: np.ndarray, vehicle: PosedVehicle, k: CameraIntrinsics, e: CameraExtrinsics,
         resolution: int = 96, light: DirectionalLight | None = None,
         min_footprint: float = MIN_FOOTPRINT) -> TextureAtlas:
    """Project an image onto the atlas of a posed template.

    ``light`` is the shading the image was rendered with, divided out during
    the bake; leave it ``None`` for photographs (lighting stays baked in).
    Lower ``min_footprint`` to accept texels the image resolves less finely
    (e.g. distant vehicles), at the cost of blurrier texels.
    """
    image = np.asarray(image)
    if image.shape[:2] != (k.height, k.width):
        raise ValueError(f"image {image.shape[:2]} does not match camera {k.height}x{k.width}")
    t = vehicle.template
    world = vehicle.world_vertices()
    cam_verts = e.world_to_camera.apply(world)
    depth, tri_buf = render_depth_ids(vehicle, k, e)
    if not np.isfinite(depth).any():
        raise MeshFullyOutsideFrustum("the posed mesh covers no pixel")

    pts, tri_of = texel_surface_points(t, cam_verts, resolution)
    mapped = tri_of >= 0
    tris = np.where(mapped, tri_of, 0)

    normals = triangle_normals(cam_verts, t.triangles)  # camera frame
    n_tex = normals[tris]
    with np.errstate(invalid="ignore"):
        front = mapped & (np.einsum("ijk,ijk->ij", n_tex, -np.nan_to_num(pts)) > 0) & (pts[..., 2] > 1e-6)

    uv = project_camera_points(np.where(front[..., None], pts, 1.0), k)
    x0 = np.floor(uv[..., 0])
    y0 = np.floor(uv[..., 1])
    resolved = texel_footprint(t, cam_verts, resolution, pts, tris, k) >= min_footprint
    inside = front & resolved & (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= k.width - 1) & (y0 + 1 <= k.height - 1)

    texel_part = t.part_label[tris]
    plane_d = np.einsum("ijk,ijk->ij", n_tex, np.nan_to_num(pts))
    valid = inside.copy()
    xi = np.where(inside, x0, 0).astype(np.int64)
    yi = np.where(inside, y0, 0).astype(np.int64)
    taps = [(0, 0), (1, 0), (0, 1), (1, 1)]
    for dx, dy in taps:
        tx, ty = xi + dx, yi + dy
        ray = pixel_rays(np.stack([tx, ty], -1).astype(np.float64), k)
        with np.errstate(divide="ignore", invalid="ignore"):
            expected = plane_d / np.einsum("ijk,ijk->ij", n_tex, ray)
        seen = depth[ty, tx]
        seen_part = t.part_label[np.maximum(tri_buf[ty, tx], 0)]
        valid &= np.isfinite(seen) & (np.abs(seen - expected) <= DEPTH_BIAS) & (seen_part == texel_part)

    shade = lambert(triangle_normals(world, t.triangles), light)
    fx = (uv[..., 0] - x0)[..., None]
    fy = (uv[..., 1] - y0)[..., None]
    acc = np.zeros((resolution, resolution, 3))
    img = image[..., :3].astype(np.float64)
    for dx, dy in taps:
        tx, ty = xi + dx, yi + dy
        wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
        tap_tri = tri_buf[ty, tx]
        s = np.where(tap_tri >= 0, shade[np.maximum(tap_tri, 0)], 1.0)
        acc += wgt * img[ty, tx] / s[..., None]
    color = np.where(valid[..., None], np.clip(np.rint(np.nan_to_num(acc)), 0, 255), 0).astype(np.uint8)
    return TextureAtlas(color, valid)


def coverage_stats(atlas: TextureAtlas) -> np.ndarray:
    """Valid-texel fraction per part, index 0 = part 1."""
    pm = part_map(atlas.resolution)
    total = np.bincount(pm.ravel(), minlength=PART_COUNT + 1)[1:]
    valid = np.bincount(pm[atlas.valid], minlength=PART_COUNT + 1)[1:]
    return valid / total
