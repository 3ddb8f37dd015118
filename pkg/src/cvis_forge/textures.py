"""Procedural vehicle textures for tests, demos and the inpainting benchmark.

Each part has a fixed role (paint, glass, underbody, lights) so textures share
part-level structure across seeds while paint color and shading vary. All
transitions are smooth over several texels so bilinear resampling is benign.
"""

from __future__ import annotations

import numpy as np

from .atlas import PART_COUNT, TextureAtlas, cell_bounds


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _part_pattern(part: int, a: np.ndarray, b: np.ndarray, paint: np.ndarray, glass: np.ndarray,
                  rng_vals: np.ndarray) -> np.ndarray:
    """Color of part-local coordinates ``a`` (across), ``b`` (along) in 0..255."""
    shape = a.shape + (3,)
    under = np.array([38.0, 38.0, 42.0])
    if part in (17, 18):
        light_col = np.array([200.0, 30.0, 30.0]) if part == 17 else np.array([235.0, 235.0, 215.0])
        lamp = (_smoothstep(0.2, 0.45, np.abs(a - 0.5)) * _smoothstep(0.3, 0.5, b)
                * (1 - _smoothstep(0.65, 0.85, b)))
        base = paint * (0.9 + 0.1 * b[..., None])
        low = _smoothstep(0.0, 0.25, b)[..., None]
        base = under * (1 - low) + base * low
        return base * (1 - lamp[..., None]) + light_col * lamp[..., None]

    seg, sector = divmod(part - 1, 4)
    if sector == 0:  # underbody
        return np.broadcast_to(under + 6.0 * a[..., None], shape).copy()
    if sector in (1, 3):  # sides: along-ring coordinate a runs bottom -> top on the right side
        up = a if sector == 1 else 1.0 - a
        body = paint * (0.82 + 0.18 * up[..., None])
        if seg in (1, 2):
            win = _smoothstep(0.55, 0.8, up)[..., None]
            body = body * (1 - win) + glass * win
        trim = (_smoothstep(0.1, 0.25, up) * (1 - _smoothstep(0.3, 0.45, up)))[..., None]
        return body * (1 - 0.35 * trim)
    # roof band
    if seg in (1, 2):
        w = (0.55 + 0.3 * rng_vals[part]) * np.ones_like(a)
        win = _smoothstep(0.2, 0.35, b) if seg == 1 else 1 - _smoothstep(0.65, 0.8, b)
        mix = (win * w)[..., None]
        return paint * (1 - mix) + glass * mix
    return paint * (0.92 + 0.08 * np.cos(np.pi * (a - 0.5))[..., None])


def procedural_atlas(seed: int, resolution: int = 96) -> TextureAtlas:
    """A complete (fully valid) atlas with smooth part-wise patterns."""
    rng = np.random.default_rng(seed)
    paint = rng.uniform(40, 220, size=3)
    glass = np.array([55.0, 65.0, 80.0]) + rng.uniform(-10, 10, size=3)
    rng_vals = rng.uniform(0, 1, size=PART_COUNT + 1)
    color = np.zeros((resolution, resolution, 3))
    bounds = cell_bounds(resolution)
    for p in range(1, PART_COUNT + 1):
        r0, r1, c0, c1 = bounds[p]
        # cell-local coordinates of texel centers in [0, 1]
        a = (np.arange(c0, c1) + 0.5 - c0) / (c1 - c0)
        b = (np.arange(r0, r1) + 0.5 - r0) / (r1 - r0)
        A, B = np.meshgrid(a, b)
        color[r0:r1, c0:c1] = _part_pattern(p, A, B, paint, glass, rng_vals)
    return TextureAtlas.full(np.clip(np.rint(color), 0, 255).astype(np.uint8))


def procedural_background(width: int, height: int, k, e, seed: int = 0) -> np.ndarray:
    """Flat asphalt with lane markings, drawn by back-projecting pixels to the ground."""
    from .geometry import backproject_pixels_to_plane, ground_plane_from_extrinsics

    rng = np.random.default_rng(seed)
    cols, rows = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    pts, valid = backproject_pixels_to_plane(np.stack([cols, rows], -1), k, e, ground_plane_from_extrinsics(e))
    sky = np.array([150.0, 180.0, 215.0]) * (0.85 + 0.15 * rows / max(height - 1, 1))[..., None]
    x, y = pts[..., 0], pts[..., 1]
    grain = rng.uniform(-6, 6, size=(height, width))
    road = 92.0 + grain + 4.0 * np.sin(0.37 * x + 0.11 * y)
    lane = (np.abs(((x + 1.75) % 3.5) - 1.75) > 1.65) & (((y % 6.0) < 3.0))
    img = np.repeat(road[..., None], 3, axis=-1)
    img[lane] = 215.0
    img = np.where(valid[..., None] & np.isfinite(pts).all(-1, keepdims=True), img, sky)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
