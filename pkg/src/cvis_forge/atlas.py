"""Texture atlas with a fixed 6 x 3 layout of 18 part cells.

Part ``p`` (1-based) occupies grid cell ``(row, col) = divmod(p - 1, 6)``; in
UV space that is ``u in [col/6, (col+1)/6)`` and ``v in [row/3, (row+1)/3)``.
A texel belongs to the cell containing its center ``((c+.5)/res, (r+.5)/res)``,
so any square resolution works, divisible or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

PART_COUNT = 18
GRID_COLS = 6
GRID_ROWS = 3


def part_cell_uv(part: int) -> tuple[float, float, float, float]:
    """``(u0, u1, v0, v1)`` bounds of a part cell in UV space."""
    row, col = divmod(part - 1, GRID_COLS)
    return col / GRID_COLS, (col + 1) / GRID_COLS, row / GRID_ROWS, (row + 1) / GRID_ROWS


@lru_cache(maxsize=32)
def _part_map(resolution: int) -> np.ndarray:
    idx = np.arange(resolution)
    gcol = ((2 * idx + 1) * GRID_COLS) // (2 * resolution)
    grow = ((2 * idx + 1) * GRID_ROWS) // (2 * resolution)
    pm = (grow[:, None] * GRID_COLS + gcol[None, :] + 1).astype(np.int16)
    pm.setflags(write=False)
    return pm


def part_map(resolution: int) -> np.ndarray:
    """``(res, res)`` array of part labels 1..18."""
    return _part_map(int(resolution))


@lru_cache(maxsize=32)
def _cell_bounds(resolution: int) -> np.ndarray:
    idx = np.arange(resolution)
    gcol = ((2 * idx + 1) * GRID_COLS) // (2 * resolution)
    grow = ((2 * idx + 1) * GRID_ROWS) // (2 * resolution)
    out = np.zeros((PART_COUNT + 1, 4), dtype=np.int64)
    for p in range(1, PART_COUNT + 1):
        row, col = divmod(p - 1, GRID_COLS)
        cols = np.nonzero(gcol == col)[0]
        rows = np.nonzero(grow == row)[0]
        if cols.size == 0 or rows.size == 0:
            raise ValueError(f"resolution {resolution} leaves part {p} without texels")
        out[p] = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    out.setflags(write=False)
    return out


def cell_bounds(resolution: int) -> np.ndarray:
    """Row ``p`` holds ``(r0, r1, c0, c1)`` texel bounds of part ``p``."""
    return _cell_bounds(int(resolution))


def cell_slices(part: int, resolution: int) -> tuple[slice, slice]:
    r0, r1, c0, c1 = cell_bounds(resolution)[part]
    return slice(r0, r1), slice(c0, c1)


def texel_uv(resolution: int) -> np.ndarray:
    """UV coordinates of all texel centers, shape ``(res, res, 2)``."""
    c = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(c, c)
    return np.stack([u, v], axis=-1)


@dataclass(eq=False)
class TextureAtlas:
    color: np.ndarray  # (res, res, 3) uint8
    valid: np.ndarray  # (res, res) bool

    def __post_init__(self):
        self.color = np.array(self.color, dtype=np.uint8, order="C")
        self.valid = np.array(self.valid, dtype=bool, order="C")
        res = self.color.shape[0]
        if self.color.shape != (res, res, 3) or self.valid.shape != (res, res):
            raise ValueError(f"atlas must be square RGB, got {self.color.shape} / {self.valid.shape}")
        cell_bounds(res)  # validates that every part has texels
        self.color[~self.valid] = 0

    @classmethod
    def blank(cls, resolution: int) -> "TextureAtlas":
        return cls(np.zeros((resolution, resolution, 3), np.uint8), np.zeros((resolution, resolution), bool))

    @classmethod
    def full(cls, color: np.ndarray) -> "TextureAtlas":
        return cls(color, np.ones(color.shape[:2], bool))

    @property
    def resolution(self) -> int:
        return self.color.shape[0]

    @property
    def is_complete(self) -> bool:
        return bool(self.valid.all())

    def copy(self) -> "TextureAtlas":
        return TextureAtlas(self.color.copy(), self.valid.copy())

    def __eq__(self, other):
        if not isinstance(other, TextureAtlas):
            return NotImplemented
        return np.array_equal(self.color, other.color) and np.array_equal(self.valid, other.valid)

    def part_texels(self, part: int) -> np.ndarray:
        return part_map(self.resolution) == part

    def sample(self, uv: np.ndarray, parts: np.ndarray) -> np.ndarray:
        """Bilinear lookup at UV points, clamped to each point's own part cell.

        Returns float RGB in 0..255. Clamping keeps neighbouring cells from
        bleeding into each other at island borders.
        """
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        parts = np.asarray(parts).reshape(-1)
        res = self.resolution
        b = cell_bounds(res)[parts]
        x = np.clip(uv[:, 0] * res - 0.5, b[:, 2], b[:, 3] - 1)
        y = np.clip(uv[:, 1] * res - 0.5, b[:, 0], b[:, 1] - 1)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = np.minimum(x0 + 1, b[:, 3] - 1)
        y1 = np.minimum(y0 + 1, b[:, 1] - 1)
        fx = (x - x0)[:, None]
        fy = (y - y0)[:, None]
        c = self.color.astype(np.float64)
        top = c[y0, x0] * (1 - fx) + c[y0, x1] * fx
        bot = c[y1, x0] * (1 - fx) + c[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    # -- PNG pair io -----------------------------------------------------

    def save_png(self, color_path, mask_path) -> None:
        from .imageio import write_png

        write_png(color_path, self.color)
        write_png(mask_path, np.where(self.valid, 255, 0).astype(np.uint8))

    @classmethod
    def load_png(cls, color_path, mask_path) -> "TextureAtlas":
        from .imageio import read_png

        color = read_png(color_path)
        mask = read_png(mask_path)
        if mask.ndim == 3:
            mask = mask[..., 0]
        return cls(color[..., :3], mask >= 128)


def atlas_paths(prefix) -> tuple[Path, Path]:
    """Conventional ``<prefix>.png`` / ``<prefix>_mask.png`` pair."""
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".png"), prefix.with_name(prefix.name + "_mask.png")
