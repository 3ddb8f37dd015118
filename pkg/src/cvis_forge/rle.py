"""COCO-style uncompressed run-length masks (column-major, zeros run first)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RLE:
    height: int
    width: int
    counts: tuple

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "RLE":
        h, w = d["size"]
        counts = tuple(int(c) for c in d["counts"])
        if any(c < 0 for c in counts) or sum(counts) != h * w:
            raise ValueError(f"RLE counts do not cover a {h}x{w} mask")
        return cls(int(h), int(w), counts)

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))


def rle_encode(mask: np.ndarray) -> RLE:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return RLE(h, w, ())
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return RLE(h, w, tuple(int(r) for r in runs))


def rle_decode(rle: RLE) -> np.ndarray:
    values = np.zeros(len(rle.counts), bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.width, rle.height)).T.copy()
