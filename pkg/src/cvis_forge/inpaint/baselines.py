"""Classical hole filling: global mean color and inverse-distance KNN."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..atlas import TextureAtlas
from ..errors import InsufficientValidTexels, NoValidTexels


def fill_pure_color(atlas: TextureAtlas) -> TextureAtlas:
    """Every hole gets the mean RGB of all valid texels."""
    if not atlas.valid.any():
        raise NoValidTexels("atlas has no valid texels")
    out = atlas.copy()
    if atlas.is_complete:
        return out
    mean = atlas.color[atlas.valid].astype(np.float64).mean(axis=0)
    out.color[~atlas.valid] = np.clip(np.rint(mean), 0, 255).astype(np.uint8)
    out.valid[:] = True
    return out


def knn_weights(valid: np.ndarray, k: int):
    """Neighbour indices and inverse-distance weights for every invalid texel.

    Neighbours are the ``k`` valid texels nearest in (row, col) space; ties
    at equal distance go to the lower row-major index. Returns
    ``(hole_index, neighbour_index, weights)`` over flat texel indices.
    """
    h, w = valid.shape
    flat_valid = np.flatnonzero(valid.ravel())
    holes = np.flatnonzero(~valid.ravel())
    n_valid = flat_valid.size
    if n_valid < k:
        raise InsufficientValidTexels(f"need {k} valid texels, have {n_valid}")
    if holes.size == 0:
        return holes, np.zeros((0, k), np.int64), np.zeros((0, k))
    vr, vc = np.divmod(flat_valid, w)
    hr, hc = np.divmod(holes, w)
    tree = cKDTree(np.stack([vr, vc], 1).astype(np.float64))
    dist, _ = tree.query(np.stack([hr, hc], 1).astype(np.float64), k=k)
    kth = np.asarray(dist).reshape(len(holes), -1)[:, -1]
    nbrs = np.empty((holes.size, k), np.int64)
    weights = np.empty((holes.size, k))
    # squared grid distances are integers, so the tie handling below is exact
    cand_lists = tree.query_ball_point(np.stack([hr, hc], 1).astype(np.float64), kth * (1 + 1e-9) + 1e-9)
    for i, cand in enumerate(cand_lists):
        cand = np.asarray(cand, dtype=np.int64)  # positions into flat_valid, ascending index order
        d2 = (vr[cand] - hr[i]) ** 2 + (vc[cand] - hc[i]) ** 2
        order = np.lexsort((flat_valid[cand], d2))[:k]
        nbrs[i] = flat_valid[cand[order]]
        weights[i] = 1.0 / np.sqrt(d2[order])
    return holes, nbrs, weights


def fill_knn(atlas: TextureAtlas, k: int = 8) -> TextureAtlas:
    """Each hole becomes the inverse-distance-weighted mean of its k nearest valid texels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = atlas.copy()
    holes, nbrs, weights = knn_weights(atlas.valid, k)
    if holes.size == 0:
        return out
    colors = atlas.color.reshape(-1, 3).astype(np.float64)
    filled = np.einsum("nk,nkc->nc", weights, colors[nbrs]) / weights.sum(axis=1, keepdims=True)
    flat = out.color.reshape(-1, 3)
    flat[holes] = np.clip(np.rint(filled), 0, 255).astype(np.uint8)
    out.valid[:] = True
    return out
