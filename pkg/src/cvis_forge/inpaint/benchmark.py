"""Seeded held-out benchmark: net vs the two classical fills on procedural atlases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..atlas import TextureAtlas, cell_bounds
from ..textures import procedural_atlas
from .baselines import fill_knn, fill_pure_color
from .graphnet import GraphInpaintNet, inpaint_with_net, train

TRAIN_SEED_BASE = 1000
EVAL_SEED_BASE = 0


@dataclass
class BenchmarkResult:
    net_mae: float
    pure_color_mae: float
    knn_mae: float
    losses: list


def masked_eval_set(count: int = 20, resolution: int = 48, parts_hidden: int = 4, seed: int = 123):
    """``(truth, masked)`` atlas pairs with whole parts hidden."""
    rng = np.random.default_rng(seed)
    bounds = cell_bounds(resolution)
    pairs = []
    for i in range(count):
        truth = procedural_atlas(EVAL_SEED_BASE + i, resolution)
        valid = truth.valid.copy()
        for p in rng.choice(np.arange(1, 19), parts_hidden, replace=False):
            r0, r1, c0, c1 = bounds[p]
            valid[r0:r1, c0:c1] = False
        pairs.append((truth, TextureAtlas(truth.color, valid)))
    return pairs


def hole_mae(filled: TextureAtlas, truth: TextureAtlas, holes: np.ndarray) -> float:
    return float(np.abs(filled.color[holes].astype(np.float64) - truth.color[holes]).mean())


def run_benchmark(steps: int = 600, lr: float = 5.0, resolution: int = 48, train_atlases: int = 32,
                  eval_atlases: int = 20, seed: int = 0, net: GraphInpaintNet | None = None) -> BenchmarkResult:
    if net is None:
        net = GraphInpaintNet(seed=seed)
        train_set = [procedural_atlas(TRAIN_SEED_BASE + i, resolution) for i in range(train_atlases)]
        losses = train(net, train_set, steps, lr=lr, seed=seed)
    else:
        losses = []
    scores = {"net": [], "pure": [], "knn": []}
    for truth, masked in masked_eval_set(eval_atlases, resolution):
        holes = ~masked.valid
        scores["net"].append(hole_mae(inpaint_with_net(net, masked), truth, holes))
        scores["pure"].append(hole_mae(fill_pure_color(masked), truth, holes))
        scores["knn"].append(hole_mae(fill_knn(masked, 8), truth, holes))
    return BenchmarkResult(float(np.mean(scores["net"])), float(np.mean(scores["pure"])),
                           float(np.mean(scores["knn"])), losses)
