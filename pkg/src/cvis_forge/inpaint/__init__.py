from .baselines import fill_knn, fill_pure_color
from .graphnet import (
    GraphInpaintNet,
    graph_forward,
    inpaint_with_net,
    load_weights,
    save_weights,
    train,
    train_step,
)

__all__ = [
    "GraphInpaintNet",
    "fill_knn",
    "fill_pure_color",
    "graph_forward",
    "inpaint_with_net",
    "load_weights",
    "save_weights",
    "train",
    "train_step",
]
