from .predictor import NoiseModel, estimate_dimensions, simulate_predictor
from .ransac import PoseEstimate, RansacConfig, camera_to_world, ransac_pnp
from .solvers import CorrespondenceSet, epnp, pnp_epnp, refine_pose, reprojection_errors

__all__ = [
    "CorrespondenceSet",
    "NoiseModel",
    "PoseEstimate",
    "RansacConfig",
    "camera_to_world",
    "epnp",
    "estimate_dimensions",
    "pnp_epnp",
    "ransac_pnp",
    "refine_pose",
    "reprojection_errors",
    "simulate_predictor",
]
