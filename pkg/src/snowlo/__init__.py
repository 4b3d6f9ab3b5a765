"""Snow-robust LiDAR odometry.

Frames are preprocessed, organised in a four-level FPS pyramid and weighted
per point by a patch spatial-autocorrelation score, an intensity threshold
mask and a point predictor before coarse-to-fine weighted point-to-plane
registration.
"""

from .cloud import PointCloud, Pyramid, build_pyramid, estimate_normals, fps, preprocess
from .errors import SnowLOError
from .pipeline import OdometryPipeline, PipelineConfig, run_ablation, run_odometry
from .pose import Pose, compose, pose_error
from .trajectory import DriftMetrics, Trajectory, kitti_metrics

__version__ = "0.1.0"

__all__ = [
    "DriftMetrics",
    "OdometryPipeline",
    "PipelineConfig",
    "PointCloud",
    "Pose",
    "Pyramid",
    "SnowLOError",
    "Trajectory",
    "build_pyramid",
    "compose",
    "estimate_normals",
    "fps",
    "kitti_metrics",
    "pose_error",
    "preprocess",
    "run_ablation",
    "run_odometry",
]
