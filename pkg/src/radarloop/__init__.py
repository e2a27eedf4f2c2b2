"""Loop closure detection and verification for narrow-FOV 4D imaging radar
SLAM, validated against a built-in synthetic radar-world simulator."""

from .config import PipelineConfig
from .geometry import Pose, ViewpointMode, compose, geodesic_angle, \
    yaw_rotation
from .pipeline import SlamResult, run_slam, train_classifier
from .simulator import RadarConfig, RadarScan, Scene
from .verification import LoopClassifier

__all__ = [
    "PipelineConfig", "Pose", "ViewpointMode", "compose", "geodesic_angle",
    "yaw_rotation", "SlamResult", "run_slam", "train_classifier",
    "RadarConfig", "RadarScan", "Scene", "LoopClassifier",
]

__version__ = "0.1.0"
