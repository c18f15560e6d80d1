"""Two-stream (pose keypoints + inertial) activity recognition with decision-level fusion."""

from .estimators import InertialStreamClassifier, VisionStreamClassifier
from .fusion import ScoreFusionClassifier, compare_streams, evaluate, fuse_average, fuse_batch, fuse_max
from .models import InertialStreamNet, TrainConfig, VisionStreamNet, build_inertial_net, build_vision_net

__version__ = "0.1.0"

__all__ = [
    "InertialStreamClassifier",
    "InertialStreamNet",
    "ScoreFusionClassifier",
    "TrainConfig",
    "VisionStreamClassifier",
    "VisionStreamNet",
    "build_inertial_net",
    "build_vision_net",
    "compare_streams",
    "evaluate",
    "fuse_average",
    "fuse_batch",
    "fuse_max",
]
