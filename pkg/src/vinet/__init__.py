"""Visual-inertial odometry as sequence learning, at desk scale, in numpy."""

from .lie import Pose, Twist, compose, exp_se3, inverse, log_se3
from .model import ModelConfig, VINet
from .simulator import SyncedSequence, TrajectorySpec, generate_trajectory
from .training import LossWeights, TrainConfig, train

__version__ = "0.1.0"
