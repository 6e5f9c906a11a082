"""Kinematic calibration of serial arms from socket-constrained joint recordings.

A tool with two sockets a known distance apart is fixed in the workspace. A
ball on the flange is seated in each socket many times in different
nullspace configurations; the geometry is then fitted so that every recording
of a socket maps to one point and the two points sit the known distance apart.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationOptions,
    CalibrationResult,
    CostBreakdown,
    FeasibilityResult,
    SocketStatistics,
    cost,
    cost_gradient,
    distortion_error,
    insertion_feasibility,
    mean_absolute_error,
    optimize,
    removed_error_percent,
    socket_statistics,
)
from .dataset import (
    CalibrationDataset,
    SocketSet,
    ToolPlacement,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .estimator import KinematicCalibrator
from .ik import ik_to_point
from .kinematics import (
    FrameSpec,
    HomogeneousTransform,
    JointKind,
    KinematicChain,
    bcp_positions,
    forward_kinematics,
    pack_params,
    param_jacobian,
    rodrigues,
    unpack_params,
)
from .synth import SyntheticScenario, generate_dataset, perturb_model, run_experiment
from .urdf import RobotDescription, parse_description, write_description

__all__ = [
    "CalibrationDataset", "CalibrationOptions", "CalibrationResult", "CostBreakdown",
    "FeasibilityResult", "FrameSpec", "HomogeneousTransform", "JointKind",
    "KinematicCalibrator", "KinematicChain", "RobotDescription", "SocketSet",
    "SocketStatistics", "SyntheticScenario", "ToolPlacement", "bcp_positions", "cost",
    "cost_gradient", "distortion_error", "forward_kinematics", "generate_dataset",
    "ik_to_point", "insertion_feasibility", "load_dataset", "mean_absolute_error",
    "optimize", "pack_params", "param_jacobian", "parse_description", "perturb_model",
    "removed_error_percent", "rodrigues", "run_experiment", "save_dataset",
    "socket_statistics", "unpack_params", "validate_dataset", "write_description",
]
