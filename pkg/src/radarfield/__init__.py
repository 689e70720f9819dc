"""Radar spatial-perception toolkit."""

from .detect import CfarConfig, PolarDetection, detect_cube, os_cfar_1d
from .doppler import (
    RansacConfig,
    consistency_filter,
    estimate_ego_velocity_ls,
    estimate_ego_velocity_ransac,
    expected_doppler,
)
from .metrics import chamfer_distance, cpr, evaluate, f_score
from .radar_model import (
    CartesianPoint,
    PolarCoord,
    RadarCube,
    RadarIntrinsics,
    bin_to_polar,
    cartesian_to_polar,
    direction_vector,
    polar_to_bin,
    polar_to_cartesian,
)
from .registration import RegistrationConfig, RigidTransform, register_uncertain
from .uncertainty import (
    PolarSigmas,
    mahalanobis_sq,
    nll_gradients,
    nll_loss,
    propagate_covariance,
    propagation_jacobian,
)

__version__ = "0.1.0"
