"""Distribution-to-distribution point cloud registration.

Each cloud is summarized by a Gaussian mixture fitted under Sinkhorn
(optimal transport) constraints; components are matched by partial
transport, points are matched inside matched components, and the pose is
recovered by RANSAC with a Kabsch refit.
"""

from .core import PointCloud, RigidTransform, apply_transform, compose, compute_descriptors, invert
from .errors import (
    DegenerateConfiguration,
    DegenerateNeighborhood,
    DimensionMismatch,
    NoConsensus,
    NoCorrespondences,
    NoMatches,
    ParseError,
    RegistrationError,
    StageError,
)
from .estimation import RansacConfig, RegistrationResult, ransac_register, weighted_kabsch
from .gmm import FitConfig, GmmModel, fit
from .matching import build_patches, collect_correspondences, match_clusters
from .pipeline import PipelineConfig, preset, register
from .sinkhorn import TransportProblem, solve, solve_with_slack
from .synth import SyntheticSpec, generate_pair

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "RigidTransform", "apply_transform", "compose", "compute_descriptors", "invert",
    "RegistrationError", "StageError", "NoMatches", "NoCorrespondences", "NoConsensus",
    "DegenerateConfiguration", "DegenerateNeighborhood", "ParseError", "DimensionMismatch",
    "RansacConfig", "RegistrationResult", "ransac_register", "weighted_kabsch",
    "FitConfig", "GmmModel", "fit",
    "build_patches", "collect_correspondences", "match_clusters",
    "PipelineConfig", "preset", "register",
    "TransportProblem", "solve", "solve_with_slack",
    "SyntheticSpec", "generate_pair",
]
