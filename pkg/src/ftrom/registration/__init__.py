"""Sparse landmark registration: sensor, sampling, clustering, pairing, RBF warp."""

from ftrom.registration.clustering import (
    KMeansResult,
    LandmarkSet,
    boundary_landmarks,
    extract_endpoints,
    kmeans,
)
from ftrom.registration.correspondence import (
    Correspondence,
    assign_min_distance,
    correspond,
    hungarian,
)
from ftrom.registration.pipeline import (
    RegistrationParams,
    RegistrationResult,
    extract_landmarks,
    fit_alignment_warp,
    register_snapshot,
)
from ftrom.registration.rbf import (
    RbfWarp,
    kernel_matrix,
    rbf_eval,
    rbf_fit,
    wendland_c2,
)
from ftrom.registration.sampling import SampleSet, rejection_sample
from ftrom.registration.sensor import SensorField, edge_sensor, physical_gradient

__all__ = [
    "Correspondence",
    "KMeansResult",
    "LandmarkSet",
    "RbfWarp",
    "RegistrationParams",
    "RegistrationResult",
    "SampleSet",
    "SensorField",
    "assign_min_distance",
    "boundary_landmarks",
    "correspond",
    "edge_sensor",
    "extract_endpoints",
    "extract_landmarks",
    "fit_alignment_warp",
    "hungarian",
    "kernel_matrix",
    "kmeans",
    "physical_gradient",
    "rbf_eval",
    "rbf_fit",
    "register_snapshot",
    "rejection_sample",
    "wendland_c2",
]
