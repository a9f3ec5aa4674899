"""Deformable oriented-point registration against PCA statistical shape models.

Builds shape models from corresponding triangle meshes, registers noisy
oriented point clouds to statistically deformed model surfaces, grades each
registration with chi-square confidence tiers, and ships a synthetic
leave-one-out simulation harness.
"""

from .confidence import (ConfidenceTier, chi2_cdf, chi2_inv, classify,
                         orientation_score, position_score)
from .mesh import (BarycentricLocation, MeshError, OrientedPoint,
                   SurfaceAccel, TriangleMesh, closest_point_brute_force,
                   closest_point_on_mesh, compute_vertex_normals,
                   hausdorff_distance, load_mesh, point_at, save_mesh)
from .noise import (KentNoise, NoiseError, PositionNoise, circular_sd,
                    compose_covariance, kent_from_sd, mahalanobis_sq,
                    match_nll, mean_angular_error, sample_noise,
                    sample_noise_batch, tangent_frame, tangent_frames)
from .registration import (Correspondence, MostLikelyMatcher,
                           RegistrationConfig, RegistrationError,
                           RegistrationResult, cost_and_gradient,
                           find_most_likely_match, optimize_parameters,
                           register, reject_outliers)
from .ssm import (ShapeCorpus, SsmError, StatisticalShapeModel, build_ssm,
                  deform_matched_point, instantiate, load_ssm, project,
                  save_ssm)
from .transform import SimilarityTransform

__version__ = "0.1.0"

__all__ = [
    "BarycentricLocation", "ConfidenceTier", "Correspondence", "KentNoise",
    "MeshError", "MostLikelyMatcher", "NoiseError", "OrientedPoint",
    "PositionNoise", "RegistrationConfig", "RegistrationError",
    "RegistrationResult", "ShapeCorpus", "SimilarityTransform", "SsmError",
    "StatisticalShapeModel", "SurfaceAccel", "TriangleMesh", "build_ssm",
    "chi2_cdf", "chi2_inv", "circular_sd", "classify",
    "closest_point_brute_force", "closest_point_on_mesh",
    "compose_covariance", "compute_vertex_normals", "cost_and_gradient",
    "deform_matched_point", "find_most_likely_match", "hausdorff_distance",
    "instantiate", "kent_from_sd", "load_mesh", "load_ssm", "mahalanobis_sq",
    "match_nll", "mean_angular_error", "optimize_parameters",
    "orientation_score", "point_at", "position_score", "project", "register",
    "reject_outliers", "sample_noise", "sample_noise_batch", "save_mesh",
    "save_ssm", "tangent_frame", "tangent_frames",
]
