"""Enhanced Direct Delta Mush skinning with closed-form polar decomposition."""

from .deform import (
    OmegaTable,
    SkinWeights,
    deform_ddm,
    deform_delta_mush,
    deform_eddm,
    deform_lbs,
    precompute_omega,
)
from .mesh import SmoothingConfig, TriMesh, cotangent_weights, load_obj, save_obj, smooth
from .numerics import AffineTransform, DegenerateInput, factor_affine, polar_rotation, svd_rotation_oracle
from .rig import JointHierarchy, Pose, skinning_matrices, world_transforms

__version__ = "0.1.0"
