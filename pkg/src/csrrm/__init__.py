"""Confidence-filtered semantic score tensors, a channel-attention
backbone, and depth-wise fusion of semantic and RGB global features,
built on a small reverse-mode autodiff core.
"""

from .autodiff import ShapeError, Tape, Tensor
from .blocks import (
    BackboneConfig,
    ChamParams,
    GlobalFeature,
    StageConfig,
    basic_block,
    cham_apply,
    cham_map,
    rgb_branch_forward,
    srrm_forward,
)
from .fixtures import FixtureError, read_fixture, write_fixture
from .fusion import (
    FusionParams,
    classify,
    fuse_concat,
    fuse_depthwise,
    fuse_semantic_gating,
    residual_mlp,
    stack_features,
    strip_dw_conv,
)
from .model import CsrrmModel, init_model
from .optim import AligOptimizer, NonFiniteError, SgdOptimizer
from .score_filter import (
    FilterConfig,
    ScoreTensor,
    ambiguity_reduction_stats,
    confidence_filter,
    hard_labels,
)
from .synthetic import SceneRecipe, SyntheticScene, generate, vocabulary_restrict
from .training import (
    ExperimentConfig,
    RunMetrics,
    ablate,
    run_experiment,
    ten_crop_eval,
    train_two_stage,
)

__version__ = "0.1.0"

__all__ = [
    "ShapeError",
    "Tape",
    "Tensor",
    "BackboneConfig",
    "ChamParams",
    "GlobalFeature",
    "StageConfig",
    "basic_block",
    "cham_apply",
    "cham_map",
    "rgb_branch_forward",
    "srrm_forward",
    "FixtureError",
    "read_fixture",
    "write_fixture",
    "FusionParams",
    "classify",
    "fuse_concat",
    "fuse_depthwise",
    "fuse_semantic_gating",
    "residual_mlp",
    "stack_features",
    "strip_dw_conv",
    "CsrrmModel",
    "init_model",
    "AligOptimizer",
    "NonFiniteError",
    "SgdOptimizer",
    "FilterConfig",
    "ScoreTensor",
    "ambiguity_reduction_stats",
    "confidence_filter",
    "hard_labels",
    "SceneRecipe",
    "SyntheticScene",
    "generate",
    "vocabulary_restrict",
    "ExperimentConfig",
    "RunMetrics",
    "ablate",
    "run_experiment",
    "ten_crop_eval",
    "train_two_stage",
]
