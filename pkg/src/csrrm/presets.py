"""Preset backbone configurations.

Full scale mirrors the published architecture: a 7x7/stride-2 stem with
no trailing max pool, bottleneck stages, feature dim 2048. The filtered
semantic branch keeps only the last three ResNet-50 stages; the
unfiltered comparator keeps all four, which is what the filter ablation
compares against. Desk scale preserves every structural mechanism at
CPU-minutes size (feature dim 128).
"""
from __future__ import annotations

from .blocks import BackboneConfig, StageConfig

__all__ = [
    "FULL_LABELS",
    "FULL_FEATURE_DIM",
    "full_semantic_backbone",
    "full_unfiltered_backbone",
    "full_rgb_backbone",
    "desk_semantic_backbone",
    "desk_rgb_backbone",
]

FULL_LABELS = 150
FULL_FEATURE_DIM = 2048


def full_semantic_backbone(labels: int = FULL_LABELS, cham: bool = True) -> BackboneConfig:
    """Filtered-score branch: stem + ResNet-50 stages conv3/4/5, c = 2048."""
    return BackboneConfig(
        in_channels=labels,
        stem_channels=64,
        stages=(
            StageConfig(width=512, mid=128, blocks=4, stride=2, cham=cham),
            StageConfig(width=1024, mid=256, blocks=6, stride=2, cham=cham),
            StageConfig(width=2048, mid=512, blocks=3, stride=2, cham=cham),
        ),
    )


def full_unfiltered_backbone(labels: int = FULL_LABELS, cham: bool = False) -> BackboneConfig:
    """Raw-score comparator: all four ResNet-50 stages, no post-stem pool."""
    return BackboneConfig(
        in_channels=labels,
        stem_channels=64,
        stages=(
            StageConfig(width=256, mid=64, blocks=3, stride=1, cham=cham),
            StageConfig(width=512, mid=128, blocks=4, stride=2, cham=cham),
            StageConfig(width=1024, mid=256, blocks=6, stride=2, cham=cham),
            StageConfig(width=2048, mid=512, blocks=3, stride=2, cham=cham),
        ),
    )


def full_rgb_backbone() -> BackboneConfig:
    """RGB branch: ResNet-50 shape without the post-stem pooling layer."""
    return BackboneConfig(
        in_channels=3,
        stem_channels=64,
        stages=(
            StageConfig(width=256, mid=64, blocks=3, stride=1),
            StageConfig(width=512, mid=128, blocks=4, stride=2),
            StageConfig(width=1024, mid=256, blocks=6, stride=2),
            StageConfig(width=2048, mid=512, blocks=3, stride=2),
        ),
    )


def desk_semantic_backbone(
    labels: int = 12, feature_dim: int = 128, cham: bool = True
) -> BackboneConfig:
    """16x16-grid scale: stride-1 stem on the halved input, three stages."""
    if feature_dim % 4:
        raise ValueError(f"feature_dim must be divisible by 4, got {feature_dim}")
    return BackboneConfig(
        in_channels=labels,
        stem_channels=16,
        stem_stride=1,
        stages=(
            StageConfig(width=feature_dim // 4, mid=feature_dim // 8,
                        blocks=1, stride=1, cham=cham),
            StageConfig(width=feature_dim // 2, mid=feature_dim // 4,
                        blocks=1, stride=2, cham=cham),
            StageConfig(width=feature_dim, mid=feature_dim // 2,
                        blocks=1, stride=2, cham=cham),
        ),
        cham_reduction=4,
    )


def desk_rgb_backbone(feature_dim: int = 128) -> BackboneConfig:
    if feature_dim % 4:
        raise ValueError(f"feature_dim must be divisible by 4, got {feature_dim}")
    return BackboneConfig(
        in_channels=3,
        stem_channels=16,
        stem_stride=2,
        stages=(
            StageConfig(width=feature_dim // 4, mid=feature_dim // 8, blocks=1, stride=1),
            StageConfig(width=feature_dim // 2, mid=feature_dim // 4, blocks=1, stride=2),
            StageConfig(width=feature_dim, mid=feature_dim // 2, blocks=1, stride=2),
        ),
    )
