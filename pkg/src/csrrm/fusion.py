"""Global integration of the two branch features.

The main head stacks the RGB and semantic vectors into a 2 x c map, runs
a shared residual MLP over each row, fuses the rows with a per-channel
two-tap depth-wise kernel, and classifies. Two ablation heads (plain
concatenation and semantic gating) share the same entry points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat,
    dropout,
    gelu,
    hadamard,
    matmul,
    reduce_sum,
    scalar_mul,
    sigmoid,
    stack,
    take_row,
)
from .blocks import GlobalFeature, kaiming_uniform, zeros_param

__all__ = [
    "FusionParams",
    "ConcatHeadParams",
    "GatingHeadParams",
    "init_fusion_params",
    "init_concat_head",
    "init_gating_head",
    "stack_features",
    "residual_mlp",
    "strip_dw_conv",
    "classify",
    "fuse_depthwise",
    "fuse_concat",
    "fuse_semantic_gating",
]

MLP_DROPOUT = 0.1
HEAD_DROPOUT = 0.8


@dataclass
class FusionParams:
    """Residual MLP + depth-wise fusion kernel + final classifier."""

    wm: Tensor  # (hidden, c)
    bm: Tensor  # (hidden,)
    wn: Tensor  # (c, hidden)
    bn: Tensor  # (c,)
    dw: Tensor  # (2, c), one two-tap filter per channel
    cls_w: Tensor  # (num_classes, c)
    cls_b: Tensor  # (num_classes,)
    mlp_dropout: float = MLP_DROPOUT
    head_dropout: float = HEAD_DROPOUT

    @property
    def feature_dim(self) -> int:
        return self.dw.shape[1]


def init_fusion_params(
    feature_dim: int,
    hidden: int,
    num_classes: int,
    rng: np.random.Generator,
    mlp_dropout: float = MLP_DROPOUT,
    head_dropout: float = HEAD_DROPOUT,
) -> FusionParams:
    if hidden < 1:
        raise ValueError(f"hidden dim must be positive, got {hidden}")
    return FusionParams(
        wm=kaiming_uniform((hidden, feature_dim), feature_dim, rng),
        bm=zeros_param((hidden,)),
        wn=kaiming_uniform((feature_dim, hidden), hidden, rng),
        bn=zeros_param((feature_dim,)),
        # both taps at 0.5: fusion starts out as plain averaging
        dw=Tensor(np.full((2, feature_dim), 0.5), requires_grad=True),
        cls_w=kaiming_uniform((num_classes, feature_dim), feature_dim, rng),
        cls_b=zeros_param((num_classes,)),
        mlp_dropout=mlp_dropout,
        head_dropout=head_dropout,
    )


@dataclass
class ConcatHeadParams:
    w: Tensor  # (num_classes, 2c)
    b: Tensor
    head_dropout: float = HEAD_DROPOUT


def init_concat_head(
    feature_dim: int, num_classes: int, rng: np.random.Generator
) -> ConcatHeadParams:
    return ConcatHeadParams(
        w=kaiming_uniform((num_classes, 2 * feature_dim), 2 * feature_dim, rng),
        b=zeros_param((num_classes,)),
    )


@dataclass
class GatingHeadParams:
    w: Tensor  # (num_classes, c)
    b: Tensor
    head_dropout: float = HEAD_DROPOUT


def init_gating_head(
    feature_dim: int, num_classes: int, rng: np.random.Generator
) -> GatingHeadParams:
    return GatingHeadParams(
        w=kaiming_uniform((num_classes, feature_dim), feature_dim, rng),
        b=zeros_param((num_classes,)),
    )


def stack_features(fr: GlobalFeature, fs: GlobalFeature) -> Tensor:
    """Row 0 = RGB feature, row 1 = semantic feature, fixed order."""
    if fr.vector.shape != fs.vector.shape:
        raise ShapeError(
            f"stack_features: lengths differ, {fr.vector.shape} vs {fs.vector.shape}"
        )
    return stack([fr.vector, fs.vector])


def residual_mlp(
    fp: Tensor,
    p: FusionParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Row-wise residual MLP with shared weights:
    row + gelu(Wn . drop(gelu(Wm . row + bm)) + bn)."""
    if fp.value.ndim != 2 or fp.shape[0] != 2 or fp.shape[1] != p.feature_dim:
        raise ShapeError(
            f"residual_mlp: expected (2, {p.feature_dim}), got {fp.shape}"
        )
    rows = []
    for i in range(2):
        row = take_row(fp, i)
        h = gelu(add(matmul(p.wm, row), p.bm))
        h = dropout(h, p.mlp_dropout, training, rng)
        z = gelu(add(matmul(p.wn, h), p.bn))
        rows.append(add(row, z))
    return stack(rows)


def strip_dw_conv(fpp: Tensor, dw_kernel: Tensor) -> Tensor:
    """Per-channel two-tap fusion: out[m] = K[0,m]*F[0,m] + K[1,m]*F[1,m]."""
    if fpp.value.ndim != 2 or fpp.shape[0] != 2:
        raise ShapeError(f"strip_dw_conv: expected (2, c) input, got {fpp.shape}")
    if dw_kernel.shape != fpp.shape:
        raise ShapeError(
            f"strip_dw_conv: kernel {dw_kernel.shape} does not match input {fpp.shape}"
        )
    return reduce_sum(hadamard(dw_kernel, fpp), axis=0)


def classify(
    fo: Tensor,
    p: FusionParams | ConcatHeadParams | GatingHeadParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Linear classifier over the fused vector, heavy dropout at train time."""
    w = p.cls_w if isinstance(p, FusionParams) else p.w
    b = p.cls_b if isinstance(p, FusionParams) else p.b
    if fo.value.ndim != 1 or fo.shape[0] != w.shape[1]:
        raise ShapeError(
            f"classify: feature {fo.shape} does not match classifier {w.shape}"
        )
    return add(matmul(w, dropout(fo, p.head_dropout, training, rng)), b)


def fuse_depthwise(
    fr: GlobalFeature,
    fs: GlobalFeature,
    p: FusionParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    fpp = residual_mlp(stack_features(fr, fs), p, training, rng)
    return classify(strip_dw_conv(fpp, p.dw), p, training, rng)


def fuse_concat(
    fr: GlobalFeature,
    fs: GlobalFeature,
    p: ConcatHeadParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Ablation head: classifier over the 2c concatenation."""
    if fr.vector.shape != fs.vector.shape:
        raise ShapeError(
            f"fuse_concat: lengths differ, {fr.vector.shape} vs {fs.vector.shape}"
        )
    return classify(concat([fr.vector, fs.vector]), p, training, rng)


def fuse_semantic_gating(
    fr: GlobalFeature,
    fs: GlobalFeature,
    p: GatingHeadParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Ablation head: gate the RGB feature by the sigmoid of the semantic
    one, keep a residual path, classify: cls(fr * sigmoid(fs) + fr)."""
    if fr.vector.shape != fs.vector.shape:
        raise ShapeError(
            f"fuse_semantic_gating: lengths differ, "
            f"{fr.vector.shape} vs {fs.vector.shape}"
        )
    gated = add(hadamard(fr.vector, sigmoid(fs.vector)), fr.vector)
    return classify(gated, p, training, rng)
