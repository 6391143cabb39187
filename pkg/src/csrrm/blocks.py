"""Learnable blocks: channel attention, bottleneck residuals, and the
two global-feature backbones (semantic score branch and RGB branch).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    conv2d,
    global_avg_pool,
    global_max_pool,
    matmul,
    relu,
    scale_channels,
    sigmoid,
)
from .score_filter import ScoreTensor

__all__ = [
    "ChamParams",
    "BlockParams",
    "StageParams",
    "BackboneParams",
    "StageConfig",
    "BackboneConfig",
    "GlobalFeature",
    "kaiming_uniform",
    "init_cham_params",
    "init_block_params",
    "init_backbone_params",
    "cham_map",
    "cham_apply",
    "basic_block",
    "backbone_forward",
    "srrm_forward",
    "rgb_branch_forward",
]


def kaiming_uniform(
    shape: tuple[int, ...], fan_in: int, rng: np.random.Generator
) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class ChamParams:
    """Shared bottleneck MLP of the channel attention map."""

    w0: Tensor  # (channels/reduction, channels)
    w1: Tensor  # (channels, channels/reduction)
    reduction: int

    @property
    def channels(self) -> int:
        return self.w1.shape[0]


def init_cham_params(
    channels: int, reduction: int, rng: np.random.Generator
) -> ChamParams:
    if channels % reduction != 0:
        raise ValueError(
            f"reduction {reduction} must divide channel count {channels}"
        )
    hidden = channels // reduction
    return ChamParams(
        w0=kaiming_uniform((hidden, channels), channels, rng),
        w1=kaiming_uniform((channels, hidden), hidden, rng),
        reduction=reduction,
    )


def cham_map(f: Tensor, p: ChamParams) -> Tensor:
    """Channel attention weights in (0,1): sigmoid of the summed shared-MLP
    responses to the average-pooled and max-pooled channel descriptors."""
    if f.value.ndim != 3 or f.shape[0] != p.channels:
        raise ShapeError(
            f"cham_map: feature map {f.shape} does not match {p.channels} channels"
        )

    def mlp(v: Tensor) -> Tensor:
        return matmul(p.w1, relu(matmul(p.w0, v)))

    return sigmoid(add(mlp(global_avg_pool(f)), mlp(global_max_pool(f))))


def cham_apply(f: Tensor, mc: Tensor) -> Tensor:
    """Residual re-weighting F + M_c * F with M_c broadcast over space."""
    return add(f, scale_channels(f, mc))


@dataclass
class BlockParams:
    """Bottleneck residual: 1x1 reduce, 3x3, 1x1 expand, optional projection."""

    c1_w: Tensor
    c1_b: Tensor
    c2_w: Tensor
    c2_b: Tensor
    c3_w: Tensor
    c3_b: Tensor
    proj_w: Tensor | None = None
    proj_b: Tensor | None = None


def init_block_params(
    in_channels: int,
    mid_channels: int,
    out_channels: int,
    stride: int,
    rng: np.random.Generator,
) -> BlockParams:
    needs_proj = stride != 1 or in_channels != out_channels
    return BlockParams(
        c1_w=kaiming_uniform((mid_channels, in_channels, 1, 1), in_channels, rng),
        c1_b=zeros_param((mid_channels,)),
        c2_w=kaiming_uniform(
            (mid_channels, mid_channels, 3, 3), mid_channels * 9, rng
        ),
        c2_b=zeros_param((mid_channels,)),
        c3_w=kaiming_uniform((out_channels, mid_channels, 1, 1), mid_channels, rng),
        c3_b=zeros_param((out_channels,)),
        proj_w=kaiming_uniform((out_channels, in_channels, 1, 1), in_channels, rng)
        if needs_proj
        else None,
        proj_b=zeros_param((out_channels,)) if needs_proj else None,
    )


def basic_block(x: Tensor, p: BlockParams, stride: int = 1) -> Tensor:
    y = relu(conv2d(x, p.c1_w, p.c1_b))
    y = relu(conv2d(y, p.c2_w, p.c2_b, stride=stride, padding=1))
    y = conv2d(y, p.c3_w, p.c3_b)
    if p.proj_w is not None:
        shortcut = conv2d(x, p.proj_w, p.proj_b, stride=stride)
    else:
        if x.shape != y.shape:
            raise ShapeError(
                f"basic_block: identity shortcut needs matching shapes, "
                f"got {x.shape} vs {y.shape}"
            )
        shortcut = x
    return relu(add(y, shortcut))


@dataclass(frozen=True)
class StageConfig:
    width: int        # output channels
    mid: int          # bottleneck width
    blocks: int
    stride: int       # applied by the first block
    cham: bool = False


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int
    stem_channels: int
    stages: tuple[StageConfig, ...]
    stem_kernel: int = 7
    stem_stride: int = 2
    stem_padding: int = 3
    cham_reduction: int = 16

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.stem_channels < 1:
            raise ValueError("channel counts must be positive")
        if not self.stages:
            raise ValueError("backbone needs at least one stage")
        for s in self.stages:
            if s.width < 1 or s.mid < 1 or s.blocks < 1 or s.stride < 1:
                raise ValueError(f"invalid stage config {s}")
            if s.cham and s.width % self.cham_reduction != 0:
                raise ValueError(
                    f"cham reduction {self.cham_reduction} must divide stage "
                    f"width {s.width}"
                )

    @property
    def feature_dim(self) -> int:
        return self.stages[-1].width


@dataclass
class StageParams:
    blocks: list[BlockParams]
    cham: ChamParams | None = None


@dataclass
class BackboneParams:
    stem_w: Tensor
    stem_b: Tensor
    stages: list[StageParams] = field(default_factory=list)


def init_backbone_params(
    cfg: BackboneConfig, rng: np.random.Generator
) -> BackboneParams:
    k = cfg.stem_kernel
    params = BackboneParams(
        stem_w=kaiming_uniform(
            (cfg.stem_channels, cfg.in_channels, k, k), cfg.in_channels * k * k, rng
        ),
        stem_b=zeros_param((cfg.stem_channels,)),
    )
    in_ch = cfg.stem_channels
    for s in cfg.stages:
        blocks = []
        for b in range(s.blocks):
            stride = s.stride if b == 0 else 1
            blocks.append(init_block_params(in_ch, s.mid, s.width, stride, rng))
            in_ch = s.width
        cham = (
            init_cham_params(s.width, cfg.cham_reduction, rng) if s.cham else None
        )
        params.stages.append(StageParams(blocks=blocks, cham=cham))
    return params


def backbone_forward(x: Tensor, cfg: BackboneConfig, params: BackboneParams) -> Tensor:
    """Stem conv, residual stages with optional per-stage channel attention,
    then global average pooling down to a feature vector."""
    if x.value.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ShapeError(
            f"backbone: input {x.shape} does not match {cfg.in_channels} channels"
        )
    f = relu(
        conv2d(x, params.stem_w, params.stem_b,
               stride=cfg.stem_stride, padding=cfg.stem_padding)
    )
    for scfg, sparams in zip(cfg.stages, params.stages):
        for b, bparams in enumerate(sparams.blocks):
            f = basic_block(f, bparams, stride=scfg.stride if b == 0 else 1)
        if sparams.cham is not None:
            f = cham_apply(f, cham_map(f, sparams.cham))
    return global_avg_pool(f)


@dataclass
class GlobalFeature:
    """A length-c branch summary, tagged with the branch that produced it."""

    vector: Tensor
    source: str  # "semantic" or "rgb"


def srrm_forward(
    m_filtered: ScoreTensor, cfg: BackboneConfig, params: BackboneParams
) -> GlobalFeature:
    if m_filtered.labels != cfg.in_channels:
        raise ShapeError(
            f"srrm_forward: score tensor has {m_filtered.labels} labels but the "
            f"backbone expects {cfg.in_channels}"
        )
    x = Tensor(m_filtered.channels_first())
    return GlobalFeature(vector=backbone_forward(x, cfg, params), source="semantic")


def rgb_branch_forward(
    image: Tensor, cfg: BackboneConfig, params: BackboneParams
) -> GlobalFeature:
    return GlobalFeature(vector=backbone_forward(image, cfg, params), source="rgb")
