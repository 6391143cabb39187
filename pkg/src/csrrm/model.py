"""The assembled two-branch classifier: confidence-filter preprocessing,
semantic and RGB backbones, stage-1 branch heads, and a fusion head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, matmul, softmax
from .blocks import (
    BackboneConfig,
    BackboneParams,
    GlobalFeature,
    init_backbone_params,
    kaiming_uniform,
    rgb_branch_forward,
    srrm_forward,
    zeros_param,
)
from .fusion import (
    ConcatHeadParams,
    FusionParams,
    GatingHeadParams,
    fuse_concat,
    fuse_depthwise,
    fuse_semantic_gating,
    init_concat_head,
    init_fusion_params,
    init_gating_head,
)
from .score_filter import FilterConfig, ScoreTensor, confidence_filter

__all__ = [
    "CsrrmModel",
    "init_model",
    "backbone_named_params",
    "FUSION_KINDS",
]

FUSION_KINDS = ("dw", "concat", "gating")


@dataclass
class CsrrmModel:
    semantic_cfg: BackboneConfig
    rgb_cfg: BackboneConfig
    filter_cfg: FilterConfig
    num_classes: int
    fusion_kind: str
    semantic_params: BackboneParams
    rgb_params: BackboneParams
    semantic_head_w: Tensor
    semantic_head_b: Tensor
    rgb_head_w: Tensor
    rgb_head_b: Tensor
    fusion: FusionParams | ConcatHeadParams | GatingHeadParams

    # --- preprocessing -------------------------------------------------
    def filter_score(self, score: ScoreTensor) -> ScoreTensor:
        if self.filter_cfg.window == 1:
            return score
        return confidence_filter(score, self.filter_cfg)

    # --- branch forwards ------------------------------------------------
    def semantic_feature(self, score: ScoreTensor) -> GlobalFeature:
        return srrm_forward(self.filter_score(score), self.semantic_cfg,
                            self.semantic_params)

    def rgb_feature(self, rgb: np.ndarray) -> GlobalFeature:
        return rgb_branch_forward(Tensor(rgb), self.rgb_cfg, self.rgb_params)

    def semantic_logits(self, feature: GlobalFeature) -> Tensor:
        return add(matmul(self.semantic_head_w, feature.vector), self.semantic_head_b)

    def rgb_logits(self, feature: GlobalFeature) -> Tensor:
        return add(matmul(self.rgb_head_w, feature.vector), self.rgb_head_b)

    # --- fusion ----------------------------------------------------------
    def fused_logits(
        self,
        fr: GlobalFeature,
        fs: GlobalFeature,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        if self.fusion_kind == "dw":
            return fuse_depthwise(fr, fs, self.fusion, training, rng)
        if self.fusion_kind == "concat":
            return fuse_concat(fr, fs, self.fusion, training, rng)
        if self.fusion_kind == "gating":
            return fuse_semantic_gating(fr, fs, self.fusion, training, rng)
        raise ValueError(f"unknown fusion kind {self.fusion_kind!r}")

    # --- inference -------------------------------------------------------
    def predict_proba(self, score: ScoreTensor, rgb: np.ndarray) -> np.ndarray:
        fr = self.rgb_feature(rgb)
        fs = self.semantic_feature(score)
        return softmax(self.fused_logits(fr, fs), axis=-1).value

    def predict_branch_proba(
        self, which: str, score: ScoreTensor, rgb: np.ndarray
    ) -> np.ndarray:
        if which == "semantic":
            logits = self.semantic_logits(self.semantic_feature(score))
        elif which == "rgb":
            logits = self.rgb_logits(self.rgb_feature(rgb))
        else:
            raise ValueError(f"unknown branch {which!r}")
        return softmax(logits, axis=-1).value

    # --- parameter registry ----------------------------------------------
    def named_params(self) -> dict[str, Tensor]:
        out = backbone_named_params(self.semantic_params, "semantic")
        out |= backbone_named_params(self.rgb_params, "rgb")
        out["semantic_head.w"] = self.semantic_head_w
        out["semantic_head.b"] = self.semantic_head_b
        out["rgb_head.w"] = self.rgb_head_w
        out["rgb_head.b"] = self.rgb_head_b
        out |= fusion_named_params(self.fusion)
        return out

    def branch_param_names(self) -> set[str]:
        return {
            name
            for name in self.named_params()
            if name.startswith(("semantic.", "rgb."))
        }

    def branch_params(self) -> dict[str, Tensor]:
        named = self.named_params()
        return {n: named[n] for n in self.branch_param_names()}


def backbone_named_params(params: BackboneParams, prefix: str) -> dict[str, Tensor]:
    out = {f"{prefix}.stem.w": params.stem_w, f"{prefix}.stem.b": params.stem_b}
    for i, stage in enumerate(params.stages):
        for j, block in enumerate(stage.blocks):
            base = f"{prefix}.s{i}.b{j}"
            out[f"{base}.c1.w"] = block.c1_w
            out[f"{base}.c1.b"] = block.c1_b
            out[f"{base}.c2.w"] = block.c2_w
            out[f"{base}.c2.b"] = block.c2_b
            out[f"{base}.c3.w"] = block.c3_w
            out[f"{base}.c3.b"] = block.c3_b
            if block.proj_w is not None:
                out[f"{base}.proj.w"] = block.proj_w
                out[f"{base}.proj.b"] = block.proj_b
        if stage.cham is not None:
            out[f"{prefix}.s{i}.cham.w0"] = stage.cham.w0
            out[f"{prefix}.s{i}.cham.w1"] = stage.cham.w1
    return out


def fusion_named_params(
    fusion: FusionParams | ConcatHeadParams | GatingHeadParams,
) -> dict[str, Tensor]:
    if isinstance(fusion, FusionParams):
        return {
            "fusion.wm": fusion.wm,
            "fusion.bm": fusion.bm,
            "fusion.wn": fusion.wn,
            "fusion.bn": fusion.bn,
            "fusion.dw": fusion.dw,
            "fusion.cls.w": fusion.cls_w,
            "fusion.cls.b": fusion.cls_b,
        }
    return {"fusion.cls.w": fusion.w, "fusion.cls.b": fusion.b}


def init_model(
    semantic_cfg: BackboneConfig,
    rgb_cfg: BackboneConfig,
    filter_window: int,
    num_classes: int,
    fusion_kind: str,
    hidden: int,
    rng: np.random.Generator,
) -> CsrrmModel:
    if fusion_kind not in FUSION_KINDS:
        raise ValueError(f"fusion kind must be one of {FUSION_KINDS}, got {fusion_kind!r}")
    if semantic_cfg.feature_dim != rgb_cfg.feature_dim:
        raise ValueError(
            f"branch feature dims differ: {semantic_cfg.feature_dim} vs "
            f"{rgb_cfg.feature_dim}"
        )
    c = semantic_cfg.feature_dim
    if fusion_kind == "dw":
        fusion = init_fusion_params(c, hidden, num_classes, rng)
    elif fusion_kind == "concat":
        fusion = init_concat_head(c, num_classes, rng)
    else:
        fusion = init_gating_head(c, num_classes, rng)
    return CsrrmModel(
        semantic_cfg=semantic_cfg,
        rgb_cfg=rgb_cfg,
        filter_cfg=FilterConfig(window=filter_window),
        num_classes=num_classes,
        fusion_kind=fusion_kind,
        semantic_params=init_backbone_params(semantic_cfg, rng),
        rgb_params=init_backbone_params(rgb_cfg, rng),
        semantic_head_w=kaiming_uniform((num_classes, c), c, rng),
        semantic_head_b=zeros_param((num_classes,)),
        rgb_head_w=kaiming_uniform((num_classes, c), c, rng),
        rgb_head_b=zeros_param((num_classes,)),
        fusion=fusion,
    )
