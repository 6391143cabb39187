"""Analytic multiply-add counts for backbones and fusion heads.

Convolutions count C_out*C_in*kh*kw*H'*W', linears in*out. Channel
attention counts its two shared-MLP passes plus the pooling reads.
Fusion heads count the combination op plus the classifier; the shared
residual MLP is reported separately so head comparisons line up with
parameter-level accounting.
"""
from __future__ import annotations

from .blocks import BackboneConfig

__all__ = [
    "conv_macs",
    "conv_output_hw",
    "backbone_flops",
    "fusion_head_flops",
]


def conv_macs(c_in: int, c_out: int, kh: int, kw: int, h_out: int, w_out: int) -> int:
    return c_out * c_in * kh * kw * h_out * w_out


def conv_output_hw(
    h: int, w: int, kh: int, kw: int, stride: int, padding: int
) -> tuple[int, int]:
    return (
        (h + 2 * padding - kh) // stride + 1,
        (w + 2 * padding - kw) // stride + 1,
    )


def backbone_flops(
    cfg: BackboneConfig, input_hw: tuple[int, int], num_classes: int | None = None
) -> dict[str, int]:
    """Per-component multiply-add counts for one forward pass."""
    h, w = input_hw
    report: dict[str, int] = {}
    h, w = conv_output_hw(h, w, cfg.stem_kernel, cfg.stem_kernel,
                          cfg.stem_stride, cfg.stem_padding)
    if h < 1 or w < 1:
        raise ValueError(f"stem produces non-positive output dims {h}x{w}")
    report["stem"] = conv_macs(
        cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_kernel, h, w
    )
    in_ch = cfg.stem_channels
    for i, s in enumerate(cfg.stages):
        total = 0
        for b in range(s.blocks):
            stride = s.stride if b == 0 else 1
            h2, w2 = conv_output_hw(h, w, 3, 3, stride, 1)
            total += conv_macs(in_ch, s.mid, 1, 1, h, w)          # 1x1 reduce
            total += conv_macs(s.mid, s.mid, 3, 3, h2, w2)        # 3x3
            total += conv_macs(s.mid, s.width, 1, 1, h2, w2)      # 1x1 expand
            if stride != 1 or in_ch != s.width:
                total += conv_macs(in_ch, s.width, 1, 1, h2, w2)  # projection
            h, w = h2, w2
            in_ch = s.width
        report[f"stage{i + 1}"] = total
        if s.cham:
            hidden = s.width // cfg.cham_reduction
            mlp = 2 * (s.width * hidden + hidden * s.width)  # avg and max branch
            pools = 2 * s.width * h * w
            report[f"stage{i + 1}_cham"] = mlp + pools
    report["global_pool"] = in_ch * h * w
    if num_classes is not None:
        report["classifier"] = in_ch * num_classes
    report["total"] = sum(report.values())
    return report


def fusion_head_flops(
    feature_dim: int, num_classes: int, hidden: int | None = None
) -> dict[str, int]:
    """Combination op + classifier per head; two MACs per channel for the
    depth-wise taps, three elementwise ops per channel for the gate. The
    shared residual MLP is reported alongside, not folded into the heads."""
    c = feature_dim
    h = hidden if hidden is not None else 4 * c
    return {
        "dw": 2 * c + c * num_classes,
        "concat": 2 * c * num_classes,
        "gating": 3 * c + c * num_classes,
        "residual_mlp": 2 * 2 * c * h,  # two rows through Wm and Wn
    }
