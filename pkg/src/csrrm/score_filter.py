"""Adaptive confidence filtering of semantic score tensors.

The filter slides a non-overlapping window over the spatial grid and
keeps, per window, the full label distribution of the single pixel whose
peak confidence is highest. It is preprocessing: non-differentiable and
applied before any computation tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoreTensor",
    "FilterConfig",
    "confidence_filter",
    "hard_labels",
    "majority_downsample",
    "ambiguity_reduction_stats",
]

PIXEL_SUM_TOL = 1e-4


class ScoreTensor:
    """A w x h x l grid of per-pixel label probability distributions."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"ScoreTensor data must be 3-d (w,h,l), got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("ScoreTensor values must lie in [0, 1]")
        sums = arr.sum(axis=2)
        if np.abs(sums - 1.0).max() > PIXEL_SUM_TOL:
            raise ValueError(
                f"ScoreTensor pixel distributions must sum to 1 +- {PIXEL_SUM_TOL}"
            )
        self.data = arr

    @property
    def width(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def labels(self) -> int:
        return self.data.shape[2]

    def channels_first(self) -> np.ndarray:
        """The same data laid out (l, w, h) for convolutional input."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))

    def __repr__(self) -> str:
        return f"ScoreTensor(w={self.width}, h={self.height}, l={self.labels})"


@dataclass(frozen=True)
class FilterConfig:
    """Non-overlapping window filter; stride equals the window size."""

    window: int = 2

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"filter window must be >= 1, got {self.window}")


def confidence_filter(m: ScoreTensor, cfg: FilterConfig) -> ScoreTensor:
    """Keep, per window, the whole distribution of the most confident pixel.

    Output dims are floor(w/window) x floor(h/window) x l; trailing rows
    and columns past the last full window are dropped. Ties inside a
    window break to the first position in row-major order.
    """
    k = cfg.window
    w, h = m.width, m.height
    if w < k or h < k:
        raise ValueError(
            f"input {w}x{h} is smaller than one {k}x{k} window"
        )
    if k == 1:
        return ScoreTensor(m.data.copy())
    wo, ho = w // k, h // k
    crop = m.data[: wo * k, : ho * k, :]
    peak = crop.max(axis=2)
    windows = peak.reshape(wo, k, ho, k).transpose(0, 2, 1, 3).reshape(wo, ho, k * k)
    flat = windows.argmax(axis=2)
    di, dj = np.divmod(flat, k)
    rows = np.arange(wo)[:, None] * k + di
    cols = np.arange(ho)[None, :] * k + dj
    return ScoreTensor(crop[rows, cols, :])


def hard_labels(m: ScoreTensor) -> np.ndarray:
    """Per-pixel argmax over labels; ties break to the lowest label index."""
    return m.data.argmax(axis=2)


def majority_downsample(labels: np.ndarray, window: int) -> np.ndarray:
    """Per-window majority vote of an integer label map; ties break low."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-d, got {labels.shape}")
    k = window
    wo, ho = labels.shape[0] // k, labels.shape[1] // k
    if wo < 1 or ho < 1:
        raise ValueError(f"label map {labels.shape} smaller than one {k}x{k} window")
    crop = labels[: wo * k, : ho * k]
    blocks = crop.reshape(wo, k, ho, k).transpose(0, 2, 1, 3).reshape(wo, ho, k * k)
    out = np.empty((wo, ho), dtype=labels.dtype)
    for i in range(wo):
        for j in range(ho):
            counts = np.bincount(blocks[i, j])
            out[i, j] = counts.argmax()
    return out


def ambiguity_reduction_stats(
    clean: np.ndarray, noisy_pre: ScoreTensor, cfg: FilterConfig
) -> tuple[float, float]:
    """Pixel error rate against a clean label map, before and after filtering.

    The clean map is majority-downsampled per window for the post-filter
    comparison.
    """
    clean = np.asarray(clean)
    if clean.shape != (noisy_pre.width, noisy_pre.height):
        raise ValueError(
            f"clean label map {clean.shape} does not match score tensor "
            f"{(noisy_pre.width, noisy_pre.height)}"
        )
    pre = float((hard_labels(noisy_pre) != clean).mean())
    filtered = confidence_filter(noisy_pre, cfg)
    clean_small = majority_downsample(clean, cfg.window)
    post = float((hard_labels(filtered) != clean_small).mean())
    return pre, post
