"""Synthetic scenes with planted semantic-region relations.

Each scene contains two object regions on a background; the class is a
deterministic function of (label pair, adjacency), never of any single
label. Score tensors are softmax-like distributions whose peaks sit in a
clean band, with a configurable fraction of pixels corrupted to a wrong
label at lower (or, for margin >= 1, overlapping) confidence. Region
boundaries are aligned to the 2x2 filter grid and corruption never fills
a whole 2x2 window, so a window-2 confidence filter provably removes all
corruption when the margin is < 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .score_filter import ScoreTensor, hard_labels

__all__ = [
    "RegionRule",
    "SceneRecipe",
    "SyntheticScene",
    "default_rules",
    "generate",
    "rule_oracle",
    "vocabulary_restrict",
]

BACKGROUND = 0
CLEAN_PEAK_LO = 0.70
CLEAN_PEAK_HI = 0.95
CORRUPT_BAND_LO = 0.5
CORRUPT_BAND_HI = 0.7
BLOB_SIZES = (4, 6)
APART_GAP = 4  # cells; stays >= 2 after window-2 downsampling


@dataclass(frozen=True)
class RegionRule:
    """One class: an unordered object-label pair plus required adjacency."""

    pair: tuple[int, int]
    adjacent: bool

    def key(self) -> tuple[tuple[int, int], bool]:
        return tuple(sorted(self.pair)), self.adjacent


def default_rules(num_classes: int, labels: int) -> tuple[RegionRule, ...]:
    """Pairs (1,2),(3,4),... alternating adjacent/apart; the same pair
    appears in two classes, so no bag of labels identifies a class."""
    pairs_needed = math.ceil(num_classes / 2)
    if 2 * pairs_needed > labels - 1:
        raise ValueError(
            f"{labels} labels cannot host {pairs_needed} object pairs plus background"
        )
    rules = []
    for k in range(num_classes):
        pair = (1 + 2 * (k // 2), 2 + 2 * (k // 2))
        rules.append(RegionRule(pair=pair, adjacent=(k % 2 == 0)))
    return tuple(rules)


@dataclass(frozen=True)
class SceneRecipe:
    width: int = 16
    height: int = 16
    labels: int = 12
    num_classes: int = 8
    corruption_rate: float = 0.1
    corruption_margin: float = 0.9
    rgb_noise: float = 0.25
    seed: int = 0
    rules: tuple[RegionRule, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.width < 12 or self.height < 12:
            raise ValueError("grid must be at least 12x12 to place two regions")
        if self.width % 2 or self.height % 2:
            raise ValueError("grid dims must be even (filter-window aligned)")
        if self.labels < 6:
            raise ValueError(f"need at least 6 labels, got {self.labels}")
        if not 0.0 <= self.corruption_rate < 0.7:
            raise ValueError(
                f"corruption_rate must be in [0, 0.7), got {self.corruption_rate}"
            )
        if not 0.5 <= self.corruption_margin <= 1.35:
            raise ValueError(
                f"corruption_margin must be in [0.5, 1.35], got {self.corruption_margin}"
            )
        if self.rgb_noise < 0.0:
            raise ValueError("rgb_noise must be non-negative")
        rules = self.rules or default_rules(self.num_classes, self.labels)
        if len(rules) != self.num_classes:
            raise ValueError(
                f"{len(rules)} rules for {self.num_classes} classes"
            )
        keys = [r.key() for r in rules]
        if len(set(keys)) != len(keys):
            raise ValueError("class rules are not distinguishable")
        for r in rules:
            a, b = r.pair
            if a == b or not (
                0 < a < self.labels and 0 < b < self.labels
            ):
                raise ValueError(f"rule pair {r.pair} invalid for {self.labels} labels")
        object.__setattr__(self, "rules", tuple(rules))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "labels": self.labels,
            "num_classes": self.num_classes,
            "corruption_rate": self.corruption_rate,
            "corruption_margin": self.corruption_margin,
            "rgb_noise": self.rgb_noise,
            "seed": self.seed,
            "rules": [
                {"pair": list(r.pair), "adjacent": r.adjacent} for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        rules = tuple(
            RegionRule(pair=tuple(r["pair"]), adjacent=bool(r["adjacent"]))
            for r in d.get("rules", [])
        )
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            labels=int(d["labels"]),
            num_classes=int(d["num_classes"]),
            corruption_rate=float(d["corruption_rate"]),
            corruption_margin=float(d["corruption_margin"]),
            rgb_noise=float(d["rgb_noise"]),
            seed=int(d["seed"]),
            rules=rules,
        )


@dataclass
class SyntheticScene:
    score: ScoreTensor
    rgb: np.ndarray  # (3, w, h) float image
    label: int
    clean_labels: np.ndarray  # (w, h) ints
    corruption_mask: np.ndarray  # (w, h) bools


def _even(rng: np.random.Generator, max_start: int) -> int:
    return int(rng.integers(0, max_start // 2 + 1)) * 2


def _rect_gaps(a: tuple[int, int, int, int], b: tuple[int, int, int, int]):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    gx = max(bx0 - ax1, ax0 - bx1)
    gy = max(by0 - ay1, ay0 - by1)
    return gx, gy


def _place_regions(
    rule: RegionRule, w: int, h: int, rng: np.random.Generator
) -> np.ndarray:
    """Clean label map with two even-aligned rectangles obeying the rule."""
    for _ in range(500):
        aw, ah = int(rng.choice(BLOB_SIZES)), int(rng.choice(BLOB_SIZES))
        bw, bh = int(rng.choice(BLOB_SIZES)), int(rng.choice(BLOB_SIZES))
        if rule.adjacent:
            # place side by side in a frame, flipping the frame for the
            # vertical orientation
            horizontal = bool(rng.random() < 0.5)
            fw, fh = (w, h) if horizontal else (h, w)
            if aw + bw > fw:
                continue
            ax = _even(rng, fw - aw - bw)
            bx = ax + aw
            ay = _even(rng, fh - ah)
            lo = max(0, ay - bh + 2)
            hi = min(fh - bh, ay + ah - 2)
            if lo > hi:
                continue
            by = lo + _even(rng, (hi - lo))
            rect_a = (ax, ay, ax + aw, ay + ah)
            rect_b = (bx, by, bx + bw, by + bh)
            if not horizontal:
                rect_a = (rect_a[1], rect_a[0], rect_a[3], rect_a[2])
                rect_b = (rect_b[1], rect_b[0], rect_b[3], rect_b[2])
        else:
            ax, ay = _even(rng, w - aw), _even(rng, h - ah)
            bx, by = _even(rng, w - bw), _even(rng, h - bh)
            rect_a = (ax, ay, ax + aw, ay + ah)
            rect_b = (bx, by, bx + bw, by + bh)
            gx, gy = _rect_gaps(rect_a, rect_b)
            if max(gx, gy) < APART_GAP:
                continue
        labels = np.full((w, h), BACKGROUND, dtype=np.int64)
        x0, y0, x1, y1 = rect_a
        labels[x0:x1, y0:y1] = rule.pair[0]
        x0, y0, x1, y1 = rect_b
        labels[x0:x1, y0:y1] = rule.pair[1]
        return labels
    raise ValueError(f"could not place regions for rule {rule} on a {w}x{h} grid")


def _masks_adjacent(a: np.ndarray, b: np.ndarray) -> bool:
    """4-neighborhood contact between two boolean masks."""
    return bool(
        (a[1:, :] & b[:-1, :]).any()
        or (a[:-1, :] & b[1:, :]).any()
        or (a[:, 1:] & b[:, :-1]).any()
        or (a[:, :-1] & b[:, 1:]).any()
    )


def rule_oracle(clean_labels: np.ndarray, recipe: SceneRecipe) -> int:
    """Classify a clean label map from its region relations alone."""
    present = sorted(set(np.unique(clean_labels)) - {BACKGROUND})
    if len(present) != 2:
        raise ValueError(
            f"expected exactly two object labels, found {present}"
        )
    a, b = present
    adjacent = _masks_adjacent(clean_labels == a, clean_labels == b)
    key = ((a, b), adjacent)
    for idx, rule in enumerate(recipe.rules):
        if rule.key() == key:
            return idx
    raise ValueError(f"no class rule matches pair {key[0]} adjacent={adjacent}")


def _corruption_mask(
    w: int, h: int, n_corrupt: int, rng: np.random.Generator
) -> np.ndarray:
    """Random mask with at most 3 corrupted pixels per 2x2 window, so every
    window keeps at least one clean pixel."""
    mask = np.zeros((w, h), dtype=bool)
    if n_corrupt == 0:
        return mask
    window_counts = np.zeros((w // 2, h // 2), dtype=np.int64)
    placed = 0
    for pos in rng.permutation(w * h):
        i, j = divmod(int(pos), h)
        wi, wj = i // 2, j // 2
        if window_counts[wi, wj] >= 3:
            continue
        mask[i, j] = True
        window_counts[wi, wj] += 1
        placed += 1
        if placed == n_corrupt:
            return mask
    raise ValueError(
        f"cannot place {n_corrupt} corrupted pixels under the per-window cap"
    )


def _score_from_labels(
    clean: np.ndarray,
    mask: np.ndarray,
    recipe: SceneRecipe,
    rng: np.random.Generator,
) -> ScoreTensor:
    w, h = clean.shape
    l = recipe.labels
    peak_label = clean.copy()
    n_corrupt = int(mask.sum())
    if n_corrupt:
        offsets = rng.integers(1, l, size=n_corrupt)
        peak_label[mask] = (clean[mask] + offsets) % l

    peaks = rng.uniform(CLEAN_PEAK_LO, CLEAN_PEAK_HI, (w, h))
    if n_corrupt:
        m = recipe.corruption_margin
        peaks[mask] = rng.uniform(
            CORRUPT_BAND_LO * m, CORRUPT_BAND_HI * m, n_corrupt
        )

    weights = 1.0 + 0.2 * rng.uniform(-1.0, 1.0, (w, h, l))
    onehot = np.eye(l, dtype=bool)[peak_label]
    weights[onehot] = 0.0
    weights /= weights.sum(axis=2, keepdims=True)
    data = weights * (1.0 - peaks)[..., None]
    data[onehot] = peaks.ravel()

    if not (data.argmax(axis=2) == peak_label).all():
        raise RuntimeError("score construction failed to plant the peak labels")
    return ScoreTensor(data)


def _palette(labels: int) -> np.ndarray:
    """Deterministic distinct colors, golden-ratio spaced hues."""
    hues = (np.arange(labels) * 0.61803398875) % 1.0
    sat, val = 0.75, 0.9
    i = np.floor(hues * 6.0).astype(int) % 6
    f = hues * 6.0 - np.floor(hues * 6.0)
    p = val * (1.0 - sat)
    q = val * (1.0 - sat * f)
    t = val * (1.0 - sat * (1.0 - f))
    v = np.full(labels, val)
    lut = np.stack(
        [
            np.choose(i, [v, q, np.full(labels, p), np.full(labels, p), t, v]),
            np.choose(i, [t, v, v, q, np.full(labels, p), np.full(labels, p)]),
            np.choose(i, [np.full(labels, p), np.full(labels, p), t, v, v, q]),
        ],
        axis=1,
    )
    return lut  # (labels, 3)


def _render_rgb(
    clean: np.ndarray, recipe: SceneRecipe, rng: np.random.Generator
) -> np.ndarray:
    colors = _palette(recipe.labels)[clean]  # (w, h, 3)
    img = colors.transpose(2, 0, 1).astype(np.float64)
    if recipe.rgb_noise:
        img = img + rng.normal(0.0, recipe.rgb_noise, img.shape)
    return img


def make_scene(recipe: SceneRecipe, index: int) -> SyntheticScene:
    """Deterministic scene for (recipe.seed, index); class is index mod classes."""
    label = index % recipe.num_classes
    rng = np.random.default_rng([recipe.seed, index])
    clean = _place_regions(recipe.rules[label], recipe.width, recipe.height, rng)
    n_corrupt = round(recipe.corruption_rate * recipe.width * recipe.height)
    mask = _corruption_mask(recipe.width, recipe.height, n_corrupt, rng)
    score = _score_from_labels(clean, mask, recipe, rng)
    rgb = _render_rgb(clean, recipe, rng)
    actual = hard_labels(score) != clean
    if not (actual == mask).all():
        raise RuntimeError("scene invariant violated: prediction errors != mask")
    return SyntheticScene(
        score=score, rgb=rgb, label=label, clean_labels=clean, corruption_mask=mask
    )


def generate(recipe: SceneRecipe, n: int) -> list[SyntheticScene]:
    """n scenes, classes round-robin (balance within +-1), reproducible."""
    return [make_scene(recipe, i) for i in range(n)]


def vocabulary_restrict(scene: SyntheticScene, keep_k: int) -> SyntheticScene:
    """Merge channels >= keep_k into a single trailing "other" channel.

    The corruption mask is recomputed afterwards: merged mass can overtake
    a weak corrupted peak, and the mask must stay exactly the set of
    pixels whose hard label disagrees with the clean map.
    """
    l = scene.score.labels
    if keep_k < 1:
        raise ValueError(f"keep_k must be >= 1, got {keep_k}")
    if keep_k >= l:
        return scene
    data = scene.score.data
    merged = np.concatenate(
        [data[..., :keep_k], data[..., keep_k:].sum(axis=2, keepdims=True)], axis=2
    )
    new_score = ScoreTensor(merged)
    new_clean = np.where(scene.clean_labels >= keep_k, keep_k, scene.clean_labels)
    new_mask = hard_labels(new_score) != new_clean
    return SyntheticScene(
        score=new_score,
        rgb=scene.rgb,
        label=scene.label,
        clean_labels=new_clean,
        corruption_mask=new_mask,
    )
