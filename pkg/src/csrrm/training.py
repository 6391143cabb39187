"""Two-stage training, 10-crop evaluation, FLOP reporting, and ablation
grids over the synthetic corpus.

Stage 1 trains each branch with its own temporary linear head; stage 2
freezes both branches and trains the fusion head from scratch on branch
features precomputed in inference mode, so branch gradients stay exactly
zero and branch checksums cannot move.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, cross_entropy, softmax
from .blocks import GlobalFeature, backbone_forward
from .checkpoint import assign_params, load_params, param_checksum, save_params
from .fixtures import read_corpus
from .flops import backbone_flops, fusion_head_flops
from .model import CsrrmModel, backbone_named_params, fusion_named_params, init_model
from .optim import AligOptimizer, NonFiniteError, SgdOptimizer
from .presets import desk_rgb_backbone, desk_semantic_backbone
from .score_filter import ScoreTensor
from .synthetic import SceneRecipe, SyntheticScene, generate, vocabulary_restrict

__all__ = [
    "ExperimentConfig",
    "EpochRecord",
    "RunMetrics",
    "build_model",
    "train_two_stage",
    "run_experiment",
    "load_experiment",
    "ten_crop_eval",
    "flop_report",
    "AblationMatrix",
    "ablate",
]


@dataclass(frozen=True)
class ExperimentConfig:
    recipe: SceneRecipe = field(default_factory=SceneRecipe)
    num_scenes: int = 640
    train_count: int = 512
    filter_window: int = 2
    fusion: str = "dw"
    cham: bool = True
    feature_dim: int = 128
    hidden: int = 512
    optimizer: str = "alig"
    max_lr: float = 0.1
    delta: float = 1e-8
    momentum: float = 0.0
    sgd_lr: float = 0.05
    epochs_stage1: int = 16
    epochs_stage2: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.filter_window < 1:
            raise ValueError("filter_window must be >= 1 (1 disables filtering)")
        if not 0 < self.train_count <= self.num_scenes:
            raise ValueError("train_count must be in (0, num_scenes]")
        if self.fusion not in ("dw", "concat", "gating"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.optimizer not in ("alig", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "recipe": self.recipe.to_dict(),
            "num_scenes": self.num_scenes,
            "train_count": self.train_count,
            "filter_window": self.filter_window,
            "fusion": self.fusion,
            "cham": self.cham,
            "feature_dim": self.feature_dim,
            "hidden": self.hidden,
            "optimizer": self.optimizer,
            "max_lr": self.max_lr,
            "delta": self.delta,
            "momentum": self.momentum,
            "sgd_lr": self.sgd_lr,
            "epochs_stage1": self.epochs_stage1,
            "epochs_stage2": self.epochs_stage2,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        recipe = d.pop("recipe", None)
        kwargs = {k: d[k] for k in d if k in cls.__dataclass_fields__}
        if recipe is not None:
            kwargs["recipe"] = SceneRecipe.from_dict(recipe)
        return cls(**kwargs)


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    split: str
    loss: float
    accuracy: float
    wall_ms: float
    branch: str = "fused"
    max_step: float = 0.0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epoch": self.epoch,
            "split": self.split,
            "loss": self.loss,
            "accuracy": self.accuracy,
            "wall_ms": self.wall_ms,
            "branch": self.branch,
            "max_step": self.max_step,
        }

    def comparable(self) -> dict:
        # wall-clock time cannot be bit-identical across reruns
        d = self.to_dict()
        d.pop("wall_ms")
        return d


@dataclass
class RunMetrics:
    records: list[EpochRecord] = field(default_factory=list)
    final_test_accuracy: float = 0.0
    branch_test_accuracy: dict[str, float] = field(default_factory=dict)
    flop_report: dict = field(default_factory=dict)
    branch_checksum_before_stage2: str = ""
    branch_checksum_after_stage2: str = ""
    branch_grad_max_stage2: float = 0.0
    alig_max_step: float = 0.0

    def comparable(self) -> dict:
        return {
            "records": [r.comparable() for r in self.records],
            "final_test_accuracy": self.final_test_accuracy,
            "branch_test_accuracy": self.branch_test_accuracy,
            "flop_report": self.flop_report,
            "branch_checksum_before_stage2": self.branch_checksum_before_stage2,
            "branch_checksum_after_stage2": self.branch_checksum_after_stage2,
            "branch_grad_max_stage2": self.branch_grad_max_stage2,
            "alig_max_step": self.alig_max_step,
        }

    def write_jsonl(self, path) -> None:
        lines = [json.dumps({"type": "epoch", **r.to_dict()}) for r in self.records]
        summary = {"type": "summary"}
        summary.update(
            {
                k: v
                for k, v in self.comparable().items()
                if k != "records"
            }
        )
        lines.append(json.dumps(summary))
        Path(path).write_text("\n".join(lines) + "\n")


def build_model(cfg: ExperimentConfig, labels: int | None = None) -> CsrrmModel:
    labels = labels if labels is not None else cfg.recipe.labels
    rng = np.random.default_rng([cfg.seed, 0])
    sem_cfg = desk_semantic_backbone(
        labels=labels, feature_dim=cfg.feature_dim, cham=cfg.cham
    )
    rgb_cfg = desk_rgb_backbone(cfg.feature_dim)
    return init_model(
        sem_cfg,
        rgb_cfg,
        cfg.filter_window,
        cfg.recipe.num_classes,
        cfg.fusion,
        cfg.hidden,
        rng,
    )


def flop_report(cfg: ExperimentConfig, labels: int | None = None) -> dict:
    labels = labels if labels is not None else cfg.recipe.labels
    sem_cfg = desk_semantic_backbone(
        labels=labels, feature_dim=cfg.feature_dim, cham=cfg.cham
    )
    rgb_cfg = desk_rgb_backbone(cfg.feature_dim)
    k = cfg.filter_window
    sem_hw = (cfg.recipe.width // k, cfg.recipe.height // k)
    semantic = backbone_flops(sem_cfg, sem_hw)
    rgb = backbone_flops(rgb_cfg, (cfg.recipe.width, cfg.recipe.height))
    heads = fusion_head_flops(cfg.feature_dim, cfg.recipe.num_classes, cfg.hidden)
    return {
        "semantic_branch": semantic["total"],
        "rgb_branch": rgb["total"],
        "fusion_heads": heads,
        "total": semantic["total"] + rgb["total"] + heads[cfg.fusion],
    }


def _make_optimizer(cfg: ExperimentConfig, params: dict[str, Tensor]):
    if cfg.optimizer == "alig":
        return AligOptimizer(
            params, max_lr=cfg.max_lr, delta=cfg.delta, momentum=cfg.momentum
        )
    return SgdOptimizer(params, lr=cfg.sgd_lr)


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _branch_forward(model: CsrrmModel, which: str, x) -> Tensor:
    if which == "semantic":
        feature = GlobalFeature(
            vector=_backbone(model, "semantic", x), source="semantic"
        )
        return model.semantic_logits(feature)
    feature = GlobalFeature(vector=_backbone(model, "rgb", x), source="rgb")
    return model.rgb_logits(feature)


def _backbone(model: CsrrmModel, which: str, x) -> Tensor:
    if which == "semantic":
        return backbone_forward(Tensor(x), model.semantic_cfg, model.semantic_params)
    return backbone_forward(Tensor(x), model.rgb_cfg, model.rgb_params)


def _train_branch_epoch(
    model: CsrrmModel,
    which: str,
    inputs: list[np.ndarray],
    labels: list[int],
    order: np.ndarray,
    optimizer,
    batch_size: int,
) -> tuple[float, float, float]:
    losses = []
    correct = 0
    max_step = 0.0
    for batch in _chunks(order, batch_size):
        optimizer.zero_grad()
        batch_loss = 0.0
        for idx in batch:
            with Tape() as tape:
                logits = _branch_forward(model, which, inputs[idx])
                loss = cross_entropy(logits, labels[idx])
            tape.backward(loss)
            batch_loss += loss.item()
            correct += int(np.argmax(logits.value) == labels[idx])
        n = len(batch)
        for name in optimizer.params:
            if name not in optimizer.frozen:
                optimizer.params[name].grad /= n
        try:
            step = optimizer.step(batch_loss / n)
        except NonFiniteError as exc:
            raise NonFiniteError(f"{which} branch training diverged: {exc}") from exc
        max_step = max(max_step, step)
        losses.append(batch_loss / n)
    return float(np.mean(losses)), correct / len(order), max_step


def _branch_eval(
    model: CsrrmModel, which: str, inputs: list[np.ndarray], labels: list[int]
) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for x, y in zip(inputs, labels):
        logits = _branch_forward(model, which, x)
        probs = softmax(logits).value
        total_loss += -float(np.log(max(probs[y], 1e-300)))
        correct += int(np.argmax(probs) == y)
    return total_loss / len(inputs), correct / len(inputs)


def _fused_eval(
    model: CsrrmModel,
    features_r: list[GlobalFeature],
    features_s: list[GlobalFeature],
    labels: list[int],
) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for fr, fs, y in zip(features_r, features_s, labels):
        probs = softmax(model.fused_logits(fr, fs)).value
        total_loss += -float(np.log(max(probs[y], 1e-300)))
        correct += int(np.argmax(probs) == y)
    return total_loss / len(labels), correct / len(labels)


def _prepare_inputs(
    model: CsrrmModel, scenes: list[SyntheticScene]
) -> tuple[list[np.ndarray], list[np.ndarray], list[int]]:
    semantic = [model.filter_score(s.score).channels_first() for s in scenes]
    rgb = [s.rgb for s in scenes]
    labels = [s.label for s in scenes]
    return semantic, rgb, labels


def _constant_features(
    model: CsrrmModel, semantic: list[np.ndarray], rgb: list[np.ndarray]
) -> tuple[list[GlobalFeature], list[GlobalFeature]]:
    """Branch features computed outside any tape, wrapped as constants."""
    fr = [
        GlobalFeature(vector=Tensor(_backbone(model, "rgb", x).value), source="rgb")
        for x in rgb
    ]
    fs = [
        GlobalFeature(
            vector=Tensor(_backbone(model, "semantic", x).value), source="semantic"
        )
        for x in semantic
    ]
    return fr, fs


def train_two_stage(
    cfg: ExperimentConfig,
    scenes: list[SyntheticScene],
    splits: list[str],
    outdir=None,
) -> tuple[CsrrmModel, RunMetrics]:
    if len(scenes) != len(splits):
        raise ValueError("scenes and splits must align")
    labels_count = scenes[0].score.labels if scenes else cfg.recipe.labels
    model = build_model(cfg, labels=labels_count)
    metrics = RunMetrics(flop_report=flop_report(cfg, labels=labels_count))

    train_scenes = [s for s, sp in zip(scenes, splits) if sp == "train"]
    test_scenes = [s for s, sp in zip(scenes, splits) if sp == "test"]
    if not train_scenes:
        raise ValueError("no training scenes in corpus")

    sem_train, rgb_train, y_train = _prepare_inputs(model, train_scenes)
    sem_test, rgb_test, y_test = _prepare_inputs(model, test_scenes)

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    named = model.named_params()
    branch_names = model.branch_param_names()

    # ---- stage 1: branches trained separately with temporary heads ----
    stage1_params = {
        "semantic": {
            n: named[n]
            for n in named
            if n.startswith(("semantic.", "semantic_head."))
        },
        "rgb": {n: named[n] for n in named if n.startswith(("rgb.", "rgb_head."))},
    }
    optimizers = {k: _make_optimizer(cfg, v) for k, v in stage1_params.items()}
    branch_inputs = {"semantic": sem_train, "rgb": rgb_train}

    for epoch in range(1, cfg.epochs_stage1 + 1):
        for which in ("semantic", "rgb"):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(train_scenes))
            loss, acc, max_step = _train_branch_epoch(
                model,
                which,
                branch_inputs[which],
                y_train,
                order,
                optimizers[which],
                cfg.batch_size,
            )
            metrics.alig_max_step = max(metrics.alig_max_step, max_step)
            metrics.records.append(
                EpochRecord(
                    stage=1,
                    epoch=epoch,
                    split="train",
                    loss=loss,
                    accuracy=acc,
                    wall_ms=(time.perf_counter() - t0) * 1e3,
                    branch=which,
                    max_step=max_step,
                )
            )

    if cfg.epochs_stage1 > 0 and test_scenes:
        branch_test_inputs = {"semantic": sem_test, "rgb": rgb_test}
        for which in ("semantic", "rgb"):
            t0 = time.perf_counter()
            loss, acc = _branch_eval(model, which, branch_test_inputs[which], y_test)
            metrics.branch_test_accuracy[which] = acc
            metrics.records.append(
                EpochRecord(
                    stage=1,
                    epoch=cfg.epochs_stage1,
                    split="test",
                    loss=loss,
                    accuracy=acc,
                    wall_ms=(time.perf_counter() - t0) * 1e3,
                    branch=which,
                )
            )

    # ---- stage 2: freeze branches, train the fusion head from scratch ----
    for p in named.values():
        p.zero_grad()
    metrics.branch_checksum_before_stage2 = param_checksum(model.branch_params())

    fr_train, fs_train = _constant_features(model, sem_train, rgb_train)
    fr_test, fs_test = _constant_features(model, sem_test, rgb_test)

    stage2_optimizer = _make_optimizer(cfg, named)
    stage2_optimizer.freeze(
        branch_names
        | {n for n in named if n.startswith(("semantic_head.", "rgb_head."))}
    )

    for epoch in range(1, cfg.epochs_stage2 + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_scenes))
        losses = []
        max_step = 0.0
        for batch in _chunks(order, cfg.batch_size):
            stage2_optimizer.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                with Tape() as tape:
                    logits = model.fused_logits(
                        fr_train[idx], fs_train[idx], training=True, rng=dropout_rng
                    )
                    loss = cross_entropy(logits, y_train[idx])
                tape.backward(loss)
                batch_loss += loss.item()
            n = len(batch)
            for name in stage2_optimizer.params:
                if name not in stage2_optimizer.frozen:
                    stage2_optimizer.params[name].grad /= n
            try:
                step = stage2_optimizer.step(batch_loss / n)
            except NonFiniteError as exc:
                raise NonFiniteError(f"fusion training diverged: {exc}") from exc
            max_step = max(max_step, step)
            losses.append(batch_loss / n)
        train_loss, train_acc = _fused_eval(model, fr_train, fs_train, y_train)
        metrics.alig_max_step = max(metrics.alig_max_step, max_step)
        metrics.records.append(
            EpochRecord(
                stage=2,
                epoch=epoch,
                split="train",
                loss=float(np.mean(losses)),
                accuracy=train_acc,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                branch="fused",
                max_step=max_step,
            )
        )

    metrics.branch_checksum_after_stage2 = param_checksum(model.branch_params())
    metrics.branch_grad_max_stage2 = max(
        (float(np.abs(named[n].grad).max()) for n in branch_names), default=0.0
    )

    if test_scenes:
        t0 = time.perf_counter()
        loss, acc = _fused_eval(model, fr_test, fs_test, y_test)
        metrics.final_test_accuracy = acc
        if cfg.epochs_stage2 > 0:
            metrics.records.append(
                EpochRecord(
                    stage=2,
                    epoch=cfg.epochs_stage2,
                    split="test",
                    loss=loss,
                    accuracy=acc,
                    wall_ms=(time.perf_counter() - t0) * 1e3,
                    branch="fused",
                )
            )

    if outdir is not None:
        save_run(outdir, cfg, model, metrics)
    return model, metrics


def save_run(outdir, cfg: ExperimentConfig, model: CsrrmModel, metrics: RunMetrics) -> None:
    outdir = Path(outdir)
    (outdir / "stage1").mkdir(parents=True, exist_ok=True)
    (outdir / "stage2").mkdir(parents=True, exist_ok=True)
    save_params(
        backbone_named_params(model.semantic_params, "semantic"),
        outdir / "stage1" / "semantic.ckpt",
    )
    save_params(
        backbone_named_params(model.rgb_params, "rgb"), outdir / "stage1" / "rgb.ckpt"
    )
    save_params(
        {
            "semantic_head.w": model.semantic_head_w,
            "semantic_head.b": model.semantic_head_b,
            "rgb_head.w": model.rgb_head_w,
            "rgb_head.b": model.rgb_head_b,
        },
        outdir / "stage1" / "heads.ckpt",
    )
    save_params(fusion_named_params(model.fusion), outdir / "stage2" / "fusion.ckpt")
    (outdir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    metrics.write_jsonl(outdir / "metrics.jsonl")


def load_experiment(outdir, labels: int | None = None) -> tuple[ExperimentConfig, CsrrmModel]:
    outdir = Path(outdir)
    cfg = ExperimentConfig.from_dict(json.loads((outdir / "config.json").read_text()))
    model = build_model(cfg, labels=labels)
    named = model.named_params()
    arrays: dict[str, np.ndarray] = {}
    for rel in ("stage1/semantic.ckpt", "stage1/rgb.ckpt", "stage1/heads.ckpt",
                "stage2/fusion.ckpt"):
        arrays |= load_params(outdir / rel)
    assign_params(named, arrays)
    return cfg, model


def run_experiment(
    cfg: ExperimentConfig, outdir=None
) -> tuple[CsrrmModel, RunMetrics]:
    """Generate the corpus from the recipe and run two-stage training."""
    scenes = generate(cfg.recipe, cfg.num_scenes)
    splits = ["train"] * cfg.train_count + ["test"] * (cfg.num_scenes - cfg.train_count)
    return train_two_stage(cfg, scenes, splits, outdir=outdir)


# ---------------------------------------------------------------------------
# 10-crop evaluation
# ---------------------------------------------------------------------------

def _default_crop(w: int, h: int) -> tuple[int, int]:
    cw = max(2, (int(w * 0.75) // 2) * 2)
    ch = max(2, (int(h * 0.75) // 2) * 2)
    return cw, ch


def ten_crop_eval(
    model: CsrrmModel,
    scene: SyntheticScene,
    crop_size: tuple[int, int] | None = None,
) -> int:
    """Average softmax probabilities over 4 corners + center and their
    horizontal mirrors; returns the argmax class."""
    w, h = scene.score.width, scene.score.height
    cw, ch = crop_size if crop_size is not None else _default_crop(w, h)
    if cw > w or ch > h or cw < 1 or ch < 1:
        raise ValueError(f"crop {cw}x{ch} does not fit scene {w}x{h}")
    positions = [
        (0, 0),
        (0, h - ch),
        (w - cw, 0),
        (w - cw, h - ch),
        ((w - cw) // 2, (h - ch) // 2),
    ]
    variants = [
        (scene.score.data, scene.rgb),
        (scene.score.data[::-1, :, :], scene.rgb[:, ::-1, :]),
    ]
    total = np.zeros(model.num_classes)
    for score_data, rgb in variants:
        for x0, y0 in positions:
            crop_score = ScoreTensor(score_data[x0 : x0 + cw, y0 : y0 + ch, :].copy())
            crop_rgb = rgb[:, x0 : x0 + cw, y0 : y0 + ch]
            total += model.predict_proba(crop_score, crop_rgb)
    return int(np.argmax(total / 10.0))


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationMatrix:
    base: ExperimentConfig
    filter_windows: tuple[int, ...] = (1, 2, 4)
    cham_options: tuple[bool, ...] = (True, False)
    fusions: tuple[str, ...] = ("dw", "concat", "gating")
    keep_values: tuple[int, ...] = ()

    def cells(self) -> list[dict]:
        keeps = self.keep_values or (self.base.recipe.labels,)
        out = []
        for i, (fw, ch, fu, kk) in enumerate(
            product(self.filter_windows, self.cham_options, self.fusions, keeps)
        ):
            out.append(
                {
                    "index": i,
                    "filter_window": fw,
                    "cham": ch,
                    "fusion": fu,
                    "keep_k": kk,
                    "seed": self.base.seed * 1000 + i,
                }
            )
        return out


def ablate(
    matrix: AblationMatrix,
    scenes: list[SyntheticScene],
    splits: list[str],
) -> list[dict]:
    """One training run per grid cell; returns one result row per cell."""
    rows = []
    for cell in matrix.cells():
        cell_scenes = scenes
        if cell["keep_k"] < matrix.base.recipe.labels:
            cell_scenes = [vocabulary_restrict(s, cell["keep_k"]) for s in scenes]
        cfg = replace(
            matrix.base,
            filter_window=cell["filter_window"],
            cham=cell["cham"],
            fusion=cell["fusion"],
            seed=cell["seed"],
        )
        _, metrics = train_two_stage(cfg, cell_scenes, splits)
        row = dict(cell)
        row["final_test_accuracy"] = metrics.final_test_accuracy
        row["branch_test_accuracy"] = metrics.branch_test_accuracy
        row["flops_total"] = metrics.flop_report["total"]
        rows.append(row)
    return rows
