"""Command-line interface: generate / train / eval / ablate / flops.

Every verb accepts ``--config FILE`` (JSON mirroring ExperimentConfig);
explicit flags override config-file values. Exit code is nonzero on any
error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .fixtures import read_corpus, write_corpus
from .flops import backbone_flops, fusion_head_flops
from .presets import (
    FULL_FEATURE_DIM,
    full_semantic_backbone,
    full_unfiltered_backbone,
)
from .synthetic import SceneRecipe, generate
from .training import (
    AblationMatrix,
    ExperimentConfig,
    ablate,
    flop_report,
    load_experiment,
    ten_crop_eval,
    train_two_stage,
)


def _load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    data: dict = {}
    if path:
        data = json.loads(Path(path).read_text())
    recipe_over = {
        k: overrides.pop(k)
        for k in ("width", "height", "labels", "num_classes", "corruption_rate",
                  "corruption_margin", "rgb_noise")
        if overrides.get(k) is not None
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    data.update(overrides)
    recipe_dict = data.get("recipe", SceneRecipe().to_dict())
    recipe_dict.update(recipe_over)
    if "seed" in data and "seed" not in recipe_over:
        recipe_dict["seed"] = data["seed"]
    data["recipe"] = recipe_dict
    return ExperimentConfig.from_dict(data)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--filter-window", dest="filter_window", type=int)
    p.add_argument("--fusion", choices=["dw", "concat", "gating"])
    p.add_argument("--cham", dest="cham", action="store_true", default=None)
    p.add_argument("--no-cham", dest="cham", action="store_false", default=None)
    p.add_argument("--optimizer", choices=["alig", "sgd"])
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--sgd-lr", dest="sgd_lr", type=float)
    p.add_argument("--epochs-stage1", dest="epochs_stage1", type=int)
    p.add_argument("--epochs-stage2", dest="epochs_stage2", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--num-scenes", dest="num_scenes", type=int)
    p.add_argument("--train-count", dest="train_count", type=int)
    p.add_argument("--seed", type=int)
    # recipe fields
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--labels", type=int)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--corruption-rate", dest="corruption_rate", type=float)
    p.add_argument("--corruption-margin", dest="corruption_margin", type=float)
    p.add_argument("--rgb-noise", dest="rgb_noise", type=float)


def _config_overrides(args: argparse.Namespace) -> dict:
    fields = set(ExperimentConfig.__dataclass_fields__) | {
        "width", "height", "labels", "num_classes", "corruption_rate",
        "corruption_margin", "rgb_noise",
    }
    return {k: v for k, v in vars(args).items() if k in fields}


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, _config_overrides(args))
    scenes = generate(cfg.recipe, cfg.num_scenes)
    splits = ["train"] * cfg.train_count + ["test"] * (cfg.num_scenes - cfg.train_count)
    manifest = write_corpus(scenes, cfg.recipe, args.out, splits=splits)
    print(json.dumps({"corpus": str(Path(args.out)), "scenes": len(scenes),
                      "manifest": str(manifest)}))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, _config_overrides(args))
    if args.corpus:
        recipe, scenes, splits = read_corpus(args.corpus)
        cfg = dataclasses.replace(cfg, recipe=recipe)
    else:
        scenes = generate(cfg.recipe, cfg.num_scenes)
        splits = ["train"] * cfg.train_count + ["test"] * (
            cfg.num_scenes - cfg.train_count
        )
    _, metrics = train_two_stage(cfg, scenes, splits, outdir=args.out)
    print(
        json.dumps(
            {
                "out": str(Path(args.out)),
                "final_test_accuracy": metrics.final_test_accuracy,
                "branch_test_accuracy": metrics.branch_test_accuracy,
                "epochs_recorded": len(metrics.records),
            }
        )
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    recipe, scenes, splits = read_corpus(args.corpus)
    wanted = [s for s, sp in zip(scenes, splits) if sp == args.split]
    if not wanted:
        raise ValueError(f"corpus has no scenes in split {args.split!r}")
    labels = wanted[0].score.labels
    _, model = load_experiment(args.run, labels=labels)
    correct = 0
    for scene in wanted:
        if args.ten_crop:
            pred = ten_crop_eval(model, scene)
        else:
            pred = int(model.predict_proba(scene.score, scene.rgb).argmax())
        correct += int(pred == scene.label)
    print(
        json.dumps(
            {
                "split": args.split,
                "scenes": len(wanted),
                "ten_crop": bool(args.ten_crop),
                "accuracy": correct / len(wanted),
            }
        )
    )
    return 0


def _cmd_flops(args: argparse.Namespace) -> int:
    if args.scale == "full":
        filtered = backbone_flops(
            full_semantic_backbone(cham=args.full_cham),
            (args.full_size // 2, args.full_size // 2),
            num_classes=args.full_classes,
        )
        unfiltered = backbone_flops(
            full_unfiltered_backbone(cham=args.full_cham),
            (args.full_size, args.full_size),
            num_classes=args.full_classes,
        )
        report = {
            "scale": "full",
            "unfiltered_total": unfiltered["total"],
            "filtered_total": filtered["total"],
            "ratio": unfiltered["total"] / filtered["total"],
            "fusion_heads": fusion_head_flops(FULL_FEATURE_DIM, args.full_classes),
        }
    else:
        cfg = _load_config(args.config, _config_overrides(args))
        report = {"scale": "desk", **flop_report(cfg)}
    print(json.dumps(report, indent=2))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, _config_overrides(args))
    if args.corpus:
        recipe, scenes, splits = read_corpus(args.corpus)
        cfg = dataclasses.replace(cfg, recipe=recipe)
    else:
        scenes = generate(cfg.recipe, cfg.num_scenes)
        splits = ["train"] * cfg.train_count + ["test"] * (
            cfg.num_scenes - cfg.train_count
        )
    matrix = AblationMatrix(
        base=cfg,
        filter_windows=tuple(int(x) for x in args.filter_windows.split(",")),
        cham_options=tuple(
            {"on": True, "off": False}[x] for x in args.cham_options.split(",")
        ),
        fusions=tuple(args.fusions.split(",")),
        keep_values=tuple(int(x) for x in args.keep.split(",")) if args.keep else (),
    )
    rows = ablate(matrix, scenes, splits)
    out_lines = [json.dumps(r) for r in rows]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(out_lines) + "\n")
    print("\n".join(out_lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csrrm",
        description="Confidence-filtered semantic scene classification, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic fixture corpus")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="corpus directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="two-stage training run")
    _add_config_flags(p)
    p.add_argument("--corpus", help="fixture corpus directory (else generated)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run on a corpus split")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--ten-crop", dest="ten_crop", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("flops", help="analytic multiply-add report")
    _add_config_flags(p)
    p.add_argument("--scale", default="desk", choices=["desk", "full"])
    p.add_argument("--full-size", dest="full_size", type=int, default=224)
    p.add_argument("--full-classes", dest="full_classes", type=int, default=67)
    p.add_argument("--full-cham", dest="full_cham", action="store_true")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("ablate", help="grid of training runs")
    _add_config_flags(p)
    p.add_argument("--corpus", help="fixture corpus directory (else generated)")
    p.add_argument("--out", help="JSONL results file")
    p.add_argument("--filter-windows", dest="filter_windows", default="1,2,4")
    p.add_argument("--cham-options", dest="cham_options", default="on,off")
    p.add_argument("--fusions", default="dw,concat,gating")
    p.add_argument("--keep", help="comma-separated vocabulary keep_k levels")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface errors as exit status, per contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
