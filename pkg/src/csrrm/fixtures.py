"""Binary fixture files for synthetic scenes plus a corpus manifest.

Layout (all little-endian):

    magic "SRRM" | version u16 | w u32 | h u32 | l u32 | class u32 |
    payload f64: score (w*h*l), rgb (3*w*h), clean_labels (w*h),
    corruption_mask (w*h) | crc32 u32 over everything before it
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .score_filter import ScoreTensor
from .synthetic import SceneRecipe, SyntheticScene

__all__ = [
    "FixtureError",
    "FIXTURE_MAGIC",
    "FIXTURE_VERSION",
    "write_fixture",
    "read_fixture",
    "write_corpus",
    "read_corpus",
]

FIXTURE_MAGIC = b"SRRM"
FIXTURE_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


class FixtureError(Exception):
    """A fixture file is malformed: bad magic, version, size, or checksum."""


def scene_bytes(scene: SyntheticScene) -> bytes:
    w, h = scene.clean_labels.shape
    l = scene.score.labels
    head = _HEADER.pack(FIXTURE_MAGIC, FIXTURE_VERSION, w, h, l, scene.label)
    payload = np.concatenate(
        [
            scene.score.data.ravel(),
            scene.rgb.ravel(),
            scene.clean_labels.astype(np.float64).ravel(),
            scene.corruption_mask.astype(np.float64).ravel(),
        ]
    ).astype("<f8")
    body = head + payload.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def write_fixture(scene: SyntheticScene, path) -> None:
    Path(path).write_bytes(scene_bytes(scene))


def read_fixture(path) -> SyntheticScene:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FixtureError(f"{path}: truncated fixture ({len(raw)} bytes)")
    magic, version, w, h, l, label = _HEADER.unpack_from(raw)
    if magic != FIXTURE_MAGIC:
        raise FixtureError(f"{path}: bad magic {magic!r}")
    if version != FIXTURE_VERSION:
        raise FixtureError(f"{path}: unsupported version {version}")
    n_floats = w * h * l + 3 * w * h + 2 * w * h
    expected = _HEADER.size + 8 * n_floats + 4
    if len(raw) != expected:
        raise FixtureError(
            f"{path}: expected {expected} bytes for {w}x{h}x{l}, got {len(raw)}"
        )
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc_stored:
        raise FixtureError(f"{path}: CRC mismatch")
    floats = np.frombuffer(raw, dtype="<f8", count=n_floats, offset=_HEADER.size)
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = floats[pos : pos + count]
        pos += count
        return out

    score = take(w * h * l).reshape(w, h, l).copy()
    rgb = take(3 * w * h).reshape(3, w, h).copy()
    clean = take(w * h).reshape(w, h).astype(np.int64)
    mask = take(w * h).reshape(w, h) != 0.0
    try:
        score_tensor = ScoreTensor(score)
    except ValueError as exc:
        raise FixtureError(f"{path}: invalid score payload: {exc}") from exc
    return SyntheticScene(
        score=score_tensor,
        rgb=rgb,
        label=int(label),
        clean_labels=clean,
        corruption_mask=mask,
    )


def write_corpus(
    scenes: list[SyntheticScene],
    recipe: SceneRecipe,
    directory,
    splits: list[str] | None = None,
    train_fraction: float = 0.75,
    split_seed: int = 0,
) -> Path:
    """Write one fixture per scene plus a manifest.json with split assignment.

    Splits may be given explicitly; otherwise they are drawn at
    ``train_fraction`` with a seeded rng.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if splits is not None and len(splits) != len(scenes):
        raise ValueError("splits must align with scenes")
    rng = np.random.default_rng(split_seed)
    entries = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:05d}.srrm"
        write_fixture(scene, directory / name)
        if splits is not None:
            split = splits[i]
        else:
            split = "train" if rng.random() < train_fraction else "test"
        entries.append({"path": name, "label": scene.label, "split": split})
    manifest = {
        "format": "srrm-fixture-v1",
        "recipe": recipe.to_dict(),
        "scenes": entries,
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def read_corpus(directory) -> tuple[SceneRecipe, list[SyntheticScene], list[str]]:
    """Load a corpus; returns (recipe, scenes, split labels per scene)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FixtureError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FixtureError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if manifest.get("format") != "srrm-fixture-v1":
        raise FixtureError(f"{manifest_path}: unknown format {manifest.get('format')}")
    recipe = SceneRecipe.from_dict(manifest["recipe"])
    scenes, splits = [], []
    for entry in manifest["scenes"]:
        scene = read_fixture(directory / entry["path"])
        if scene.label != entry["label"]:
            raise FixtureError(
                f"{entry['path']}: label {scene.label} disagrees with manifest "
                f"{entry['label']}"
            )
        scenes.append(scene)
        splits.append(entry["split"])
    return recipe, scenes, splits
