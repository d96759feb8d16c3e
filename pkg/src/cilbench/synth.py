"""Procedural image corpus for desk-scale benchmark runs.

Each class is a grating pattern (orientation x frequency) drawn with a
class-correlated foreground hue over a randomly colored dark background, so
the reliable class signal is structural (visible in luminance) while color is
a partially-informative nuisance cue. Images, a manifest, and a semantic
grouping sidecar are written as one self-contained directory.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import _hsv_to_rgb
from .manifest import (
    DatasetManifest,
    SampleRecord,
    save_grouping,
    save_manifest,
)
from .seeding import rng_for

BUNDLE_NAME = "images.npz"
MANIFEST_NAME = "manifest.csv"
GROUPING_NAME = "grouping.csv"


def render_sample(class_id: int, num_classes: int, size: int,
                  rng: np.random.Generator, hue_cue: bool = True) -> np.ndarray:
    """One image of the class: oriented grating, random colors and jitter.

    The structural class signal (orientation x frequency) lives in luminance.
    When hue_cue is set the foreground hue also tracks the class; with it off
    the hue is uniform noise.
    """
    theta = (class_id % 5) * np.pi / 5 + rng.uniform(-0.3, 0.3)
    freq = (2.0 if class_id < 5 else 4.0) * rng.uniform(0.85, 1.15)
    phase = rng.uniform(0, 2 * np.pi)

    ys, xs = np.mgrid[0:size, 0:size] / size
    wave = np.sin(2 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) + phase)
    mask = (wave > 0).astype(np.float64)

    if hue_cue:
        fg_hue = (class_id / num_classes + rng.uniform(-0.06, 0.06)) % 1.0
    else:
        fg_hue = rng.uniform()
    fg = _hsv_to_rgb(
        np.array(fg_hue), np.array(rng.uniform(0.5, 1.0)), np.array(rng.uniform(0.5, 0.9))
    )
    bg = _hsv_to_rgb(
        np.array(rng.uniform()), np.array(rng.uniform(0.3, 0.9)), np.array(rng.uniform(0.2, 0.32))
    )
    img = mask[:, :, None] * fg + (1.0 - mask[:, :, None]) * bg
    img = img + rng.uniform(-0.15, 0.15, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_dataset(
    out_dir,
    num_classes: int = 10,
    train_per_class: int = 100,
    test_per_class: int = 40,
    size: int = 24,
    seed: int = 0,
    num_groups: int = 5,
) -> DatasetManifest:
    """Render the corpus and write bundle + manifest + grouping sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images: dict[str, np.ndarray] = {}
    samples: list[SampleRecord] = []
    for c in range(num_classes):
        for split, count in (("train", train_per_class), ("test", test_per_class)):
            for i in range(count):
                sid = f"c{c:02d}_{split}_{i:04d}"
                rng = rng_for("synth", seed, sid)
                img = render_sample(c, num_classes, size, rng)
                images[sid] = img.astype(np.float32)
                samples.append(
                    SampleRecord(sid, f"{BUNDLE_NAME}#{sid}", c, split)
                )
    np.savez_compressed(out_dir / BUNDLE_NAME, **images)

    class_names = {c: f"pattern_{c:02d}" for c in range(num_classes)}
    # consecutive classes share a group so the semantic scheme has N groups
    per_group = max(1, num_classes // num_groups)
    grouping = {c: f"group_{min(c // per_group, num_groups - 1):02d}"
                for c in range(num_classes)}
    manifest = DatasetManifest(samples, class_names, grouping)
    manifest.validate()
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    save_grouping(grouping, out_dir / GROUPING_NAME)
    return manifest
