"""Dataset manifests and feature files.

A manifest is a CSV catalog of samples (sample_id, uri, class_id, split, and
optionally class_name). An optional sidecar grouping file maps each class to a
semantic group label. Feature files store a dense float matrix alongside a
parallel list of sample ids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    CoverageError,
    DuplicateIdError,
    InvalidFeatureError,
    MalformedManifestError,
)

VALID_SPLITS = ("train", "test")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    uri: str
    class_id: int
    split: str


@dataclass
class DatasetManifest:
    samples: list[SampleRecord]
    class_names: dict[int, str]
    semantic_group: Optional[dict[int, str]] = None

    def class_ids(self) -> set[int]:
        return {s.class_id for s in self.samples}

    def train_ids(self) -> set[str]:
        return {s.sample_id for s in self.samples if s.split == "train"}

    def test_ids(self) -> set[str]:
        return {s.sample_id for s in self.samples if s.split == "test"}

    def by_id(self) -> dict[str, SampleRecord]:
        return {s.sample_id: s for s in self.samples}

    def validate(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DuplicateIdError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            if s.class_id < 0:
                raise MalformedManifestError(
                    f"sample {s.sample_id!r}: class_id must be >= 0"
                )
            if s.split not in VALID_SPLITS:
                raise MalformedManifestError(
                    f"sample {s.sample_id!r}: split {s.split!r} not in {VALID_SPLITS}"
                )
            if s.class_id not in self.class_names:
                raise MalformedManifestError(
                    f"class_id {s.class_id} has no class_names entry"
                )
        if self.semantic_group is not None:
            missing = self.class_ids() - set(self.semantic_group)
            if missing:
                raise MalformedManifestError(
                    f"semantic_group does not cover class ids {sorted(missing)}"
                )


@dataclass
class FeatureMatrix:
    sample_ids: list[str]
    features: np.ndarray  # (n, d) float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InvalidFeatureError("features must be a 2-D matrix")
        if self.features.shape[0] != len(self.sample_ids):
            raise InvalidFeatureError(
                f"{len(self.sample_ids)} sample ids but "
                f"{self.features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise InvalidFeatureError("features contain non-finite values")


MANIFEST_FIELDS = ["sample_id", "uri", "class_id", "split"]


def load_manifest(path, grouping_path=None) -> DatasetManifest:
    """Load a manifest CSV, optionally attaching a class->group sidecar.

    The header must be sample_id,uri,class_id,split with an optional trailing
    class_name column. When class_name is absent the class id doubles as the
    name. Raises MalformedManifestError naming the offending line on parse
    failures and DuplicateIdError on a repeated sample_id.
    """
    path = Path(path)
    samples: list[SampleRecord] = []
    names: dict[int, str] = {}
    with_names = False
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedManifestError(f"{path}: empty manifest") from None
        header = [h.strip() for h in header]
        if header == MANIFEST_FIELDS + ["class_name"]:
            with_names = True
        elif header != MANIFEST_FIELDS:
            raise MalformedManifestError(
                f"{path}: line 1: bad header {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedManifestError(
                    f"{path}: line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            sample_id, uri, class_id_s, split = (f.strip() for f in row[:4])
            try:
                class_id = int(class_id_s)
            except ValueError:
                raise MalformedManifestError(
                    f"{path}: line {lineno}: class_id {class_id_s!r} "
                    "is not an integer"
                ) from None
            samples.append(SampleRecord(sample_id, uri, class_id, split))
            if with_names:
                name = row[4].strip()
                if name:
                    prev = names.get(class_id)
                    if prev is not None and prev != name:
                        raise MalformedManifestError(
                            f"{path}: line {lineno}: class {class_id} "
                            f"named both {prev!r} and {name!r}"
                        )
                    names[class_id] = name

    if not with_names:
        names = {s.class_id for s in samples}
        names = {c: f"class_{c}" for c in names}

    grouping = load_grouping(grouping_path) if grouping_path else None
    manifest = DatasetManifest(samples, names, grouping)
    manifest.validate()
    return manifest


def load_grouping(path) -> dict[int, str]:
    """Load a class_id,group_label sidecar CSV (header required)."""
    path = Path(path)
    grouping: dict[int, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["class_id", "group_label"]:
            raise MalformedManifestError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedManifestError(
                    f"{path}: line {lineno}: expected 2 fields, got {len(row)}"
                )
            try:
                class_id = int(row[0].strip())
            except ValueError:
                raise MalformedManifestError(
                    f"{path}: line {lineno}: class_id {row[0]!r} is not an integer"
                ) from None
            grouping[class_id] = row[1].strip()
    return grouping


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS + ["class_name"])
        for s in manifest.samples:
            writer.writerow(
                [s.sample_id, s.uri, s.class_id, s.split,
                 manifest.class_names[s.class_id]]
            )


def save_grouping(grouping: dict[int, str], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "group_label"])
        for class_id in sorted(grouping):
            writer.writerow([class_id, grouping[class_id]])


def save_features(fm: FeatureMatrix, path) -> None:
    """Write a feature file: npz with sample_ids, features, and a shape header."""
    np.savez(
        path,
        sample_ids=np.asarray(fm.sample_ids, dtype=np.str_),
        features=fm.features,
        shape=np.asarray(fm.features.shape, dtype=np.int64),
    )


def load_features(path) -> FeatureMatrix:
    with np.load(path, allow_pickle=False) as data:
        sample_ids = [str(s) for s in data["sample_ids"]]
        features = np.asarray(data["features"], dtype=np.float64)
        if "shape" in data and tuple(data["shape"]) != features.shape:
            raise InvalidFeatureError(
                f"{path}: header shape {tuple(data['shape'])} does not match "
                f"matrix shape {features.shape}"
            )
    return FeatureMatrix(sample_ids, features)


def features_for(fm: FeatureMatrix, sample_ids) -> np.ndarray:
    """Rows of a feature matrix for the given ids, in the given order."""
    index = {sid: i for i, sid in enumerate(fm.sample_ids)}
    missing = [sid for sid in sample_ids if sid not in index]
    if missing:
        raise CoverageError(
            f"feature file missing {len(missing)} sample(s), "
            f"e.g. {missing[:3]}"
        )
    return fm.features[[index[sid] for sid in sample_ids]]
