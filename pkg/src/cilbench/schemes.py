"""Phase plans and the three class-incremental partitioning schemes.

Random: shuffle the sorted class list with a seeded generator and chunk it
into N equal consecutive blocks. Semantic: one phase per supplied class
group, ordered by group label. Cluster: k-means over pretrained features of
the train split, one phase per cluster (sample-level, classes may repeat
across phases).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    CoverageError,
    GroupArityError,
    IndivisibleClassesError,
    MalformedManifestError,
    MissingGroupingError,
)
from .kmeans import kmeans_cluster
from .manifest import DatasetManifest, FeatureMatrix

CLASS_LEVEL = "class-level"
SAMPLE_LEVEL = "sample-level"


@dataclass
class PhasePartition:
    phase_index: int  # 1-based
    mode: str
    class_set: Optional[frozenset[int]] = None
    sample_set: Optional[frozenset[str]] = None


@dataclass
class PhasePlan:
    scheme: str  # random | semantic | cluster
    num_phases: int
    partitions: list[PhasePartition]
    seed: int

    @property
    def mode(self) -> str:
        return self.partitions[0].mode


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def split_random(manifest: DatasetManifest, n: int, seed: int) -> PhasePlan:
    """Equal-sized disjoint random class chunks; pure function of inputs."""
    classes = sorted(manifest.class_ids())
    if n < 2:
        raise IndivisibleClassesError(f"need at least 2 phases, got {n}")
    if len(classes) % n != 0:
        raise IndivisibleClassesError(
            f"{len(classes)} classes not divisible by {n} phases"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [classes[i] for i in rng.permutation(len(classes))]
    per = len(classes) // n
    partitions = [
        PhasePartition(
            phase_index=t + 1,
            mode=CLASS_LEVEL,
            class_set=frozenset(order[t * per : (t + 1) * per]),
        )
        for t in range(n)
    ]
    return PhasePlan("random", n, partitions, seed)


def split_semantic(manifest: DatasetManifest, n: int) -> PhasePlan:
    """One phase per semantic group, in lexicographic group-label order."""
    if manifest.semantic_group is None:
        raise MissingGroupingError("manifest has no semantic_group mapping")
    groups: dict[str, set[int]] = {}
    for class_id in manifest.class_ids():
        label = manifest.semantic_group[class_id]
        groups.setdefault(label, set()).add(class_id)
    if len(groups) != n:
        raise GroupArityError(
            f"grouping induces {len(groups)} groups, expected {n}"
        )
    partitions = [
        PhasePartition(
            phase_index=t + 1, mode=CLASS_LEVEL, class_set=frozenset(groups[label])
        )
        for t, label in enumerate(sorted(groups))
    ]
    return PhasePlan("semantic", n, partitions, seed=0)


def split_cluster(
    manifest: DatasetManifest, features: FeatureMatrix, n: int, seed: int
) -> PhasePlan:
    """Sample-level plan from k-means clusters of train-split features."""
    train_ids = sorted(manifest.train_ids())
    have = set(features.sample_ids)
    missing = [sid for sid in train_ids if sid not in have]
    if missing:
        raise CoverageError(
            f"features missing {len(missing)} train sample(s), e.g. {missing[:3]}"
        )
    index = {sid: i for i, sid in enumerate(features.sample_ids)}
    rows = features.features[[index[sid] for sid in train_ids]]
    assignment = kmeans_cluster(FeatureMatrix(train_ids, rows), n, seed)
    buckets: list[set[str]] = [set() for _ in range(n)]
    for sid, c in assignment.items():
        buckets[c].add(sid)
    partitions = [
        PhasePartition(phase_index=t + 1, mode=SAMPLE_LEVEL, sample_set=frozenset(b))
        for t, b in enumerate(buckets)
    ]
    return PhasePlan("cluster", n, partitions, seed)


def validate_plan(plan: PhasePlan, manifest: DatasetManifest) -> ValidationReport:
    """Collect every violated plan invariant; empty report iff valid."""
    v: list[str] = []
    if len(plan.partitions) != plan.num_phases:
        v.append(
            f"plan declares {plan.num_phases} phases but holds "
            f"{len(plan.partitions)} partitions"
        )
    for i, part in enumerate(plan.partitions):
        if part.phase_index != i + 1:
            v.append(f"partition {i} has phase_index {part.phase_index}, want {i + 1}")
        if part.mode not in (CLASS_LEVEL, SAMPLE_LEVEL):
            v.append(f"phase {part.phase_index}: unknown mode {part.mode!r}")
            continue
        populated = part.class_set if part.mode == CLASS_LEVEL else part.sample_set
        other = part.sample_set if part.mode == CLASS_LEVEL else part.class_set
        if not populated:
            v.append(f"phase {part.phase_index}: empty or missing {part.mode} set")
        if other:
            v.append(
                f"phase {part.phase_index}: both class_set and sample_set populated"
            )
    modes = {p.mode for p in plan.partitions}
    if len(modes) > 1:
        v.append(f"mixed partition modes {sorted(modes)}")
        return ValidationReport(v)

    if plan.mode == CLASS_LEVEL:
        seen: dict[int, int] = {}
        for part in plan.partitions:
            for c in part.class_set or ():
                if c in seen:
                    v.append(
                        f"class {c} appears in phases {seen[c]} and "
                        f"{part.phase_index}"
                    )
                else:
                    seen[c] = part.phase_index
        union = set(seen)
        all_classes = manifest.class_ids()
        for c in sorted(all_classes - union):
            v.append(f"class {c} missing from every phase")
        for c in sorted(union - all_classes):
            v.append(f"class {c} not present in the manifest")
    else:
        seen_s: dict[str, int] = {}
        for part in plan.partitions:
            for sid in part.sample_set or ():
                if sid in seen_s:
                    v.append(
                        f"sample {sid} appears in phases {seen_s[sid]} and "
                        f"{part.phase_index}"
                    )
                else:
                    seen_s[sid] = part.phase_index
        union_s = set(seen_s)
        train = manifest.train_ids()
        missing = sorted(train - union_s)
        if missing:
            v.append(
                f"{len(missing)} train sample(s) missing from every phase, "
                f"e.g. {missing[:3]}"
            )
        extra = sorted(union_s - train)
        if extra:
            v.append(
                f"{len(extra)} sample(s) not in the manifest train split, "
                f"e.g. {extra[:3]}"
            )
    return ValidationReport(v)


# -- serialization -------------------------------------------------------------

def plan_to_dict(plan: PhasePlan) -> dict:
    parts = []
    for p in plan.partitions:
        d: dict = {"phase_index": p.phase_index, "mode": p.mode}
        if p.mode == CLASS_LEVEL:
            d["class_set"] = sorted(p.class_set or ())
        else:
            d["sample_set"] = sorted(p.sample_set or ())
        parts.append(d)
    return {
        "scheme": plan.scheme,
        "num_phases": plan.num_phases,
        "seed": plan.seed,
        "partitions": parts,
    }


def plan_from_dict(d: dict) -> PhasePlan:
    partitions = [
        PhasePartition(
            phase_index=p["phase_index"],
            mode=p["mode"],
            class_set=frozenset(p["class_set"]) if "class_set" in p else None,
            sample_set=frozenset(p["sample_set"]) if "sample_set" in p else None,
        )
        for p in d["partitions"]
    ]
    return PhasePlan(d["scheme"], d["num_phases"], partitions, d["seed"])


def save_plan(plan: PhasePlan, path) -> None:
    Path(path).write_text(
        json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_plan(path) -> PhasePlan:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedManifestError(f"{path}: not a valid plan file: {e}") from None
    return plan_from_dict(d)


def phase_train_ids(
    plan: PhasePlan, manifest: DatasetManifest, t: int
) -> list[str]:
    """Train sample_ids of phase t (1-based), sorted for determinism."""
    part = plan.partitions[t - 1]
    if part.mode == CLASS_LEVEL:
        return sorted(
            s.sample_id
            for s in manifest.samples
            if s.split == "train" and s.class_id in part.class_set
        )
    return sorted(part.sample_set)
