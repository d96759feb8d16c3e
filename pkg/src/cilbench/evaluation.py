"""LEP / GEP evaluation protocols, GEP detail, forgetting gap, histograms.

All evaluation operates on features extracted once from a frozen, eval-mode
encoder; the probe itself is a multinomial logistic regression trained with
momentum SGD on those cached features, so probing can never touch encoder
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import pdist

from . import losses
from .errors import (
    DegenerateProbeError,
    DetailUndefinedError,
    InsufficientDataError,
    LepUndefinedError,
)
from .manifest import DatasetManifest, FeatureMatrix, save_features
from .models import ModelState, forward_features, forward_projection
from .schemes import CLASS_LEVEL, PhasePlan
from .seeding import rng_for


@dataclass
class ProbeConfig:
    epochs: int = 100
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int = 256
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProbeResult:
    weight: np.ndarray  # (classes, d)
    bias: np.ndarray  # (classes,)
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    classes: list[int]  # column -> class_id
    accuracy: float  # top-1 on the training distribution
    train_count: int
    test_count: int = 0


@dataclass
class MetricsRecord:
    phase_index: int
    gep: float
    lep: Optional[float] = None
    gep_detail: dict[int, float] = field(default_factory=dict)
    forgetting_gap: Optional[float] = None


def fit_linear_probe(
    features: np.ndarray, labels: np.ndarray, cfg: ProbeConfig
) -> ProbeResult:
    """Train an affine classifier on frozen features (standardized in-probe)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DegenerateProbeError("probe training set has a single class")
    col = {c: i for i, c in enumerate(classes)}
    y = np.array([col[c] for c in labels])

    mean = features.mean(axis=0)
    scale = features.std(axis=0) + 1e-8
    x = (features - mean) / scale
    n, d = x.shape
    w = np.zeros((len(classes), d))
    b = np.zeros(len(classes))
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    rng = rng_for("probe", cfg.seed)
    steps_per_epoch = max(1, int(np.ceil(n / cfg.batch_size)))
    total = cfg.epochs * steps_per_epoch
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = x[idx] @ w.T + b
            _, grad = losses.cross_entropy_loss(logits, y[idx])
            gw = grad.T @ x[idx]
            gb = grad.sum(axis=0)
            lr = cfg.learning_rate * 0.5 * (
                1.0 + np.cos(np.pi * step / max(1, total - 1))
            )
            vw = cfg.momentum * vw - lr * gw
            vb = cfg.momentum * vb - lr * gb
            w += vw
            b += vb
            step += 1
    pred = np.argmax(x @ w.T + b, axis=1)
    acc = float((pred == y).mean())
    return ProbeResult(w, b, mean, scale, classes, acc, n)


def probe_predict(probe: ProbeResult, features: np.ndarray) -> np.ndarray:
    """Predicted class_ids for raw (unstandardized) features."""
    x = (np.asarray(features, dtype=np.float64) - probe.feat_mean) / probe.feat_scale
    cols = np.argmax(x @ probe.weight.T + probe.bias, axis=1)
    return np.array([probe.classes[c] for c in cols])


def probe_accuracy(probe: ProbeResult, features: np.ndarray,
                   labels: np.ndarray) -> float:
    return float((probe_predict(probe, features) == np.asarray(labels)).mean())


def _split_samples(manifest: DatasetManifest, split: str, class_filter=None):
    samples = [s for s in manifest.samples if s.split == split]
    if class_filter is not None:
        samples = [s for s in samples if s.class_id in class_filter]
    samples.sort(key=lambda s: s.sample_id)
    ids = [s.sample_id for s in samples]
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    return ids, labels


def extract_features(state: ModelState, ids, image_fn,
                     batch_size: int = 512) -> np.ndarray:
    """Eval-mode encoder features for a list of sample ids."""
    chunks = []
    for start in range(0, len(ids), batch_size):
        batch = ids[start : start + batch_size]
        chunks.append(
            forward_features(state, np.stack([image_fn(sid) for sid in batch]))
        )
    return np.concatenate(chunks) if chunks else np.empty((0, 0))


def eval_lep(
    state: ModelState,
    plan: PhasePlan,
    manifest: DatasetManifest,
    t: int,
    image_fn,
    cfg: ProbeConfig,
) -> tuple[float, ProbeResult]:
    """Linear evaluation over the classes of phases 1..t (class-level plans)."""
    if plan.mode != CLASS_LEVEL:
        raise LepUndefinedError(
            f"LEP is undefined for {plan.scheme} (sample-level) plans"
        )
    seen: set[int] = set()
    for part in plan.partitions[:t]:
        seen |= set(part.class_set)
    train_ids, train_labels = _split_samples(manifest, "train", seen)
    test_ids, test_labels = _split_samples(manifest, "test", seen)
    train_x = extract_features(state, train_ids, image_fn)
    probe = fit_linear_probe(train_x, train_labels, cfg)
    test_x = extract_features(state, test_ids, image_fn)
    acc = probe_accuracy(probe, test_x, test_labels)
    probe.test_count = len(test_ids)
    return acc, probe


def eval_gep(
    state: ModelState,
    manifest: DatasetManifest,
    image_fn,
    cfg: ProbeConfig,
) -> tuple[float, ProbeResult]:
    """Generalization evaluation: full-train probe tested on the full test set."""
    train_ids, train_labels = _split_samples(manifest, "train")
    test_ids, test_labels = _split_samples(manifest, "test")
    train_x = extract_features(state, train_ids, image_fn)
    probe = fit_linear_probe(train_x, train_labels, cfg)
    test_x = extract_features(state, test_ids, image_fn)
    acc = probe_accuracy(probe, test_x, test_labels)
    probe.test_count = len(test_ids)
    return acc, probe


def gep_detail(
    state: ModelState,
    plan: PhasePlan,
    manifest: DatasetManifest,
    image_fn,
    probe: ProbeResult,
) -> dict[int, float]:
    """The full-data probe's accuracy restricted to each phase's test subset."""
    if plan.mode != CLASS_LEVEL:
        raise DetailUndefinedError(
            f"GEP detail is undefined for {plan.scheme} (sample-level) plans"
        )
    detail: dict[int, float] = {}
    for part in plan.partitions:
        ids, labels = _split_samples(manifest, "test", set(part.class_set))
        x = extract_features(state, ids, image_fn)
        detail[part.phase_index] = probe_accuracy(probe, x, labels)
    return detail


def forgetting_gap(joint_metric: float, final_metric: float) -> float:
    """joint minus final; positive means the incremental model forgot."""
    return joint_metric - final_metric


def representation_stage(state: ModelState, images: np.ndarray,
                         stage: str) -> np.ndarray:
    h = forward_features(state, images)
    if stage == "encoder":
        return h
    if stage == "projector":
        return forward_projection(state, h)
    raise InsufficientDataError(f"unknown representation stage {stage!r}")


def pairwise_distance_histogram(
    state: ModelState,
    images: np.ndarray,
    stage: str,
    bins: int = 50,
    metric: str = "cosine",
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of pairwise distances among representations at one stage.

    Returns (counts, bin_edges); counts sum to n(n-1)/2. Cosine distances use
    fixed edges over [0, 2] so histograms are comparable across phases.
    """
    if images.shape[0] < 2:
        raise InsufficientDataError("need at least 2 samples for a histogram")
    reps = representation_stage(state, images, stage)
    dists = pdist(reps, metric=metric)
    if metric == "cosine":
        edges = np.linspace(0.0, 2.0, bins + 1)
    else:
        edges = np.linspace(0.0, max(float(dists.max()), 1e-12), bins + 1)
    counts, edges = np.histogram(dists, bins=edges)
    return counts, edges


def export_embeddings(
    state: ModelState, sample_ids, image_fn, stage: str, path
) -> FeatureMatrix:
    """Write representations at a stage as a feature file for external tools."""
    images = np.stack([image_fn(sid) for sid in sample_ids])
    reps = representation_stage(state, images, stage)
    fm = FeatureMatrix(list(sample_ids), reps)
    save_features(fm, path)
    return fm
