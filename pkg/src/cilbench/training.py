"""Phase-level training procedures.

Four trainers share one skeleton: an auditing loader serves shuffled batches
of sample ids (recording every id it serves and refusing ids outside the
phase's allowance), the torch model produces projections or logits, and the
verified numpy losses supply the gradient that is backpropagated through the
network. Loss math therefore lives in one place (losses.py) for training,
probing, and oracle tests alike.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterator, Optional

import numpy as np
import torch
from torch import nn

from . import losses
from .augment import AugmentationConfig, augment_pair
from .errors import (
    EmptyPhaseError,
    LeakageError,
    MemoryCapacityError,
)
from .models import ModelState, batch_to_tensor
from .seeding import derive_seed, rng_for


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.2
    epochs_per_phase: int = 30
    optimizer: str = "sgd-momentum"
    momentum: float = 0.9
    schedule: str = "cosine"
    weight_decay_ssl: float = 1e-6
    weight_decay_supervised: float = 1e-4
    temperature: float = 0.1
    distill_weight: float = 1.0
    memory_capacity: int = 2000
    seed: int = 0

    def validate(self) -> None:
        for name in ("batch_size", "learning_rate", "epochs_per_phase",
                     "momentum", "temperature"):
            if getattr(self, name) <= 0 and name != "momentum":
                raise EmptyPhaseError(f"TrainConfig.{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PhaseResult:
    state: ModelState
    loss_trace: list[float]
    wall_time: float
    config: dict
    head: Optional[np.ndarray] = None  # (classes, feature_dim + 1) affine rows
    class_order: Optional[list[int]] = None


@dataclass
class ExemplarMemory:
    capacity: int
    per_class: dict[int, list[str]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def all_ids(self) -> list[str]:
        out: list[str] = []
        for c in sorted(self.per_class):
            out.extend(self.per_class[c])
        return out

    def validate(self) -> None:
        if self.total() > self.capacity:
            raise MemoryCapacityError(
                f"memory holds {self.total()} > capacity {self.capacity}"
            )


class AuditingLoader:
    """Epoch iterator over sample ids that enforces the phase's data allowance."""

    def __init__(self, allowed_ids, batch_size: int, seed: int, phase: int):
        self.ids = sorted(allowed_ids)
        if not self.ids:
            raise EmptyPhaseError("phase has no training samples")
        self.allowed = set(self.ids)
        self.batch_size = batch_size
        self.seed = seed
        self.phase = phase
        self.served: set[str] = set()

    def epoch(self, epoch: int) -> Iterator[list[str]]:
        order = rng_for(self.seed, "order", self.phase, epoch).permutation(len(self.ids))
        for start in range(0, len(self.ids), self.batch_size):
            batch = [self.ids[i] for i in order[start : start + self.batch_size]]
            for sid in batch:
                if sid not in self.allowed:
                    raise LeakageError(f"sample {sid} served outside its phase")
            self.served.update(batch)
            yield batch


def check_no_leakage(phase_ids, forbidden_ids) -> None:
    leaked = set(phase_ids) & set(forbidden_ids)
    if leaked:
        raise LeakageError(
            f"{len(leaked)} prior-phase sample(s) present in phase data, "
            f"e.g. {sorted(leaked)[:3]}"
        )


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total_steps - 1)))


def _make_optimizer(params, cfg: TrainConfig, weight_decay: float):
    return torch.optim.SGD(
        params, lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=weight_decay
    )


def train_sscil_phase(
    state: ModelState,
    phase_ids,
    image_fn: Callable[[str], np.ndarray],
    cfg: TrainConfig,
    aug: AugmentationConfig,
    phase: int,
    run_seed: int,
    forbidden_ids=(),
) -> PhaseResult:
    """One contrastive phase. Labels are never consulted."""
    cfg.validate()
    check_no_leakage(phase_ids, forbidden_ids)
    loader = AuditingLoader(phase_ids, cfg.batch_size, run_seed, phase)
    opt = _make_optimizer(list(state.parameters()), cfg, cfg.weight_decay_ssl)
    steps_per_epoch = math.ceil(len(loader.ids) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs_per_phase
    start = time.monotonic()
    trace: list[float] = []
    step = 0
    state.train()
    for epoch in range(cfg.epochs_per_phase):
        epoch_losses: list[float] = []
        for batch in loader.epoch(epoch):
            pairs = [
                augment_pair(image_fn(sid), aug, (run_seed, "aug", phase, epoch, sid))
                for sid in batch
            ]
            views = np.stack([p.view_i for p in pairs] + [p.view_j for p in pairs])
            for g in opt.param_groups:
                g["lr"] = cosine_lr(cfg.learning_rate, step, total_steps)
            opt.zero_grad()
            x = batch_to_tensor(views)
            z = state.projector(state.encoder(x))
            loss, grad = losses.nt_xent_loss(z.detach().double().numpy(),
                                             cfg.temperature)
            z.backward(torch.from_numpy(grad).to(z.dtype))
            opt.step()
            epoch_losses.append(loss)
            step += 1
        trace.append(float(np.mean(epoch_losses)))
    return PhaseResult(state, trace, time.monotonic() - start, cfg.to_dict())


# -- supervised baselines --------------------------------------------------------

class ClassifierHead(nn.Module):
    """Affine head that grows as classes arrive; old rows are preserved."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.linear: Optional[nn.Linear] = None
        self.class_order: list[int] = []

    def extend(self, new_classes, seed: int) -> None:
        new_classes = [c for c in sorted(new_classes) if c not in self.class_order]
        if not new_classes:
            return
        total = len(self.class_order) + len(new_classes)
        torch.manual_seed(derive_seed(seed, "head", total))
        linear = nn.Linear(self.feature_dim, total)
        if self.linear is not None:
            with torch.no_grad():
                old = self.linear.out_features
                linear.weight[:old] = self.linear.weight
                linear.bias[:old] = self.linear.bias
        self.linear = linear
        self.class_order.extend(new_classes)

    def column_of(self, class_id: int) -> int:
        return self.class_order.index(class_id)

    def forward(self, h):
        return self.linear(h)

    def as_array(self) -> np.ndarray:
        w = self.linear.weight.detach().numpy()
        b = self.linear.bias.detach().numpy()[:, None]
        return np.concatenate([w, b], axis=1)


def _supervised_phase(
    state: ModelState,
    head: ClassifierHead,
    train_ids: list[str],
    image_fn: Callable[[str], np.ndarray],
    label_fn: Callable[[str], int],
    cfg: TrainConfig,
    phase: int,
    run_seed: int,
    teacher: Optional[tuple[nn.Module, nn.Linear]] = None,
    old_classes: int = 0,
) -> list[float]:
    """Cross-entropy training of encoder + head, optional distillation term."""
    loader = AuditingLoader(train_ids, cfg.batch_size, run_seed, phase)
    params = list(state.encoder.parameters()) + list(head.parameters())
    opt = _make_optimizer(params, cfg, cfg.weight_decay_supervised)
    steps_per_epoch = math.ceil(len(loader.ids) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs_per_phase
    trace: list[float] = []
    step = 0
    state.encoder.train()
    for epoch in range(cfg.epochs_per_phase):
        epoch_losses: list[float] = []
        for batch in loader.epoch(epoch):
            images = np.stack([image_fn(sid) for sid in batch])
            labels = np.array([head.column_of(label_fn(sid)) for sid in batch])
            for g in opt.param_groups:
                g["lr"] = cosine_lr(cfg.learning_rate, step, total_steps)
            opt.zero_grad()
            x = batch_to_tensor(images)
            logits = head(state.encoder(x))
            logits_np = logits.detach().double().numpy()
            loss, grad = losses.cross_entropy_loss(logits_np, labels)
            if teacher is not None and old_classes > 0:
                t_enc, t_head = teacher
                with torch.no_grad():
                    t_logits = t_head(t_enc(x)).double().numpy()[:, :old_classes]
                t_probs = 1.0 / (1.0 + np.exp(-t_logits))
                d_loss, d_grad = losses.distillation_loss(logits_np, t_probs)
                loss += cfg.distill_weight * d_loss
                grad = grad + cfg.distill_weight * d_grad
            logits.backward(torch.from_numpy(grad).to(logits.dtype))
            opt.step()
            epoch_losses.append(loss)
            step += 1
        trace.append(float(np.mean(epoch_losses)))
    return trace


def train_finetune_phase(
    state: ModelState,
    head: ClassifierHead,
    phase_ids,
    image_fn,
    label_fn,
    cfg: TrainConfig,
    phase: int,
    run_seed: int,
    forbidden_ids=(),
) -> PhaseResult:
    """Plain supervised fine-tuning on the current phase's data only."""
    cfg.validate()
    check_no_leakage(phase_ids, forbidden_ids)
    head.extend({label_fn(sid) for sid in phase_ids}, run_seed)
    start = time.monotonic()
    trace = _supervised_phase(
        state, head, sorted(phase_ids), image_fn, label_fn, cfg, phase, run_seed
    )
    return PhaseResult(state, trace, time.monotonic() - start, cfg.to_dict(),
                       head=head.as_array(), class_order=list(head.class_order))


def herding_select(features: np.ndarray, sample_ids, m: int) -> list[str]:
    """Greedy nearest-to-class-mean exemplar selection (lowest-index ties)."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if m > n:
        raise MemoryCapacityError(f"requested {m} exemplars from {n} samples")
    mean = features.mean(axis=0)
    chosen: list[int] = []
    running = np.zeros_like(mean)
    available = np.ones(n, dtype=bool)
    for k in range(m):
        # candidate exemplar means after adding each remaining sample
        cand = (running + features) / (k + 1)
        dist = np.linalg.norm(cand - mean, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))  # argmin resolves ties to the lowest index
        chosen.append(pick)
        running += features[pick]
        available[pick] = False
    return [sample_ids[i] for i in chosen]


def train_icarl_phase(
    state: ModelState,
    head: ClassifierHead,
    phase_ids,
    image_fn,
    label_fn,
    memory: ExemplarMemory,
    cfg: TrainConfig,
    phase: int,
    run_seed: int,
    feature_fn: Optional[Callable[[list[str]], np.ndarray]] = None,
    forbidden_ids=(),
) -> tuple[PhaseResult, ExemplarMemory]:
    """Rehearsal + distillation phase, then herding-based memory rebalance.

    feature_fn maps a list of sample ids to encoder features; when omitted the
    trainer extracts them with the post-phase encoder.
    """
    cfg.validate()
    memory.validate()
    check_no_leakage(phase_ids, forbidden_ids)
    old_classes = len(head.class_order)
    teacher = None
    if old_classes > 0:
        teacher = (copy.deepcopy(state.encoder).eval(),
                   copy.deepcopy(head.linear).eval())
    head.extend({label_fn(sid) for sid in phase_ids}, run_seed)

    train_ids = sorted(set(phase_ids) | set(memory.all_ids()))
    start = time.monotonic()
    trace = _supervised_phase(
        state, head, train_ids, image_fn, label_fn, cfg, phase, run_seed,
        teacher=teacher, old_classes=old_classes,
    )

    if feature_fn is None:
        from .models import forward_features

        def feature_fn(ids):
            return forward_features(state, np.stack([image_fn(s) for s in ids]))

    # rebalance: capacity // seen classes exemplars per class
    seen = list(head.class_order)
    per = memory.capacity // len(seen)
    new_memory = ExemplarMemory(memory.capacity)
    by_class: dict[int, list[str]] = {}
    for sid in sorted(set(phase_ids)):
        by_class.setdefault(label_fn(sid), []).append(sid)
    for c in seen:
        if c in by_class:
            pool = sorted(set(by_class[c]) | set(memory.per_class.get(c, [])))
            feats = feature_fn(pool)
            new_memory.per_class[c] = herding_select(feats, pool, min(per, len(pool)))
        else:
            # class absent from this phase: keep the first `per` stored picks
            new_memory.per_class[c] = list(memory.per_class.get(c, []))[:per]
    new_memory.validate()
    result = PhaseResult(state, trace, time.monotonic() - start, cfg.to_dict(),
                         head=head.as_array(), class_order=list(head.class_order))
    return result, new_memory


def train_joint(
    state: ModelState,
    all_ids,
    image_fn,
    cfg: TrainConfig,
    aug: AugmentationConfig,
    run_seed: int,
    mode: str = "self-supervised",
    label_fn=None,
    head: Optional[ClassifierHead] = None,
) -> PhaseResult:
    """Single-phase reference run over the full dataset (forgetting upper bound)."""
    if state.phase_index != 0:
        raise LeakageError("joint training requires a fresh phase-0 state")
    if mode == "self-supervised":
        return train_sscil_phase(state, all_ids, image_fn, cfg, aug,
                                 phase=1, run_seed=run_seed)
    if mode == "supervised":
        if label_fn is None or head is None:
            raise EmptyPhaseError("supervised joint training needs labels and a head")
        return train_finetune_phase(state, head, all_ids, image_fn, label_fn,
                                    cfg, phase=1, run_seed=run_seed)
    raise EmptyPhaseError(f"unknown joint mode {mode!r}")
