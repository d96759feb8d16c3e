"""Run orchestration: run directories, the phase loop, ledger and metrics.

A run owns `<output_dir>/<run_id>/` exclusively (lock file) with the layout
config.yaml, plan.json, checkpoints/phase_<t>/, metrics.csv, logs/. The
ledger is append-only per phase: a completed phase's checkpoint and metrics
are never rewritten, and an interrupted run resumes from the last completed
phase checkpoint.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import RunConfig, save_run_config
from .errors import DataError, DegenerateProbeError, UsageError
from .evaluation import (
    MetricsRecord,
    eval_gep,
    eval_lep,
    gep_detail,
)
from .manifest import load_features, load_manifest
from .models import (
    ModelState,
    init_model,
    inherit_state,
    load_checkpoint,
    save_checkpoint,
)
from .payloads import load_image
from .schemes import (
    CLASS_LEVEL,
    PhasePlan,
    load_plan,
    phase_train_ids,
    save_plan,
    split_cluster,
    split_random,
    split_semantic,
    validate_plan,
)
from .training import (
    ClassifierHead,
    ExemplarMemory,
    train_finetune_phase,
    train_icarl_phase,
    train_joint,
    train_sscil_phase,
)

METRICS_HEADER = ["run_id", "phase", "metric", "value", "timestamp"]


def set_deterministic(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


class RunDir:
    def __init__(self, root: Path, run_id: str):
        self.path = Path(root) / run_id
        self.run_id = run_id
        self.checkpoints = self.path / "checkpoints"
        self.logs = self.path / "logs"
        self.metrics_path = self.path / "metrics.csv"
        self.ledger_path = self.path / "ledger.json"
        self.lock_path = self.path / "lock"

    def create(self) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        self.checkpoints.mkdir(exist_ok=True)
        self.logs.mkdir(exist_ok=True)
        if not self.metrics_path.exists():
            with self.metrics_path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def acquire_lock(self) -> None:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(
                f"{self.path}: run directory is locked by another process "
                "(remove the lock file if that process is gone)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)

    def release_lock(self) -> None:
        self.lock_path.unlink(missing_ok=True)

    def ledger(self) -> dict:
        if self.ledger_path.exists():
            return json.loads(self.ledger_path.read_text(encoding="utf-8"))
        return {"run_id": self.run_id, "config": None, "phases": {}}

    def write_ledger(self, ledger: dict) -> None:
        tmp = self.ledger_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(ledger, indent=2, sort_keys=True), encoding="utf-8")
        tmp.rename(self.ledger_path)

    def append_metric(self, phase: int, metric: str, value: float) -> None:
        with self.metrics_path.open("a", newline="") as fh:
            csv.writer(fh).writerow(
                [self.run_id, phase, metric, f"{value:.10g}", f"{time.time():.3f}"]
            )

    def read_metrics(self) -> list[dict]:
        with self.metrics_path.open(newline="") as fh:
            return list(csv.DictReader(fh))

    def metric_by_phase(self, name: str) -> dict[int, float]:
        out: dict[int, float] = {}
        for row in self.read_metrics():
            if row["metric"] == name:
                out[int(row["phase"])] = float(row["value"])
        return out

    def write_loss_trace(self, phase: int, trace: list[float]) -> None:
        path = self.logs / f"loss_phase_{phase:02d}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            for i, v in enumerate(trace, start=1):
                writer.writerow([i, f"{v:.10g}"])


def build_plan(cfg: RunConfig) -> PhasePlan:
    manifest = load_manifest(cfg.data.manifest, cfg.data.grouping)
    name = cfg.scheme.name
    if name == "random":
        return split_random(manifest, cfg.scheme.phases, cfg.scheme.seed)
    if name == "semantic":
        return split_semantic(manifest, cfg.scheme.phases)
    if name == "cluster":
        if not cfg.data.features:
            raise UsageError("cluster scheme requires data.features")
        features = load_features(cfg.data.features)
        return split_cluster(manifest, features, cfg.scheme.phases, cfg.scheme.seed)
    raise UsageError(f"unknown scheme {name!r}")


def default_run_id(cfg: RunConfig) -> str:
    return (
        f"{cfg.method}_{cfg.scheme.name}{cfg.scheme.phases}"
        f"_seed{cfg.run_seed}"
    )


@dataclass
class RunContext:
    cfg: RunConfig
    plan: PhasePlan
    manifest: object
    rundir: RunDir

    def image_fn(self, sid: str) -> np.ndarray:
        record = self._by_id[sid]
        return load_image(record.uri, self._base_dir)

    def label_fn(self, sid: str) -> int:
        return self._by_id[sid].class_id

    def __post_init__(self):
        self._by_id = self.manifest.by_id()
        self._base_dir = self.cfg.data.base_dir or str(
            Path(self.cfg.data.manifest).parent
        )


def _head_from_extras(extras: dict, feature_dim: int) -> ClassifierHead:
    head = ClassifierHead(feature_dim)
    order = extras.get("class_order") or []
    if order:
        head.class_order = list(order)
        arr = np.asarray(extras["head"], dtype=np.float32)
        linear = nn.Linear(feature_dim, len(order))
        with torch.no_grad():
            linear.weight.copy_(torch.from_numpy(arr[:, :-1]))
            linear.bias.copy_(torch.from_numpy(arr[:, -1]))
        head.linear = linear
    return head


def _memory_from_extras(extras: dict, capacity: int) -> ExemplarMemory:
    per_class = {int(k): list(v) for k, v in (extras.get("memory") or {}).items()}
    return ExemplarMemory(capacity, per_class)


def _evaluate_phase(ctx: RunContext, state: ModelState, t: int,
                    defer: bool, final_phase: int) -> Optional[MetricsRecord]:
    if defer and t != final_phase:
        return None
    gep, probe = eval_gep(state, ctx.manifest, ctx.image_fn, ctx.cfg.probe)
    record = MetricsRecord(phase_index=t, gep=gep)
    ctx.rundir.append_metric(t, "gep", gep)
    if ctx.plan.mode == CLASS_LEVEL:
        try:
            lep, _ = eval_lep(state, ctx.plan, ctx.manifest, t, ctx.image_fn,
                              ctx.cfg.probe)
        except DegenerateProbeError:
            # a phase prefix spanning one class has no meaningful probe
            ctx.rundir.append_metric(t, "lep_degenerate", float("nan"))
        else:
            record.lep = lep
            ctx.rundir.append_metric(t, "lep", lep)
        detail = gep_detail(state, ctx.plan, ctx.manifest, ctx.image_fn, probe)
        record.gep_detail = detail
        for p, acc in detail.items():
            ctx.rundir.append_metric(t, f"gep_detail_{p}", acc)
    else:
        ctx.rundir.append_metric(t, "lep_undefined", float("nan"))
    return record


def execute_run(cfg: RunConfig, plan: Optional[PhasePlan] = None,
                defer_eval: bool = False) -> RunDir:
    """Run (or resume) the full phase loop for the configured method."""
    cfg.validate()
    set_deterministic(cfg.deterministic)
    manifest = load_manifest(cfg.data.manifest, cfg.data.grouping)
    run_id = cfg.run_id or default_run_id(cfg)
    rundir = RunDir(Path(cfg.output_dir), run_id)
    rundir.create()

    plan_path = rundir.path / "plan.json"
    if plan is None:
        plan = load_plan(plan_path) if plan_path.exists() else build_plan(cfg)
    if not plan_path.exists():
        save_plan(plan, plan_path)
    report = validate_plan(plan, manifest)
    if not report.ok:
        raise DataError("invalid plan: " + "; ".join(report.violations))
    save_run_config(cfg, rundir.path / "config.yaml")

    rundir.acquire_lock()
    try:
        ledger = rundir.ledger()
        if ledger["config"] is None:
            ledger["config"] = cfg.to_dict()
            rundir.write_ledger(ledger)
        ctx = RunContext(cfg, plan, manifest, rundir)
        if cfg.method in ("joint-ssl", "joint-supervised"):
            _run_joint(ctx, ledger, defer_eval)
        else:
            _run_incremental(ctx, ledger, defer_eval)
    finally:
        rundir.release_lock()
    return rundir


def _phase_done(ledger: dict, t: int) -> bool:
    return ledger["phases"].get(str(t), {}).get("status") == "complete"


def _complete_phase(ctx: RunContext, ledger: dict, t: int, state: ModelState,
                    result, extras: dict, defer: bool, final: int) -> None:
    ckpt = ctx.rundir.checkpoints / f"phase_{t:02d}"
    extras = dict(extras)
    extras["loss_trace"] = result.loss_trace
    save_checkpoint(state, ckpt, extras)
    ctx.rundir.write_loss_trace(t, result.loss_trace)
    _evaluate_phase(ctx, state, t, defer, final)
    ledger["phases"][str(t)] = {
        "status": "complete",
        "checkpoint": str(ckpt),
        "wall_time": result.wall_time,
        "epochs": len(result.loss_trace),
    }
    ctx.rundir.write_ledger(ledger)


def _run_incremental(ctx: RunContext, ledger: dict, defer: bool) -> None:
    cfg = ctx.cfg
    n = ctx.plan.num_phases
    state: Optional[ModelState] = None
    head: Optional[ClassifierHead] = None
    memory = ExemplarMemory(cfg.train.memory_capacity)
    prior_ids: set[str] = set()
    # find resume point: longest prefix of completed phases
    start_t = 1
    while start_t <= n and _phase_done(ledger, start_t):
        start_t += 1
    if start_t > 1:
        ckpt = ctx.rundir.checkpoints / f"phase_{start_t - 1:02d}"
        state, extras = load_checkpoint(ckpt)
        head = _head_from_extras(extras, cfg.encoder.feature_dim)
        memory = _memory_from_extras(extras, cfg.train.memory_capacity)
        for t in range(1, start_t):
            prior_ids |= set(phase_train_ids(ctx.plan, ctx.manifest, t))

    for t in range(start_t, n + 1):
        ids = phase_train_ids(ctx.plan, ctx.manifest, t)
        if state is None:
            state = init_model(cfg.encoder, cfg.projector_spec(), cfg.run_seed)
            state.phase_index = 1
            head = ClassifierHead(cfg.encoder.feature_dim)
        else:
            state = inherit_state(state, cfg.projector.inherit, cfg.run_seed)

        extras: dict = {}
        if cfg.method == "sscil":
            result = train_sscil_phase(
                state, ids, ctx.image_fn, cfg.train, cfg.augment,
                phase=t, run_seed=cfg.run_seed, forbidden_ids=prior_ids,
            )
        elif cfg.method == "finetune":
            result = train_finetune_phase(
                state, head, ids, ctx.image_fn, ctx.label_fn, cfg.train,
                phase=t, run_seed=cfg.run_seed, forbidden_ids=prior_ids,
            )
            extras = {"head": result.head.tolist(), "class_order": result.class_order}
        elif cfg.method == "icarl":
            allowed_prior = prior_ids - set(memory.all_ids())
            result, memory = train_icarl_phase(
                state, head, ids, ctx.image_fn, ctx.label_fn, memory, cfg.train,
                phase=t, run_seed=cfg.run_seed, forbidden_ids=allowed_prior,
            )
            extras = {
                "head": result.head.tolist(),
                "class_order": result.class_order,
                "memory": {str(c): v for c, v in memory.per_class.items()},
            }
        else:
            raise UsageError(f"unknown incremental method {cfg.method!r}")
        _complete_phase(ctx, ledger, t, state, result, extras, defer, n)
        prior_ids |= set(ids)


def _run_joint(ctx: RunContext, ledger: dict, defer: bool) -> None:
    cfg = ctx.cfg
    if _phase_done(ledger, 1):
        return
    all_ids = sorted(ctx.manifest.train_ids())
    state = init_model(cfg.encoder, cfg.projector_spec(), cfg.run_seed)
    if cfg.method == "joint-ssl":
        result = train_joint(
            state, all_ids, ctx.image_fn, cfg.train, cfg.augment, cfg.run_seed,
            mode="self-supervised",
        )
        extras: dict = {}
    else:
        head = ClassifierHead(cfg.encoder.feature_dim)
        result = train_joint(
            state, all_ids, ctx.image_fn, cfg.train, cfg.augment, cfg.run_seed,
            mode="supervised", label_fn=ctx.label_fn, head=head,
        )
        extras = {"head": result.head.tolist(), "class_order": result.class_order}
    state.phase_index = 1
    # joint training sees every class, so its LEP and GEP coincide
    gep, probe = eval_gep(state, ctx.manifest, ctx.image_fn, cfg.probe)
    ctx.rundir.append_metric(1, "gep", gep)
    ctx.rundir.append_metric(1, "lep", gep)
    if ctx.plan.mode == CLASS_LEVEL:
        for p, acc in gep_detail(state, ctx.plan, ctx.manifest, ctx.image_fn,
                                 probe).items():
            ctx.rundir.append_metric(1, f"gep_detail_{p}", acc)
    ckpt = ctx.rundir.checkpoints / "phase_01"
    extras["loss_trace"] = result.loss_trace
    save_checkpoint(state, ckpt, extras)
    ctx.rundir.write_loss_trace(1, result.loss_trace)
    ledger["phases"]["1"] = {
        "status": "complete",
        "checkpoint": str(ckpt),
        "wall_time": result.wall_time,
        "epochs": len(result.loss_trace),
    }
    ctx.rundir.write_ledger(ledger)
