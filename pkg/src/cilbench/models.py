"""Encoder / projector models with cross-phase parameter inheritance.

The encoder registry maps architecture names to compact residual conv nets
(desk scale) and the torchvision ResNet-50 reference (full scale). A
ModelState bundles the two modules with their specs and the phase index; it
is the unit inherited from one phase to the next and the unit checkpointed
to disk (bitwise-stable round trip).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointIntegrityError, InputShapeError, RegistryError
from .seeding import derive_seed


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class CompactResNet(nn.Module):
    """Stem + three residual stages + global average pool."""

    def __init__(self, widths: tuple[int, int, int]):
        super().__init__()
        w1, w2, w3 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w1, 3, padding=1, bias=False),
            nn.BatchNorm2d(w1),
            nn.ReLU(inplace=True),
        )
        self.stage1 = BasicBlock(w1, w1)
        self.stage2 = BasicBlock(w1, w2, stride=2)
        self.stage3 = BasicBlock(w2, w3, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature_dim = w3

    def forward(self, x):
        x = self.stem(x)
        x = self.stage1(x)
        x = self.stage2(x)
        x = self.stage3(x)
        return self.pool(x).flatten(1)


def _resnet50():
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    net.fc = nn.Identity()
    net.feature_dim = 2048
    return net


ENCODER_REGISTRY = {
    "conv-micro": {"factory": lambda: CompactResNet((8, 16, 32)), "feature_dim": 32},
    "conv-tiny": {"factory": lambda: CompactResNet((16, 32, 64)), "feature_dim": 64},
    "conv-small": {"factory": lambda: CompactResNet((32, 64, 128)), "feature_dim": 128},
    "resnet-compact": {
        "factory": lambda: CompactResNet((128, 256, 512)),
        "feature_dim": 512,
    },
    "resnet50": {"factory": _resnet50, "feature_dim": 2048},
}


@dataclass(frozen=True)
class EncoderSpec:
    architecture: str = "conv-small"
    feature_dim: int = 128
    input_size: int = 32

    def validate(self) -> None:
        entry = ENCODER_REGISTRY.get(self.architecture)
        if entry is None:
            raise RegistryError(
                f"unknown encoder architecture {self.architecture!r}; "
                f"known: {sorted(ENCODER_REGISTRY)}"
            )
        if self.feature_dim != entry["feature_dim"]:
            raise RegistryError(
                f"{self.architecture} outputs {entry['feature_dim']} features, "
                f"spec says {self.feature_dim}"
            )


@dataclass(frozen=True)
class ProjectorSpec:
    depth: int = 3
    width: int = 2048

    def validate(self) -> None:
        if self.depth < 0:
            raise RegistryError(f"projector depth must be >= 0, got {self.depth}")
        if self.depth > 0 and self.width < 1:
            raise RegistryError(f"projector width must be >= 1, got {self.width}")


def build_projector(spec: ProjectorSpec, in_dim: int) -> nn.Module:
    """MLP of `depth` linear layers of `width`; BN+ReLU on all but the last.

    depth 0 is the identity (no parameters).
    """
    if spec.depth == 0:
        return nn.Identity()
    layers: list[nn.Module] = []
    prev = in_dim
    for i in range(spec.depth):
        layers.append(nn.Linear(prev, spec.width))
        if i < spec.depth - 1:
            layers.append(nn.BatchNorm1d(spec.width))
            layers.append(nn.ReLU(inplace=True))
        prev = spec.width
    return nn.Sequential(*layers)


@dataclass
class ModelState:
    phase_index: int
    encoder: nn.Module
    projector: nn.Module
    encoder_spec: EncoderSpec
    projector_spec: ProjectorSpec

    @property
    def projection_dim(self) -> int:
        if self.projector_spec.depth == 0:
            return self.encoder_spec.feature_dim
        return self.projector_spec.width

    def eval(self) -> "ModelState":
        self.encoder.eval()
        self.projector.eval()
        return self

    def train(self) -> "ModelState":
        self.encoder.train()
        self.projector.train()
        return self

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.projector.parameters()

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for prefix, module in (("encoder", self.encoder), ("projector", self.projector)):
            for name, tensor in module.state_dict().items():
                arrays[f"{prefix}/{name}"] = tensor.detach().cpu().numpy()
        return arrays


def init_model(
    enc: EncoderSpec, proj: ProjectorSpec, seed: int
) -> ModelState:
    """Fresh phase-0 model with seed-deterministic parameters."""
    enc.validate()
    proj.validate()
    torch.manual_seed(derive_seed(seed, "encoder"))
    encoder = ENCODER_REGISTRY[enc.architecture]["factory"]()
    torch.manual_seed(derive_seed(seed, "projector"))
    projector = build_projector(proj, enc.feature_dim)
    return ModelState(0, encoder, projector, enc, proj)


def inherit_state(
    prev: ModelState, inherit_projector: bool, seed: int
) -> ModelState:
    """Next-phase model: encoder copied bitwise, projector copied or re-seeded."""
    encoder = copy.deepcopy(prev.encoder)
    if inherit_projector:
        projector = copy.deepcopy(prev.projector)
    else:
        torch.manual_seed(derive_seed(seed, "projector", prev.phase_index + 1))
        projector = build_projector(prev.projector_spec, prev.encoder_spec.feature_dim)
    return ModelState(
        prev.phase_index + 1, encoder, projector, prev.encoder_spec, prev.projector_spec
    )


def batch_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(B, H, W, 3) float array in [0,1] -> (B, 3, H, W) float32 tensor."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[3] != 3:
        raise InputShapeError(f"expected (B, H, W, 3) batch, got {images.shape}")
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


def forward_features(state: ModelState, images: np.ndarray) -> np.ndarray:
    """Eval-mode encoder features, (B, feature_dim)."""
    if images.shape[1] != state.encoder_spec.input_size or \
            images.shape[2] != state.encoder_spec.input_size:
        raise InputShapeError(
            f"expected {state.encoder_spec.input_size}px inputs, "
            f"got {images.shape[1]}x{images.shape[2]}"
        )
    state.eval()
    with torch.no_grad():
        h = state.encoder(batch_to_tensor(images))
    return h.numpy().astype(np.float64)


def forward_projection(state: ModelState, h: np.ndarray) -> np.ndarray:
    """Eval-mode projector output, (B, projection_dim)."""
    h = np.asarray(h, dtype=np.float32)
    if h.ndim != 2 or h.shape[1] != state.encoder_spec.feature_dim:
        raise InputShapeError(
            f"expected (B, {state.encoder_spec.feature_dim}) features, "
            f"got {h.shape}"
        )
    state.eval()
    with torch.no_grad():
        z = state.projector(torch.from_numpy(h))
    return z.numpy().astype(np.float64)


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(state: ModelState, directory, extras: dict | None = None) -> None:
    """Write a checkpoint directory: descriptor JSON + named parameter arrays.

    The write is atomic per file (write-then-rename) so a crash never leaves a
    half-written descriptor next to stale arrays.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "phase_index": state.phase_index,
        "encoder_spec": asdict(state.encoder_spec),
        "projector_spec": asdict(state.projector_spec),
        "extras": extras or {},
    }
    arrays = state.named_arrays()
    tmp = directory / "params.npz.tmp"
    with tmp.open("wb") as fh:
        np.savez(fh, **{k.replace("/", "__"): v for k, v in arrays.items()})
    tmp.rename(directory / "params.npz")
    tmp_meta = directory / "state.json.tmp"
    tmp_meta.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    tmp_meta.rename(directory / "state.json")


def load_checkpoint(directory) -> tuple[ModelState, dict]:
    directory = Path(directory)
    meta_path = directory / "state.json"
    params_path = directory / "params.npz"
    if not meta_path.exists() or not params_path.exists():
        raise CheckpointIntegrityError(f"{directory}: incomplete checkpoint")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointIntegrityError(f"{directory}: corrupt descriptor: {e}") from None
    enc_spec = EncoderSpec(**meta["encoder_spec"])
    proj_spec = ProjectorSpec(**meta["projector_spec"])
    state = init_model(enc_spec, proj_spec, seed=0)
    state.phase_index = meta["phase_index"]
    with np.load(params_path) as data:
        loaded = {k.replace("__", "/"): data[k] for k in data.files}
    for prefix, module in (("encoder", state.encoder), ("projector", state.projector)):
        sd = module.state_dict()
        for name in sd:
            key = f"{prefix}/{name}"
            if key not in loaded:
                raise CheckpointIntegrityError(f"{directory}: missing array {key}")
            sd[name] = torch.from_numpy(loaded[key].copy())
        module.load_state_dict(sd)
    return state, meta.get("extras", {})
