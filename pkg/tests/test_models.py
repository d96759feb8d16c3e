import numpy as np
import pytest
import torch

from cilbench.errors import (
    CheckpointIntegrityError,
    InputShapeError,
    RegistryError,
)
from cilbench.models import (
    EncoderSpec,
    ModelState,
    ProjectorSpec,
    forward_features,
    forward_projection,
    inherit_state,
    init_model,
    load_checkpoint,
    save_checkpoint,
)

ENC = EncoderSpec("conv-tiny", 64, input_size=16)


def arrays_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


def test_init_deterministic():
    a = init_model(ENC, ProjectorSpec(2, 32), seed=5)
    b = init_model(ENC, ProjectorSpec(2, 32), seed=5)
    assert arrays_equal(a.named_arrays(), b.named_arrays())
    c = init_model(ENC, ProjectorSpec(2, 32), seed=6)
    assert not arrays_equal(a.named_arrays(), c.named_arrays())


def test_projector_depth_zero_has_no_parameters():
    state = init_model(ENC, ProjectorSpec(0, 0), seed=0)
    assert list(state.projector.parameters()) == []
    assert state.projection_dim == 64


def test_projector_structure():
    state = init_model(ENC, ProjectorSpec(3, 96), seed=0)
    linears = [m for m in state.projector.modules() if isinstance(m, torch.nn.Linear)]
    assert len(linears) == 3
    assert all(l.out_features == 96 for l in linears)
    # last layer has no following nonlinearity
    layers = list(state.projector.children())
    assert isinstance(layers[-1], torch.nn.Linear)


def test_unknown_architecture():
    with pytest.raises(RegistryError):
        init_model(EncoderSpec("not-a-net", 64), ProjectorSpec(), seed=0)
    with pytest.raises(RegistryError):
        init_model(EncoderSpec("conv-tiny", 999), ProjectorSpec(), seed=0)


def test_forward_features_shape(rng):
    state = init_model(ENC, ProjectorSpec(1, 32), seed=0)
    batch = rng.uniform(size=(2, 16, 16, 3))
    h = forward_features(state, batch)
    assert h.shape == (2, 64)
    assert np.all(np.isfinite(h))


def test_forward_features_pure_in_eval(rng):
    state = init_model(ENC, ProjectorSpec(1, 32), seed=0)
    img = rng.uniform(size=(16, 16, 3))
    batch = np.stack([img, img])
    h = forward_features(state, batch)
    np.testing.assert_array_equal(h[0], h[1])


def test_forward_features_shape_mismatch(rng):
    state = init_model(ENC, ProjectorSpec(1, 32), seed=0)
    with pytest.raises(InputShapeError):
        forward_features(state, rng.uniform(size=(2, 8, 8, 3)))


def test_forward_projection_identity_when_depth_zero(rng):
    state = init_model(ENC, ProjectorSpec(0, 0), seed=0)
    h = rng.normal(size=(3, 64)).astype(np.float32)
    np.testing.assert_allclose(forward_projection(state, h), h, atol=1e-7)


def test_forward_projection_width(rng):
    state = init_model(ENC, ProjectorSpec(3, 48), seed=0)
    z = forward_projection(state, rng.normal(size=(4, 64)))
    assert z.shape == (4, 48)
    with pytest.raises(InputShapeError):
        forward_projection(state, rng.normal(size=(4, 32)))


def test_single_layer_projector_is_affine(rng):
    state = init_model(ENC, ProjectorSpec(1, 32), seed=0)
    h1 = rng.normal(size=(1, 64))
    h2 = rng.normal(size=(1, 64))
    za = forward_projection(state, h1)
    zb = forward_projection(state, h2)
    zsum = forward_projection(state, h1 + h2)
    zzero = forward_projection(state, np.zeros((1, 64)))
    np.testing.assert_allclose(zsum + zzero, za + zb, atol=1e-4)


def test_inherit_copies_everything():
    state = init_model(ENC, ProjectorSpec(2, 32), seed=1)
    nxt = inherit_state(state, inherit_projector=True, seed=1)
    assert nxt.phase_index == state.phase_index + 1
    assert arrays_equal(nxt.named_arrays(), state.named_arrays())


def test_inherit_reinitializes_projector():
    state = init_model(ENC, ProjectorSpec(2, 32), seed=1)
    nxt = inherit_state(state, inherit_projector=False, seed=1)
    a = state.named_arrays()
    b = nxt.named_arrays()
    enc_keys = [k for k in a if k.startswith("encoder/")]
    assert all(np.array_equal(a[k], b[k]) for k in enc_keys)
    proj_weights = [k for k in a if k.startswith("projector/") and "weight" in k]
    assert any(not np.array_equal(a[k], b[k]) for k in proj_weights)


def test_chained_inheritance_phase_index():
    state = init_model(ENC, ProjectorSpec(1, 16), seed=0)
    for _ in range(5):
        state = inherit_state(state, True, seed=0)
    assert state.phase_index == 5


def test_checkpoint_roundtrip_bitwise(tmp_path):
    state = init_model(ENC, ProjectorSpec(2, 32), seed=9)
    state.phase_index = 3
    save_checkpoint(state, tmp_path / "ckpt", extras={"note": [1, 2]})
    back, extras = load_checkpoint(tmp_path / "ckpt")
    assert back.phase_index == 3
    assert extras == {"note": [1, 2]}
    assert arrays_equal(back.named_arrays(), state.named_arrays())


def test_checkpoint_missing_files(tmp_path):
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(tmp_path / "nope")


def test_checkpoint_corrupt_descriptor(tmp_path):
    state = init_model(ENC, ProjectorSpec(1, 16), seed=0)
    save_checkpoint(state, tmp_path / "ckpt")
    (tmp_path / "ckpt" / "state.json").write_text("{broken", encoding="utf-8")
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(tmp_path / "ckpt")
