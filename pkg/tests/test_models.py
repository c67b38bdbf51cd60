import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatiospatial.config import ModelConfig
from spatiospatial.inference import model_from_checkpoint
from spatiospatial.layers.modules import count_parameters as count_trainable
from spatiospatial.models import checkpoint as ckpt
from spatiospatial.models.resnets import (
    PUBLISHED_PARAMETER_COUNTS,
    ArchitectureKind,
    build_model,
    closed_form_breakdown,
    closed_form_parameter_count,
    count_parameters,
    parse_architecture,
)
from spatiospatial.tensor import ops
from spatiospatial.tensor.core import GradTape, Tensor, backward
from spatiospatial.tensor.gradcheck import grad_check_parameters
from spatiospatial.utils.errors import ConfigError, FormatError, InvalidGeometryError, ShapeError, SurgeryError

EXPECTED_COUNTS = {
    ArchitectureKind.RESNET_3D: 33_148_995,
    ArchitectureKind.RESNET_2PLUS1D: 31_297_254,
    ArchitectureKind.RESNET_MIXED_CONV: 11_472_963,
}


@pytest.fixture(scope="module")
def mixedconv():
    return build_model("mixedconv", rng=0)


def test_parse_architecture_aliases():
    assert parse_architecture("R3D") == ArchitectureKind.RESNET_3D
    assert parse_architecture("resnet(2+1)d") == ArchitectureKind.RESNET_2PLUS1D
    assert parse_architecture(" mc3 ") == ArchitectureKind.RESNET_MIXED_CONV
    with pytest.raises(ConfigError, match="valid names"):
        parse_architecture("resnet50")


@pytest.mark.parametrize("kind", list(ArchitectureKind))
def test_built_parameter_counts(kind):
    model = build_model(kind, rng=0)
    assert count_parameters(model) == EXPECTED_COUNTS[kind]
    assert model.parameter_breakdown() == closed_form_breakdown(kind)


def test_closed_form_counts_match_published_where_exact():
    for kind in (ArchitectureKind.RESNET_2PLUS1D, ArchitectureKind.RESNET_MIXED_CONV):
        assert closed_form_parameter_count(kind) == PUBLISHED_PARAMETER_COUNTS[kind]
    gap = PUBLISHED_PARAMETER_COUNTS[ArchitectureKind.RESNET_3D] \
        - closed_form_parameter_count(ArchitectureKind.RESNET_3D)
    assert gap == 1_527


def test_resnet3d_breakdown():
    assert closed_form_breakdown("resnet3d") == {
        "stem": 9_536,
        "stage1": 442_880,
        "stage2": 1_557_760,
        "stage3": 6_228_480,
        "stage4": 24_908_800,
        "fc": 1_539,
    }


def test_counts_follow_head_and_input_channels():
    base = closed_form_parameter_count("mixedconv")
    assert closed_form_parameter_count("mixedconv", ModelConfig(num_classes=5)) == base + 2 * 513
    assert closed_form_parameter_count("mixedconv", ModelConfig(in_channels=2)) == base + 64 * 147


def test_forward_shapes(mixedconv):
    mixedconv.eval()
    x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 8, 16, 16)))
    assert mixedconv(x).shape == (2, 3)


@pytest.mark.parametrize("kind", ["resnet3d", "resnet2plus1d"])
def test_forward_shapes_other_architectures(kind):
    model = build_model(kind, ModelConfig(num_classes=4), rng=1).eval()
    x = Tensor(np.zeros((1, 1, 8, 16, 16)))
    out = model(x)
    assert out.shape == (1, 4)
    assert np.all(np.isfinite(out.data))


def test_input_too_small(mixedconv):
    with pytest.raises(InvalidGeometryError):
        mixedconv(Tensor(np.zeros((1, 1, 8, 8, 8))))


def test_input_channel_mismatch(mixedconv):
    with pytest.raises(ShapeError):
        mixedconv(Tensor(np.zeros((1, 2, 8, 16, 16))))
    with pytest.raises(ShapeError):
        mixedconv(Tensor(np.zeros((1, 8, 16, 16))))


def test_same_seed_same_weights():
    a = build_model("mixedconv", rng=3)
    b = build_model("mixedconv", rng=3)
    c = build_model("mixedconv", rng=4)
    sa, sb, sc = a.state(), b.state(), c.state()
    assert all(np.array_equal(sa[n].data, sb[n].data) for n in sa)
    assert not np.array_equal(sa["stem.conv.weight"].data, sc["stem.conv.weight"].data)


def test_parameter_names(mixedconv):
    names = [n for n, _ in mixedconv.named_parameters()]
    assert names[0] == "stem.conv.weight"
    assert "stage1.block1.conv1.weight" in names
    assert "stage2.block1.downsample.conv.weight" in names
    assert names[-2:] == ["fc.weight", "fc.bias"]


def test_checkpoint_round_trip(tmp_path, mixedconv):
    path = ckpt.save_checkpoint(mixedconv, tmp_path / "model.ckpt", {"class_names": ["a", "b", "c"]})
    assert path.read_bytes()[:8] == ckpt.MAGIC
    loaded = ckpt.load_checkpoint(path)
    assert loaded.architecture == "mixedconv"
    assert loaded.model_config == mixedconv.config
    assert loaded.metadata["class_names"] == ["a", "b", "c"]
    state = mixedconv.state()
    assert list(loaded.tensors) == list(state)
    assert all(np.array_equal(loaded.tensors[n], state[n].data) for n in state)


def test_checkpoint_rebuilds_model(tmp_path, mixedconv):
    ckpt.save_checkpoint(mixedconv, tmp_path / "m.ckpt")
    model = model_from_checkpoint(ckpt.load_checkpoint(tmp_path / "m.ckpt"))
    assert not model.training
    assert np.array_equal(model.fc.weight.data, mixedconv.fc.weight.data)
    with pytest.raises(SurgeryError):
        model_from_checkpoint(ckpt.load_checkpoint(tmp_path / "m.ckpt"), architecture="resnet3d")


def test_checkpoint_format_errors():
    blob = ckpt.encode_checkpoint(ckpt.Checkpoint({"w": np.ones((2, 3), dtype=np.float32)}))
    with pytest.raises(FormatError, match="not a checkpoint"):
        ckpt.decode_checkpoint(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError, match="truncated"):
        ckpt.decode_checkpoint(blob[:-4])
    with pytest.raises(FormatError):
        ckpt.decode_checkpoint(blob[:10])
    with pytest.raises(FormatError, match="reserved"):
        ckpt.encode_checkpoint(ckpt.Checkpoint({"__w": np.ones(1)}))


def test_checkpoint_without_metadata_cannot_rebuild():
    blob = ckpt.encode_checkpoint(ckpt.Checkpoint({"w": np.ones(1, dtype=np.float32)}))
    with pytest.raises(SurgeryError):
        model_from_checkpoint(ckpt.decode_checkpoint(blob))


def _constant_checkpoint(model, value=0.5):
    source = ckpt.checkpoint_from_model(model)
    return ckpt.Checkpoint({n: np.full_like(a, value) for n, a in source.tensors.items()}, source.metadata)


def test_transfer_load_skips_stem_and_fc(mixedconv):
    model = build_model("mixedconv", rng=7)
    fresh_stem = model.stem.conv.weight.data.copy()
    report = ckpt.transfer_load(model, _constant_checkpoint(mixedconv))
    state = model.state()
    assert len(report.loaded) + len(report.skipped) == len(state)
    assert not report.missing and not report.unexpected
    for name in report.loaded:
        assert np.all(state[name].data == np.float32(0.5))
    assert all(n.startswith(("stem.", "fc.")) for n in report.skipped)
    assert np.array_equal(model.stem.conv.weight.data, fresh_stem)
    assert not np.all(model.fc.weight.data == 0.5)


def test_transfer_load_to_new_head():
    source = build_model("mixedconv", ModelConfig(num_classes=3), rng=0)
    target = build_model("mixedconv", ModelConfig(num_classes=2), rng=1)
    report = ckpt.transfer_load(target, ckpt.checkpoint_from_model(source))
    assert "fc.weight" in report.skipped
    assert target.fc.weight.shape == (2, 512)


def test_transfer_load_freeze(mixedconv):
    model = build_model("mixedconv", rng=8)
    report = ckpt.transfer_load(model, _constant_checkpoint(mixedconv), freeze=True)
    breakdown = closed_form_breakdown("mixedconv")
    assert count_trainable(model) == breakdown["stem"] + breakdown["fc"]
    assert set(report.frozen) <= set(report.loaded)
    assert "stage1.block1.bn1.running_mean" not in report.frozen


def test_transfer_load_shape_mismatch_leaves_model_untouched():
    source = build_model("mixedconv", ModelConfig(num_classes=3), rng=0)
    target = build_model("mixedconv", ModelConfig(num_classes=2), rng=1)
    before = target.stage1.block1.conv1.weight.data.copy()
    with pytest.raises(SurgeryError, match="fc.weight"):
        ckpt.transfer_load(target, ckpt.checkpoint_from_model(source), skip_prefixes=())
    assert np.array_equal(target.stage1.block1.conv1.weight.data, before)


def test_transfer_load_missing_tensor(mixedconv):
    source = ckpt.checkpoint_from_model(mixedconv)
    del source.tensors["stage3.block2.bn2.beta"]
    model = build_model("mixedconv", rng=2)
    with pytest.raises(SurgeryError, match="stage3.block2.bn2.beta"):
        ckpt.transfer_load(model, source)
    report = ckpt.transfer_load(model, source, strict=False)
    assert report.missing == ["stage3.block2.bn2.beta"]


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(ArchitectureKind))
def test_end_to_end_parameter_gradients(kind):
    model = build_model(kind, ModelConfig(dropout_p=0.0), rng=0, dtype=np.float64)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 16, 32, 32)), dtype=np.float64)
    coeffs = Tensor(np.array([[0.3, -1.1, 0.7]]), dtype=np.float64)
    loss_fn = lambda: ops.sum(ops.mul(model(x), coeffs))
    report = grad_check_parameters(loss_fn, dict(model.named_parameters()), samples=20,
                                   rng=np.random.default_rng(2))
    assert report.max_rel_error <= 1e-4, report.worst


def test_checkpoint_size_is_header_plus_tensors(tmp_path, mixedconv):
    raw = ckpt.save_checkpoint(mixedconv, tmp_path / "sized.ckpt").read_bytes()
    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    payload = sum(4 * t.data.size for t in mixedconv.state().values())
    assert len(raw) == 16 + header_len + payload


@pytest.mark.parametrize("header", [
    b"[1, 2]",
    b'{"w": {"dtype": "f32", "shape": [1]}}',
    b'{"w": {"dtype": "f32", "shape": [1], "offset": "x", "length": 4}}',
    b'{"w": [1, 2, 3]}',
    b'{"w": {"dtype": 32, "shape": [1], "offset": 0, "length": 4}}',
    b'{"__metadata__": 5}',
])
def test_malformed_checkpoint_headers(header):
    blob = ckpt.MAGIC + np.array([len(header)], dtype="<u8").tobytes() + header + b"\0" * 4
    with pytest.raises(FormatError):
        ckpt.decode_checkpoint(blob)


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(ArchitectureKind))
def test_architecture_has_no_dead_parameters(kind):
    model = build_model(kind, ModelConfig(dropout_p=0.0), rng=0, dtype=np.float64)
    x = Tensor(np.random.default_rng(3).normal(size=(2, 1, 16, 32, 32)), dtype=np.float64)
    coeffs = Tensor(np.array([[0.3, -1.1, 0.7], [0.5, 0.2, -0.9]]), dtype=np.float64)
    with GradTape():
        loss = ops.sum(ops.mul(model(x), coeffs))
    backward(loss)
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name


_eval_models = {}


def _eval_model(kind):
    if kind not in _eval_models:
        _eval_models[kind] = build_model(kind, rng=0).eval()
    return _eval_models[kind]


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(ArchitectureKind))
@settings(max_examples=4)
@given(st.integers(8, 48), st.integers(16, 64), st.integers(16, 64))
def test_forward_shape_over_input_extents(kind, d, h, w):
    x = Tensor(np.random.default_rng(d * h * w).normal(size=(1, 1, d, h, w)).astype(np.float32))
    out = _eval_model(kind)(x)
    assert out.shape == (1, 3)
    assert np.all(np.isfinite(out.data))
