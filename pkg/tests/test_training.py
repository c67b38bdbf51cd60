import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatiospatial.config import AugmentConfig, RunConfig, TrainConfig
from spatiospatial.data.dataset import VolumeDataset
from spatiospatial.data.splits import DatasetManifest, SplitSpec, make_splits
from spatiospatial.data.synthetic import generate_synthetic
from spatiospatial.data.volume import Volume
from spatiospatial.layers.modules import AdaptiveAvgPoolUnit, Linear, Module, Parameter
from spatiospatial.models.resnets import ArchitectureKind, build_model
from spatiospatial.tensor import ops
from spatiospatial.tensor.core import Tensor
from spatiospatial.tensor.gradcheck import grad_check
from spatiospatial.training.loop import cross_validate, evaluate, fit, loss_weights, shuffled_order, train_epoch
from spatiospatial.training.loss import ClassWeights, class_weights, weighted_cross_entropy
from spatiospatial.training.optim import AdamState, adam_step
from spatiospatial.utils.errors import (
    ContractError,
    DegenerateStatisticsError,
    InvalidGeometryError,
    ParameterError,
    SplitError,
)
from spatiospatial.utils.logs import JsonLinesWriter, dumps


class OracleModel(Module):
    """Reads the class straight off the constant voxel value."""

    def __init__(self, num_classes=3):
        super().__init__()
        self.num_classes = num_classes

    def forward(self, x):
        labels = np.rint(x.data.reshape(x.shape[0], -1).mean(axis=1)).astype(int)
        return Tensor(10.0 * np.eye(self.num_classes)[labels])


class ConstantModel(Module):
    def forward(self, x):
        logits = np.zeros((x.shape[0], 3))
        logits[:, 0] = 1.0
        return Tensor(logits)


class PooledLinear(Module):
    def __init__(self, num_classes=3, seed=0):
        super().__init__()
        self.pool = AdaptiveAvgPoolUnit()
        self.fc = Linear(1, num_classes, rng=np.random.default_rng(seed), dtype=np.float64)

    def forward(self, x):
        return self.fc(ops.flatten(self.pool(x)))


def _constant_data(per_class=6, classes=3, extent=4):
    volumes, targets, ids, entries = [], [], [], []
    for c in range(classes):
        for i in range(per_class):
            sid = f"s{c}_{i}"
            volumes.append(Volume(np.full((extent,) * 3, float(c))))
            targets.append(c)
            ids.append(sid)
            entries.append((f"v_{sid}.nii", str(c), sid))
    names = [str(c) for c in range(classes)]
    manifest = DatasetManifest(entries, class_names=names)
    return manifest, VolumeDataset.from_volumes(volumes, targets, ids, names)


def test_class_weights_example():
    w = class_weights([259, 73, 259])
    assert np.allclose(w.weights, [332 / 591, 518 / 591, 332 / 591])
    assert np.allclose(w.weights, [0.5618, 0.8765, 0.5618], atol=1e-4)
    assert w.total == 591


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=8).filter(lambda c: sum(c) > 0),
       st.integers(1, 50))
def test_class_weights_sum_and_scale_invariance(counts, factor):
    w = class_weights(counts)
    assert np.isclose(sum(w.weights), len(counts) - 1)
    assert all(0.0 <= x <= 1.0 for x in w.weights)
    assert np.allclose(w.weights, class_weights([c * factor for c in counts]).weights)


def test_class_weights_invalid():
    for counts in ([], [0, 0], [3, -1]):
        with pytest.raises(ParameterError):
            class_weights(counts)


def test_uniform_logits_give_weighted_log_c():
    w = class_weights([2, 1, 1])
    targets = [0, 1, 2, 1]
    loss = weighted_cross_entropy(Tensor(np.zeros((4, 3))), targets, w)
    expected = np.log(3.0) * np.mean([w.weights[t] for t in targets])
    assert np.isclose(loss.item(), expected)


def test_weighted_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, c = rng.integers(1, 6), rng.integers(2, 5)
        logits = rng.normal(scale=3.0, size=(n, c))
        targets = rng.integers(0, c, size=n)
        w = class_weights(rng.integers(1, 50, size=c))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected = np.mean([-w.weights[t] * np.log(probs[i, t]) for i, t in enumerate(targets)])
        assert np.isclose(weighted_cross_entropy(Tensor(logits), targets, w).item(), expected)


def test_weighted_cross_entropy_gradient():
    logits = Tensor(np.random.default_rng(1).normal(size=(5, 3)), dtype=np.float64)
    w = class_weights([5, 2, 9])
    report = grad_check(lambda t: weighted_cross_entropy(t, [0, 2, 1, 1, 0], w), logits)
    assert report.max_rel_error <= 1e-5


def test_unit_weights_are_plain_cross_entropy():
    logits = Tensor(np.array([[2.0, 0.0, -1.0]]))
    loss = weighted_cross_entropy(logits, [0], ClassWeights.uniform(3))
    assert np.isclose(loss.item(), -np.log(np.exp(2.0) / (np.exp(2.0) + 1.0 + np.exp(-1.0))))


def test_weighted_cross_entropy_contract():
    w = class_weights([1, 1, 1])
    with pytest.raises(ContractError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3], w)
    with pytest.raises(ContractError):
        weighted_cross_entropy(Tensor(np.zeros((2, 2))), [0, 1], w)
    with pytest.raises(ContractError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0], w)


def _param(values):
    return Parameter(np.array(values, dtype=np.float64))


def test_adam_zero_gradient_is_fixed_point():
    p = _param([1.0, -2.0, 3.0])
    p.grad = np.zeros(3)
    state = AdamState()
    for _ in range(5):
        adam_step({"p": p}, state, TrainConfig(weight_decay=0.0))
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])
    assert state.t == 5


def test_adam_first_step_moves_by_learning_rate():
    p = _param([1.0, -2.0, 3.0])
    p.grad = np.array([0.5, -4.0, 1e-3])
    adam_step({"p": p}, AdamState(), TrainConfig(learning_rate=1e-3, weight_decay=0.0))
    assert np.allclose(p.data, np.array([1.0, -2.0, 3.0]) - 1e-3 * np.sign([0.5, -4.0, 1e-3]), atol=1e-7)


def test_adam_weight_decay_shrinks_parameters():
    p = _param([2.0, -4.0])
    p.grad = np.zeros(2)
    adam_step({"p": p}, AdamState(), TrainConfig(learning_rate=0.01, weight_decay=0.1))
    assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.01 * 0.1))


def test_adam_is_deterministic():
    results = []
    for _ in range(2):
        p = _param([0.3, 0.1])
        state = AdamState()
        for step in range(10):
            p.grad = np.array([np.sin(step), np.cos(step)]) + p.data
            adam_step([("p", p)], state, TrainConfig(learning_rate=0.05))
        results.append(p.data.copy())
    assert np.array_equal(*results)


def test_adam_skips_frozen_and_gradless_parameters():
    frozen, idle, live = _param([1.0]), _param([2.0]), _param([3.0])
    frozen.grad = np.ones(1)
    frozen.requires_grad = False
    live.grad = np.ones(1)
    state = adam_step({"frozen": frozen, "idle": idle, "live": live}, AdamState(), TrainConfig())
    assert frozen.data[0] == 1.0 and idle.data[0] == 2.0 and live.data[0] < 3.0
    assert list(state.m) == ["live"]


def test_adam_rejects_mismatched_gradient():
    p = _param([1.0, 2.0])
    p.grad = np.ones(3)
    with pytest.raises(ContractError):
        adam_step({"p": p}, AdamState(), TrainConfig())


def test_shuffled_order():
    a = shuffled_order(10, seed=0, epoch=0)
    assert sorted(a) == list(range(10))
    assert np.array_equal(a, shuffled_order(10, seed=0, epoch=0))
    assert not np.array_equal(a, shuffled_order(10, seed=0, epoch=1))


def test_fit_reduces_loss():
    _, dataset = _constant_data(per_class=3)
    model = PooledLinear()
    config = TrainConfig(learning_rate=0.05, epochs=40, batch_size=3, augment=False)
    history = fit(model, dataset, config)
    assert len(history) == 40
    assert history[-1].mean_loss < history[0].mean_loss
    assert all(h.samples == 9 for h in history)


def test_training_is_reproducible():
    _, dataset = _constant_data(per_class=2)
    weights = []
    for _ in range(2):
        model = PooledLinear(seed=5)
        fit(model, dataset, TrainConfig(learning_rate=0.01, epochs=3, seed=9), AugmentConfig())
        weights.append(model.fc.weight.data.copy())
    assert np.array_equal(*weights)


def test_train_epoch_names_sample_on_geometry_failure():
    volumes = [Volume(np.zeros((8, 8, 8))), Volume(np.ones((8, 8, 8)))]
    dataset = VolumeDataset.from_volumes(volumes, [0, 1], ["tiny_a", "tiny_b"], ["a", "b", "c"])
    model = build_model("mixedconv", rng=0)
    config = TrainConfig()
    with pytest.raises(InvalidGeometryError, match="sample tiny_"):
        train_epoch(model, dataset, class_weights([1, 1, 1]), AdamState.from_config(config), config)


def test_train_epoch_names_sample_on_single_element_batch_norm():
    # resnet3d reduces 8x16x16 to 1x1x1 in stage4, one element per channel at batch 1
    dataset = VolumeDataset.from_volumes([Volume(np.zeros((8, 16, 16)))], [0], ["flat_a"], ["a", "b", "c"])
    model = build_model("resnet3d", rng=0)
    config = TrainConfig(batch_size=1, augment=False)
    with pytest.raises(DegenerateStatisticsError, match="sample flat_a"):
        train_epoch(model, dataset, class_weights([1, 1, 1]), AdamState.from_config(config), config)


def _learns_synthetic_classes(kind, seed, max_epochs=200, check_every=10):
    manifest, volumes = generate_synthetic(classes=3, per_class=10, extent=32, seed=seed)
    dataset = VolumeDataset.from_volumes(volumes, manifest.targets(), [e.subject_id for e in manifest.entries],
                                         manifest.class_names)
    split = make_splits(manifest, k=1, train_ratio=0.7, seed=seed)[0]
    train_set, test_set = dataset.subset(split.train), dataset.subset(split.test)
    config = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=max_epochs, augment=False, seed=seed)
    model = build_model(kind, rng=seed)
    weights = loss_weights(train_set, config)
    state = AdamState.from_config(config)
    for epoch in range(max_epochs):
        train_epoch(model, train_set, weights, state, config, epoch)
        if (epoch + 1) % check_every == 0 and evaluate(model, train_set).accuracy >= 0.95:
            break
    return evaluate(model, train_set).accuracy >= 0.95 and evaluate(model, test_set).accuracy >= 0.8


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(ArchitectureKind))
def test_architecture_learns_synthetic_classes(kind):
    passed = [_learns_synthetic_classes(kind, seed) for seed in (0, 1, 2)]
    assert sum(passed) >= 2, passed


def test_cross_validate_perfect_classifier():
    manifest, dataset = _constant_data()
    config = RunConfig(train=TrainConfig(epochs=0), k=3)
    writer = JsonLinesWriter()
    result = cross_validate(manifest, "mixedconv", config, dataset=dataset,
                            model_factory=lambda fold: OracleModel(), writer=writer)
    assert len(result.folds) == 3
    assert result.summary["mean_macro_f1"] == 1.0
    assert result.summary["std_macro_f1"] == 0.0
    assert result.summary["mean_accuracy"] == 1.0
    for fold in result.folds:
        assert fold.confusion.total == 6
        assert np.array_equal(fold.confusion.counts, 2 * np.eye(3))
    assert [r["event"] for r in writer.records].count("fold") == 3
    assert writer.records[-1]["event"] == "summary"


def test_cross_validate_constant_classifier():
    manifest, dataset = _constant_data()
    config = RunConfig(train=TrainConfig(epochs=0), k=2)
    result = cross_validate(manifest, "mixedconv", config, dataset=dataset,
                            model_factory=lambda fold: ConstantModel())
    summary = result.summary["per_class"]
    assert summary["0"]["mean_recall"] == 1.0
    assert summary["1"]["mean_recall"] == 0.0
    assert summary["2"]["mean_recall"] == 0.0
    assert "precision[1]" in result.folds[0].report.zero_division


def test_cross_validate_is_reproducible():
    manifest, dataset = _constant_data(per_class=4)
    config = RunConfig(train=TrainConfig(epochs=2, learning_rate=0.01, batch_size=2), k=2)
    runs = [cross_validate(manifest, "mixedconv", config, dataset=dataset,
                           model_factory=lambda fold: PooledLinear(seed=fold)).summary
            for _ in range(2)]
    assert dumps(runs[0]) == dumps(runs[1])


def test_cross_validate_rejects_missing_training_class():
    manifest, dataset = _constant_data(per_class=2)
    split = SplitSpec(fold=0, train=("s0_0", "s1_0"), test=("s0_1", "s1_1", "s2_0", "s2_1"), seed=0)
    config = RunConfig(train=TrainConfig(epochs=0), k=1)
    with pytest.raises(SplitError, match="fold 0"):
        cross_validate(manifest, "mixedconv", config, dataset=dataset,
                       model_factory=lambda fold: OracleModel(), splits=[split])
