"""
Epoch loop, evaluation and cross-validation orchestration.

One training run is a single stream: optimiser state and batch-norm
statistics are mutable, so folds never share a model or an AdamState.
"""
import logging
from dataclasses import dataclass, field

from spatiospatial.data.dataset import VolumeDataset
from spatiospatial.data.splits import make_splits
from spatiospatial.metrics.confusion import ConfusionMatrix, per_class_metrics, summarize_reports
from spatiospatial.models.checkpoint import transfer_load
from spatiospatial.models.resnets import build_model
from spatiospatial.tensor import ops
from spatiospatial.tensor.core import GradTape, Tensor, backward
from spatiospatial.training.loss import ClassWeights, class_weights, weighted_cross_entropy
from spatiospatial.training.optim import AdamState, adam_step
from spatiospatial.utils.errors import (
    ContractError,
    DegenerateStatisticsError,
    InvalidGeometryError,
    SpatiospatialError,
    SplitError,
)
from spatiospatial.utils.logs import JsonLinesWriter
from spatiospatial.utils.seeding import SHUFFLE_STREAM, derive_rng

logger = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    accuracy: float
    samples: int

    def to_dict(self):
        return {"epoch": self.epoch, "mean_loss": self.mean_loss, "accuracy": self.accuracy,
                "samples": self.samples}


@dataclass
class FoldResult:
    fold: int
    report: object
    split: object = None
    history: list = field(default_factory=list)
    surgery: object = None

    @property
    def accuracy(self):
        return self.report.accuracy

    @property
    def confusion(self):
        return self.report.confusion

    def to_dict(self):
        return {
            "fold": self.fold,
            "accuracy": self.accuracy,
            "metrics": self.report.to_dict(),
            "split": self.split.to_dict() if self.split is not None else None,
            "history": [h.to_dict() for h in self.history],
            "surgery": self.surgery.to_dict() if self.surgery is not None else None,
        }


@dataclass
class CrossValResult:
    folds: list
    summary: dict


def shuffled_order(size, seed, epoch):
    """Sample order for ``epoch``: new each epoch, identical across runs."""
    return derive_rng(seed, SHUFFLE_STREAM, epoch).permutation(size)


def loss_weights(dataset, config):
    if config.class_weighting:
        return class_weights(dataset.counts())
    return ClassWeights.uniform(dataset.num_classes)


def train_epoch(model, dataset, weights, state, config, epoch=0, augment_config=None):
    """
    One pass over ``dataset`` in a seeded shuffled order: forward, loss,
    backward and an Adam step per batch.
    Args:
        model (Module): Network, switched to training mode.
        dataset (VolumeDataset): Non-empty training samples.
        weights (ClassWeights): Loss weights.
        state (AdamState): Optimiser state, updated in place.
        config (TrainConfig): Step size, decay, batch size, seed.
        epoch (int): Epoch index, keys the shuffle and augmentation draws.
        augment_config (AugmentConfig): Training augmentation, or None.
    Returns:
        EpochStats
    Raises:
        InvalidGeometryError, DegenerateStatisticsError: naming the sample
            whose forward pass failed.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    model.train()
    params = list(model.named_parameters())
    total_loss, correct, seen = 0.0, 0, 0
    order = shuffled_order(len(dataset), config.seed, epoch)
    for x, targets, ids in dataset.batches(order, config.batch_size, epoch, augment_config, config.seed):
        model.zero_grad()
        try:
            with GradTape():
                logits = model(Tensor(x, dtype=params[0][1].dtype if params else None))
                loss = weighted_cross_entropy(logits, targets, weights)
        except (InvalidGeometryError, DegenerateStatisticsError) as exc:
            raise type(exc)(f"sample {', '.join(ids)}: {exc}") from exc
        if loss._tape is not None:
            backward(loss)
        adam_step(params, state, config)
        total_loss += loss.item() * len(ids)
        correct += int((logits.data.argmax(axis=1) == targets).sum())
        seen += len(ids)
    return EpochStats(epoch=epoch, mean_loss=total_loss / seen, accuracy=correct / seen, samples=seen)


def predict_logits(model, x):
    """Eval-mode logits for an (N, C, D, H, W) array; nothing is recorded."""
    model.eval()
    params = model.parameters()
    return model(Tensor(x, dtype=params[0].dtype if params else None)).data


def predict_probabilities(model, x):
    return ops.softmax(Tensor(predict_logits(model, x)))


def evaluate(model, dataset, batch_size=1):
    """
    Score every sample of ``dataset`` in eval mode.
    Returns:
        MetricsReport: With the confusion matrix attached.
    """
    cm = ConfusionMatrix(dataset.num_classes)
    for x, targets, _ in dataset.batches(range(len(dataset)), batch_size):
        predicted = predict_logits(model, x).argmax(axis=1)
        for t, p in zip(targets, predicted):
            cm.update(t, p)
    return per_class_metrics(cm, dataset.class_names)


def fit(model, train_set, train_config, augment_config=None, writer=None, fold=None):
    """
    Train for ``train_config.epochs`` epochs with a fresh AdamState.
    Returns:
        list[EpochStats]
    """
    writer = writer if writer is not None else JsonLinesWriter()
    weights = loss_weights(train_set, train_config)
    state = AdamState.from_config(train_config)
    history = []
    augment_config = augment_config if train_config.augment else None
    for epoch in range(train_config.epochs):
        stats = train_epoch(model, train_set, weights, state, train_config, epoch, augment_config)
        history.append(stats)
        writer.write("epoch", fold=fold, **stats.to_dict())
        logger.info("fold %s epoch %d: loss %.4f acc %.3f", fold, epoch, stats.mean_loss, stats.accuracy)
    return history


def cross_validate(manifest, kind, config, dataset=None, model_factory=None, pretrained=None,
                   writer=None, splits=None):
    """
    Train and evaluate one fresh model per seeded stratified split.
    Args:
        manifest (DatasetManifest): Labelled subjects.
        kind (ArchitectureKind or str): Architecture for the default factory.
        config (RunConfig): Model, training, augmentation and split settings.
        dataset (VolumeDataset): Samples covering ``manifest``; read from the
            manifest's files when omitted.
        model_factory (callable): fold -> Module, replacing ``build_model``.
        pretrained (Checkpoint): Transfer-loaded into each fold's model.
        writer (JsonLinesWriter): Receives epoch, surgery, fold and summary records.
        splits (list[SplitSpec]): Precomputed splits; made from the config otherwise.
    Returns:
        CrossValResult
    Raises:
        SplitError: a class absent from a fold's training split.
    """
    writer = writer if writer is not None else JsonLinesWriter()
    seed = config.train.seed
    dataset = dataset if dataset is not None else VolumeDataset.from_manifest(manifest)
    splits = splits if splits is not None else make_splits(manifest, config.k, config.train_ratio, seed)
    folds = []
    for split in splits:
        try:
            result = _run_fold(split, dataset, kind, config, model_factory, pretrained, writer)
        except SpatiospatialError as exc:
            raise type(exc)(f"fold {split.fold}: {exc}") from exc
        folds.append(result)
    summary = summarize_reports([f.report for f in folds])
    summary["architecture"] = getattr(kind, "value", str(kind))
    summary["seed"] = seed
    writer.write("summary", **summary)
    return CrossValResult(folds=folds, summary=summary)


def _run_fold(split, dataset, kind, config, model_factory, pretrained, writer):
    seed = config.train.seed
    train_set = dataset.subset(split.train)
    test_set = dataset.subset(split.test)
    absent = [name for name, n in zip(train_set.class_names, train_set.counts()) if n == 0]
    if absent:
        raise SplitError(f"classes {absent} have no training samples")
    if model_factory is not None:
        model = model_factory(split.fold)
    else:
        model = build_model(kind, config.model, rng=seed + split.fold)
    surgery = None
    if pretrained is not None:
        surgery = transfer_load(model, pretrained, config.skip_prefixes, freeze=config.freeze_loaded)
        writer.write("surgery", fold=split.fold, **surgery.to_dict())
    fold_train = config.train.model_copy(update={"seed": seed + split.fold})
    history = fit(model, train_set, fold_train, config.augment, writer, split.fold)
    report = evaluate(model, test_set, config.train.batch_size)
    if report.confusion.total != len(test_set):
        raise ContractError(f"scored {report.confusion.total} of {len(test_set)} test samples")
    result = FoldResult(split.fold, report, split, history, surgery)
    writer.write("fold", **result.to_dict())
    logger.info("fold %d: accuracy %.4f macro F1 %.4f", split.fold, report.accuracy, report.macro_f1)
    return result
