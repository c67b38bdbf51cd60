"""
Command-line harness.

    python -m spatiospatial [--seed N] [--config run.json] [--out DIR] [-v] <command> ...

Commands: synth, preprocess, split, train, crossval, eval, predict, params,
compare, serve. Exit codes: 0 success, 1 usage/config, 2 data/format,
3 runtime numeric.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from spatiospatial.config import load_run_config
from spatiospatial.data.dataset import VolumeDataset
from spatiospatial.data.nifti import read_nifti, write_nifti
from spatiospatial.data.preprocess import preprocess_volume
from spatiospatial.data.splits import DatasetManifest, ManifestEntry, make_splits, read_split, write_splits
from spatiospatial.data.synthetic import generate_synthetic
from spatiospatial.inference import model_from_checkpoint, predict_volume
from spatiospatial.models.checkpoint import load_checkpoint, save_checkpoint, transfer_load
from spatiospatial.models.resnets import (
    PUBLISHED_PARAMETER_COUNTS,
    build_model,
    count_parameters,
    parse_architecture,
)
from spatiospatial.training.loop import cross_validate, evaluate, fit
from spatiospatial.utils.errors import EXIT_OK, ConfigError, DataError, FormatError, SpatiospatialError
from spatiospatial.utils.logs import JsonLinesWriter, configure_logging, dumps, write_json

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors raise ConfigError (exit 1) instead of exiting with 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _csv_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _run_config(args, need_manifest):
    overrides = {
        "architecture": getattr(args, "arch", None),
        "manifest": getattr(args, "manifest", None),
        "out_dir": args.out,
        "k": getattr(args, "k", None),
        "train_ratio": getattr(args, "ratio", None),
        "checkpoint": getattr(args, "from_checkpoint", None),
        "skip_prefixes": _csv_list(args.skip) if getattr(args, "skip", None) is not None else None,
        "freeze_loaded": True if getattr(args, "freeze", False) else None,
        "fold": getattr(args, "fold", None),
        "model": {"num_classes": getattr(args, "classes", None),
                  "in_channels": getattr(args, "in_channels", None)},
        "train": {"seed": args.seed, "epochs": getattr(args, "epochs", None),
                  "learning_rate": getattr(args, "lr", None),
                  "batch_size": getattr(args, "batch_size", None),
                  "augment": False if getattr(args, "no_augment", False) else None},
    }
    config = load_run_config(args.config, overrides)
    return config.validate_paths(need_manifest=need_manifest)


def _manifest_config(args, need_manifest=True):
    """Run config plus manifest, with num_classes taken from the manifest unless given."""
    config = _run_config(args, need_manifest)
    manifest = DatasetManifest.from_csv(config.manifest)
    if getattr(args, "classes", None) is None and config.model.num_classes != manifest.num_classes:
        config = config.model_copy(update={"model": config.model.model_copy(
            update={"num_classes": manifest.num_classes})})
    return config, manifest


def _pretrained(config):
    return load_checkpoint(config.checkpoint) if config.checkpoint is not None else None


def _seed(args):
    return args.seed if args.seed is not None else 0


def _out(args, default):
    return Path(args.out if args.out is not None else default)


def cmd_synth(args):
    out = _out(args, "data/synthetic")
    manifest, _ = generate_synthetic(args.classes, args.per_class, args.extent, _seed(args), out)
    print(f"wrote {len(manifest)} volumes and {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_preprocess(args):
    source = DatasetManifest.from_csv(args.manifest)
    out = _out(args, "data/preprocessed")
    entries = []
    for entry in source.entries:
        volume = preprocess_volume(read_nifti(source.resolve(entry)), args.lo, args.hi, args.target_spacing)
        rel = Path("volumes") / Path(entry.path).name
        write_nifti(volume, out / rel)
        entries.append(ManifestEntry(rel, entry.label, entry.subject_id))
    DatasetManifest(entries, class_names=source.class_names, root=out).to_csv(out / "manifest.csv")
    print(f"preprocessed {len(entries)} volumes into {out}")
    return EXIT_OK


def cmd_split(args):
    manifest = DatasetManifest.from_csv(args.manifest)
    splits = make_splits(manifest, args.k, args.ratio, _seed(args))
    for path in write_splits(splits, _out(args, "splits")):
        print(path)
    return EXIT_OK


def _split_for(args, config, manifest):
    if getattr(args, "split", None):
        return read_split(args.split).check(manifest)
    return make_splits(manifest, config.k, config.train_ratio, config.train.seed)[config.fold]


def cmd_train(args):
    config, manifest = _manifest_config(args)
    out = Path(config.out_dir)
    writer = JsonLinesWriter(out / "run.jsonl")
    split = _split_for(args, config, manifest)
    dataset = VolumeDataset.from_manifest(manifest)
    train_set, test_set = dataset.subset(split.train), dataset.subset(split.test)
    model = build_model(config.architecture, config.model, rng=config.train.seed)
    pretrained = _pretrained(config)
    if pretrained is not None:
        surgery = transfer_load(model, pretrained, config.skip_prefixes, freeze=config.freeze_loaded)
        writer.write("surgery", **surgery.to_dict())
    fit(model, train_set, config.train, config.augment, writer, split.fold)
    report = evaluate(model, test_set, config.train.batch_size)
    report.save(out)
    save_checkpoint(model, out / "model.ckpt", extra_metadata={"class_names": manifest.class_names,
                                                                "seed": config.train.seed})
    writer.write("report", fold=split.fold, **report.to_dict())
    print(report.table())
    return EXIT_OK


def cmd_crossval(args):
    config, manifest = _manifest_config(args)
    out = Path(config.out_dir)
    writer = JsonLinesWriter(out / "crossval.jsonl")
    kind = parse_architecture(config.architecture)
    result = cross_validate(manifest, kind, config, pretrained=_pretrained(config), writer=writer)
    for fold in result.folds:
        fold.report.save(out / f"fold_{fold.fold}")
    write_json(out / "summary.json", result.summary)
    print(dumps({k: result.summary[k] for k in ("mean_accuracy", "std_accuracy", "mean_macro_f1",
                                                  "std_macro_f1", "mean_weighted_f1", "std_weighted_f1")},
                indent=2))
    return EXIT_OK


def cmd_eval(args):
    config, manifest = _manifest_config(args, need_manifest=True)
    checkpoint = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(checkpoint, getattr(args, "arch", None))
    split = _split_for(args, config, manifest)
    report = evaluate(model, VolumeDataset.from_manifest(manifest).subset(split.test))
    report.save(Path(config.out_dir), stem="eval")
    print(report.table())
    return EXIT_OK


def cmd_predict(args):
    prediction = predict_volume(args.checkpoint, args.volume, args.arch)
    print(dumps(prediction.to_dict(), indent=2))
    return EXIT_OK


def cmd_params(args):
    kind = parse_architecture(args.arch)
    config = load_run_config(None, {"architecture": kind.value,
                                    "model": {"num_classes": args.classes, "in_channels": args.in_channels}})
    model = build_model(kind, config.model, rng=_seed(args))
    total = count_parameters(model)
    print(f"{kind.value} {total}")
    for name, count in model.parameter_breakdown().items():
        print(f"  {name:<8} {count:>12,d}")
    if (config.model.num_classes, config.model.in_channels) == (3, 1):
        reference = PUBLISHED_PARAMETER_COUNTS[kind]
        print(f"  reference {reference} (difference {total - reference:+d})")
    return EXIT_OK


def cmd_compare(args):
    rows = []
    for path in args.summaries:
        path = Path(path)
        try:
            summary = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read summary {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a JSON summary: {exc}") from exc
        try:
            rows.append((path.parent.name or str(path), summary.get("architecture", "?"),
                         *(summary[f"{p}_{key}"] for key in ("macro_f1", "weighted_f1", "accuracy")
                           for p in ("mean", "std"))))
        except KeyError as exc:
            raise FormatError(f"{path}: summary lacks {exc}") from exc
    print(f"{'run':<20} {'architecture':<14} {'macro F1':>17} {'weighted F1':>17} {'accuracy':>17}")
    for run, arch, mf, sf, mw, sw, ma, sa in rows:
        print(f"{run:<20} {arch:<14} {mf:8.4f} ± {sf:6.4f} {mw:8.4f} ± {sw:6.4f} {ma:8.4f} ± {sa:6.4f}")
    return EXIT_OK


def cmd_serve(args):
    import uvicorn
    uvicorn.run("spatiospatial.main:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    # global flags are accepted before or after the command name
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="single source of randomness")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = ArgumentParser(prog="spatiospatial", description=__doc__.splitlines()[1])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--extent", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="percentile-normalise and resample a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lo", type=float, default=0.5)
    p.add_argument("--hi", type=float, default=99.5)
    p.add_argument("--target-spacing", type=float, default=2.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", parents=[common], help="write stratified train/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--ratio", type=float, default=0.7)
    p.set_defaults(func=cmd_split)

    for name, func, helptext in (("train", cmd_train, "train on one split"),
                                 ("crossval", cmd_crossval, "k-fold cross-validation")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifest")
        p.add_argument("--arch")
        p.add_argument("--classes", type=int)
        p.add_argument("--in-channels", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--no-augment", action="store_true")
        p.add_argument("--k", type=int)
        p.add_argument("--ratio", type=float)
        p.add_argument("--from-checkpoint", help="transfer-load weights from this checkpoint")
        p.add_argument("--skip", help="comma-separated prefixes left at fresh init (default stem,fc)")
        p.add_argument("--freeze", action="store_true", help="freeze transfer-loaded parameters")
        if name == "train":
            p.add_argument("--fold", type=int)
            p.add_argument("--split", help="split JSON file (overrides --fold)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split's test subjects")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--arch")
    p.add_argument("--k", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--fold", type=int)
    p.add_argument("--split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="classify one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--arch")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("params", parents=[common], help="trainable parameter report")
    p.add_argument("--arch", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--in-channels", type=int, default=1)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("compare", parents=[common], help="tabulate crossval summaries")
    p.add_argument("summaries", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose)
        return args.func(args)
    except SpatiospatialError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
