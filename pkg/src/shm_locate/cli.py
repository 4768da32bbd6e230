"""Command-line entry point: one subcommand per pipeline stage plus ``experiment``.

Exit status is 0 on success, 1 on a domain error (error JSON on stderr) and
2 on a usage error.  Every subcommand reads an optional JSON experiment
config (``--config``) and writes its artifacts under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import mlp
from .errors import ConfigurationError, InputError, ShmError
from .features import (
    FeatureDataset,
    GAConfig,
    ga_search,
    pca_fit,
    pca_project,
    read_features,
    write_features,
    write_pca_csv,
)
from .novelty import save_baselines
from .pipeline import (
    Classifier,
    ExperimentConfig,
    build_features,
    derive_seed,
    load_or_generate,
    run_experiment,
    train_classifier,
    train_output_layer,
    truncated_percent,
    write_artifacts,
    write_json,
    write_loss_csv,
)
from .synthdata import DAMAGE_CLASSES, read_dataset, write_dataset

TRAIN_ARMS = ("monolithic", "split_large", "split_small")


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}", path=str(path)) from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object", path=str(path))
    return ExperimentConfig.from_dict(raw)


def _seed(args, config) -> int:
    return config.seed if args.seed_override is None else args.seed_override


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _arm_classes(arm: str, config: ExperimentConfig) -> list[int]:
    small = sorted(int(c) for c in config.small_classes)
    if arm == "split_small":
        return small
    if arm == "split_large":
        return [c for c in DAMAGE_CLASSES if c not in small]
    return list(DAMAGE_CLASSES)


def _restrict(ds: FeatureDataset, classes) -> FeatureDataset:
    return ds.rows(np.isin(ds.y, classes))


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args, config, out: Path) -> None:
    raw = load_or_generate(config, _seed(args, config))
    write_dataset(raw, out / "dataset")
    _say(args, f"wrote {len(raw.labels)} records to {out / 'dataset'}")


def cmd_features(args, config, out: Path) -> None:
    raw = read_dataset(args.data) if args.data else load_or_generate(config, _seed(args, config))
    pool, windows, baselines, _ = build_features(
        raw, config.window_len, config.ridge_scale, derive_seed(_seed(args, config), "split"),
        config.log_magnitudes)
    write_features(pool, out / "features.csv")
    save_baselines(baselines, out / "baselines.json")
    write_json(out / "windows.json", [w.to_list() for w in windows])
    _say(args, f"wrote {pool.X.shape[1]} candidate features for {len(pool.y)} records")


def cmd_select(args, config, out: Path) -> None:
    pool = read_features(args.features)
    cand = FeatureDataset(np.log1p(pool.X) if config.ga_log_scale else pool.X, pool.y, pool.split)
    cand = cand.normalized()
    ga_cfg = GAConfig(**{**asdict(config.ga), "seed": derive_seed(_seed(args, config), "ga")})
    ga = ga_search(*cand.part("train"), *cand.part("validation"), ga_cfg)
    write_features(pool.columns(ga.indices), out / "selected.csv")
    write_json(out / "selection.json", {"indices": ga.indices, "fitness": ga.fitness,
                                        "history": ga.history})
    _say(args, f"selected columns {ga.indices} (validation 1-NN accuracy {ga.fitness:.4f})")


def cmd_train(args, config, out: Path) -> None:
    classes = _arm_classes(args.arm, config)
    ds = _restrict(read_features(args.features), classes)
    cfg = config.train[args.arm]
    cfg = mlp.TrainConfig(**{**asdict(cfg), "seed": derive_seed(_seed(args, config), args.arm)})
    clf, hist, _ = train_classifier(ds, classes, config.hidden_sizes[args.arm], cfg)
    clf.save(out / f"{args.arm}.json")
    write_loss_csv(out / f"loss_{args.arm}.csv", hist)
    cm = clf.evaluate(*ds.part("test"))
    write_json(out / f"confusion_{args.arm}.json", cm.to_dict())
    _say(args, cm.table(f"{args.arm} (hidden {clf.model.dims[1]}, stopped at epoch "
                        f"{hist.stopped_epoch})"))


def cmd_transfer(args, config, out: Path) -> None:
    source = Classifier.load(args.source)
    small = _arm_classes("split_small", config)
    ds = _restrict(read_features(args.features), small)
    if ds.X.shape[1] != source.model.dims[0]:
        raise InputError(f"dataset has {ds.X.shape[1]} features, source model expects "
                         f"{source.model.dims[0]}",
                         dataset_features=int(ds.X.shape[1]), model_features=source.model.dims[0])
    scaled = ds.normalized()
    seed = _seed(args, config)
    results = {}
    for arm, make in (
        ("transfer_small", lambda cfg, rng: mlp.freeze_transfer(source.model, len(small),
                                                                cfg.init_std, rng)),
        ("scratch_small", lambda cfg, rng: mlp.linear_softmax(ds.X.shape[1], len(small),
                                                              cfg.init_std, rng)),
    ):
        cfg = config.train[arm]
        rng = np.random.default_rng(derive_seed(seed, arm))
        model, hist = train_output_layer(make(cfg, rng), scaled, small, cfg)
        clf = Classifier(model, small, scaled.normalization)
        clf.save(out / f"{arm}.json")
        write_loss_csv(out / f"loss_{arm}.csv", hist)
        cm = clf.evaluate(*ds.part("test"))
        results[arm] = cm.to_dict()
        _say(args, cm.table(f"{arm} (validation loss at epoch 10: "
                            f"{hist.val_loss[min(9, len(hist.val_loss) - 1)]:.6f})"))
    write_json(out / "transfer.json", results)


def cmd_evaluate(args, config, out: Path) -> None:
    clf = Classifier.load(args.model)
    ds = _restrict(read_features(args.features), clf.classes)
    X, y = ds.part(args.split)
    cm = clf.evaluate(X, y)
    write_json(out / "confusion.json", cm.to_dict())
    _say(args, cm.table())


def cmd_pca(args, config, out: Path) -> None:
    ds = read_features(args.features)
    model = pca_fit(ds.X, config.pca_components)
    write_pca_csv(out / "pca.csv", ds.y, pca_project(model, ds.X))
    write_json(out / "pca.json", {"explained_fraction": model.explained_fraction.tolist()})
    _say(args, "explained variance fractions: "
         + ", ".join(f"{f:.4f}" for f in model.explained_fraction))


def cmd_experiment(args, config, out: Path) -> None:
    report = run_experiment(config, args.seed_override)
    write_artifacts(report, out)
    for arm, res in report.arms.items():
        _say(args, res.confusion.table(arm) + "\n")
    parts = [report.arms["split_large"].confusion, report.arms["split_small"].confusion]
    pct = truncated_percent(sum(c.correct for c in parts), sum(c.total for c in parts))
    _say(args, f"composite split accuracy: {pct}%")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "features": cmd_features,
    "select": cmd_select,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "pca": cmd_pca,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed-override", type=int, default=None, metavar="SEED",
                        help="replace the config's master seed")
    loud = common.add_mutually_exclusive_group()
    loud.add_argument("--quiet", action="store_true", help="print nothing on success")
    loud.add_argument("--verbose", action="store_true", help="log stage progress to stderr")

    parser = argparse.ArgumentParser(prog="shm-locate",
                                     description="Damage localisation with split classifiers.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("gen-data", parents=[common], help="simulate a transmissibility dataset")
    p = sub.add_parser("features", parents=[common], help="novelty features from a dataset")
    p.add_argument("--data", type=Path, help="dataset directory (generated if omitted)")
    p = sub.add_parser("select", parents=[common], help="GA feature selection")
    p.add_argument("--features", type=Path, required=True)
    p = sub.add_parser("train", parents=[common], help="train one classifier arm")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--arm", choices=TRAIN_ARMS, default="monolithic")
    p = sub.add_parser("transfer", parents=[common], help="frozen transfer plus scratch control")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--source", type=Path, required=True, help="split_large classifier JSON")
    p = sub.add_parser("evaluate", parents=[common], help="confusion matrix of a classifier")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p = sub.add_parser("pca", parents=[common], help="principal component scores")
    p.add_argument("--features", type=Path, required=True)
    sub.add_parser("experiment", parents=[common], help="run every stage and write a report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = _load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, config, args.out)
    except ShmError as exc:
        print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
        return 1
    except (OSError, KeyError, TypeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
