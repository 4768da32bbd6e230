"""End-to-end experiment: monolithic 9-class model, 7+2 split, frozen transfer.

Sub-problems are evaluated on their own pre-separated test rows; there is
no router deciding at deployment time which sub-classifier sees a sample.
"""
from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mlp
from .errors import ConfigurationError, InputError, InvalidSplitError, LabelError, ShmError, StageError
from .features import (
    FeatureDataset,
    GAConfig,
    Normalization,
    apply_normalization,
    assign_splits,
    fit_normalization,
    ga_search,
    pca_fit,
    pca_project,
    write_pca_csv,
)
from .novelty import RIDGE_SCALE, fit_baselines, novelty_matrix
from .signals import default_window_grid
from .synthdata import (
    DAMAGE_CLASSES,
    UNDAMAGED,
    ModelConfig,
    RawDataset,
    build_wing_model,
    generate_dataset,
    make_layout,
    read_dataset,
    SensorLayout,
)

log = logging.getLogger(__name__)

ARMS = ("monolithic", "split_large", "split_small", "transfer_small", "scratch_small")


# ---------------------------------------------------------------- confusion matrices

def truncated_percent(correct: int, total: int) -> str:
    """``correct / total`` in percent, truncated (not rounded) to two decimals."""
    basis = correct * 10000 // total
    return f"{basis // 100}.{basis % 100:02d}"


@dataclass(eq=False)
class ConfusionMatrix:
    classes: list[int]
    counts: np.ndarray  # rows = true class, columns = predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist(),
                "accuracy": self.accuracy}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls([int(c) for c in d["classes"]], np.array(d["counts"], dtype=int))

    def percent(self) -> str:
        return truncated_percent(self.correct, self.total)

    def table(self, title: str | None = None) -> str:
        """Plain-text table: one "Missing panel i" row per true class."""
        head = ["Predicted panel"] + [str(c) for c in self.classes]
        rows = [[f"Missing panel {c}"] + [str(v) for v in r]
                for c, r in zip(self.classes, self.counts.tolist())]
        w0 = max(len(r[0]) for r in [head] + rows)
        wc = max(len(x) for r in [head] + rows for x in r[1:])
        fmt = lambda r: f"{r[0]:<{w0}} | " + " ".join(f"{x:>{wc}}" for x in r[1:])
        lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in rows]
        tail = f"total accuracy: {self.percent()}%"
        return "\n".join(([title] if title else []) + lines + [tail])


def confusion_from_predictions(true, pred, classes) -> ConfusionMatrix:
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(np.asarray(true).tolist(), np.asarray(pred).tolist()):
        if t not in index or p not in index:
            raise LabelError(f"label {t if t not in index else p} not in {classes}",
                             label=int(t if t not in index else p), classes=classes)
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def evaluate(model: mlp.MlpModel, X, y, classes) -> ConfusionMatrix:
    """Confusion matrix of ``model`` on already-scaled rows ``X`` with labels ``y``."""
    classes = list(classes)
    if model.dims[2] != len(classes):
        raise InputError(f"model has {model.dims[2]} outputs for {len(classes)} classes",
                         model_outputs=model.dims[2], classes=len(classes))
    bad = set(np.asarray(y).tolist()) - set(classes)
    if bad:
        raise LabelError(f"labels {sorted(bad)} outside model classes {classes}",
                         labels=sorted(bad), classes=classes)
    pred = np.asarray(classes)[mlp.predict(model, X)]
    return confusion_from_predictions(y, pred, classes)


def composite_accuracy(cms: list[ConfusionMatrix]) -> float:
    if not cms:
        raise ValueError("need at least one confusion matrix")
    seen: set[int] = set()
    for cm in cms:
        if seen & set(cm.classes):
            raise InvalidSplitError("confusion matrices share classes",
                                    classes=sorted(seen & set(cm.classes)))
        seen |= set(cm.classes)
    return sum(cm.correct for cm in cms) / sum(cm.total for cm in cms)


def split_problem(dataset: FeatureDataset, small_classes=(3, 6)) -> tuple[FeatureDataset, FeatureDataset]:
    small = set(int(c) for c in small_classes)
    present = set(dataset.classes)
    if not small or not small < present:
        raise InvalidSplitError(
            "small_classes must be a non-empty proper subset of the dataset classes",
            small_classes=sorted(small), classes=sorted(present))
    mask = np.isin(dataset.y, sorted(small))
    return dataset.rows(~mask), dataset.rows(mask)


# ---------------------------------------------------------------- classifier bundle

@dataclass(eq=False)
class Classifier:
    """A network plus everything needed to feed it raw novelty features."""

    model: mlp.MlpModel
    classes: list[int]
    normalization: Normalization

    def prepare(self, X_raw) -> np.ndarray:
        X = np.asarray(X_raw, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.normalization.lo):
            raise InputError(
                f"dataset has {X.shape[-1]} features, classifier expects "
                f"{len(self.normalization.lo)}",
                dataset_features=int(X.shape[-1]), model_features=len(self.normalization.lo))
        return apply_normalization(X, self.normalization)

    def evaluate(self, X_raw, y) -> ConfusionMatrix:
        return evaluate(self.model, self.prepare(X_raw), y, self.classes)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "classes": self.classes,
                "normalization": self.normalization.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Classifier":
        return cls(mlp.MlpModel.from_dict(d["model"]), [int(c) for c in d["classes"]],
                   Normalization.from_dict(d["normalization"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Classifier":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def xy(ds: FeatureDataset, classes, part: str):
    """(X, one-hot Y) for one split of an already-scaled dataset."""
    index = {c: i for i, c in enumerate(classes)}
    X, y = ds.part(part)
    return X, mlp.one_hot([index[int(v)] for v in y], len(classes))


def train_classifier(ds: FeatureDataset, classes, hidden_sizes, config: mlp.TrainConfig):
    """Scale on the training split, then search hidden sizes x restarts.

    Returns (classifier, history, scaled dataset).
    """
    norm = fit_normalization(ds.part("train")[0])
    scaled = FeatureDataset(apply_normalization(ds.X, norm), ds.y, ds.split, norm)
    tr, va = xy(scaled, classes, "train"), xy(scaled, classes, "validation")
    best = None
    for h in hidden_sizes:
        model, hist = mlp.multi_restart_train(ds.X.shape[1], int(h), len(classes), tr, va, config)
        if best is None or hist.best_val_loss < best[1].best_val_loss:
            best = (model, hist)
    return Classifier(best[0], list(classes), norm), best[1], scaled


def train_output_layer(model: mlp.MlpModel, scaled: FeatureDataset, classes,
                       config: mlp.TrainConfig) -> tuple[mlp.MlpModel, mlp.LossHistory]:
    return mlp.train(model, xy(scaled, classes, "train"), xy(scaled, classes, "validation"), config)


# ---------------------------------------------------------------- configuration

def derive_seed(master: int, name: str) -> int:
    return int(np.random.SeedSequence([master, zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    seed: int = 7
    model: ModelConfig = field(default_factory=ModelConfig)
    layout: dict = field(default_factory=lambda: make_layout().to_dict())
    reps_per_class: int = 198
    noise_level: float = 0.02
    dataset: str | None = None      # directory written by write_dataset; generated if absent
    window_len: int = 16
    log_magnitudes: bool = False    # score log|T| windows instead of raw |T|
    ridge_scale: float = RIDGE_SCALE
    ga: GAConfig = field(default_factory=GAConfig)
    ga_log_scale: bool = True       # GA distances on log1p(MSD); networks still see raw MSD
    small_classes: list[int] = field(default_factory=lambda: [3, 6])
    hidden_sizes: dict = field(default_factory=lambda: {
        "monolithic": [10], "split_large": [9], "split_small": [9]})
    train: dict = field(default_factory=lambda: {arm: mlp.TrainConfig() for arm in ARMS})
    pca_components: int = 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown experiment fields {sorted(unknown)}",
                                     field=sorted(unknown)[0])
        cfg = cls()
        try:
            return cls._merge(cfg, d)
        except TypeError as exc:
            raise ConfigurationError(f"bad experiment config: {exc}", field="config") from exc

    @classmethod
    def _merge(cls, cfg: "ExperimentConfig", d: dict) -> "ExperimentConfig":
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "ga" in d:
            d["ga"] = GAConfig(**d["ga"])
        if "train" in d:
            merged = dict(cfg.train)
            common = {k: v for k, v in d["train"].items() if k not in ARMS}
            for arm in ARMS:
                base = asdict(merged[arm])
                base.update(common)
                base.update(d["train"].get(arm, {}))
                merged[arm] = mlp.TrainConfig(**base)
            d["train"] = merged
        if "hidden_sizes" in d:
            d["hidden_sizes"] = {**cfg.hidden_sizes, **d["hidden_sizes"]}
        for k, v in d.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for arm in ARMS:
            self.train[arm].validate()
        for arm in ("monolithic", "split_large", "split_small"):
            sizes = self.hidden_sizes.get(arm)
            if not sizes or any(int(h) < 1 for h in sizes):
                raise ConfigurationError(f"hidden_sizes[{arm!r}] must list sizes >= 1",
                                         field="hidden_sizes")
        small = set(self.small_classes)
        if not small or not small < set(DAMAGE_CLASSES):
            raise InvalidSplitError("small_classes must be a non-empty proper subset of 1..9",
                                    small_classes=sorted(small))
        if self.pca_components < 1:
            raise ConfigurationError("pca_components must be >= 1", field="pca_components")
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be >= 0", field="noise_level")


# ---------------------------------------------------------------- experiment

@dataclass
class ArmResult:
    confusion: ConfusionMatrix
    history: mlp.LossHistory
    classifier: Classifier
    hidden_size: int

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.to_dict(),
            "hidden_size": self.hidden_size,
            "trainable_parameters": self.classifier.model.n_trainable(),
            "stopped_epoch": self.history.stopped_epoch,
            "best_epoch": self.history.best_epoch,
            "best_val_loss": self.history.best_val_loss,
        }


@dataclass
class ExperimentReport:
    arms: dict[str, ArmResult]
    composite_split_accuracy: float
    monolithic_small_accuracy: float
    selected_features: list[int]
    selected_windows: list[list[int]]
    ga_fitness: float
    ga_history: list[float]
    pca: dict[str, dict]
    novelty_check: dict
    manifest: dict
    datasets: dict[str, FeatureDataset] = field(default_factory=dict)
    pca_scores: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "arms": {k: v.to_dict() for k, v in self.arms.items()},
            "composite_split_accuracy": self.composite_split_accuracy,
            "monolithic_accuracy": self.arms["monolithic"].confusion.accuracy,
            "monolithic_small_accuracy": self.monolithic_small_accuracy,
            "selected_features": self.selected_features,
            "selected_windows": self.selected_windows,
            "ga_fitness": self.ga_fitness,
            "ga_history": self.ga_history,
            "pca": self.pca,
            "novelty_check": self.novelty_check,
            "routing": "not implemented: sub-classifiers are scored on pre-separated test rows",
        }


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            details = exc.details if isinstance(exc, ShmError) else {}
            raise StageError(f"stage {self.name} failed: {exc}", stage=self.name,
                             cause=type(exc).__name__, **details) from exc
        return False


def load_or_generate(config: ExperimentConfig, seed: int) -> RawDataset:
    if config.dataset:
        return read_dataset(config.dataset)
    model = build_wing_model(config.model)
    layout = SensorLayout.from_dict(config.layout)
    ds = generate_dataset(model, layout, config.reps_per_class, config.noise_level, seed)
    ds.meta = {"model": config.model.to_dict(), "layout": config.layout,
               "noise_level": config.noise_level}
    return ds


def build_features(raw: RawDataset, window_len: int, ridge_scale: float, split_seed: int,
                   log_magnitudes: bool = False):
    """Per-window baselines on the first undamaged half, MSD features for the rest.

    Returns (candidate FeatureDataset over damaged classes, windows,
    normal-pool feature matrix).
    """
    mags = raw.magnitudes
    if log_magnitudes:
        mags = np.log(np.maximum(mags, np.finfo(float).tiny))
    undamaged = mags[raw.labels == UNDAMAGED]
    half = len(undamaged) // 2
    pairs, lines = raw.magnitudes.shape[1:]
    windows = default_window_grid(pairs, lines, window_len)
    baselines = fit_baselines(undamaged[:half], windows, ridge_scale=ridge_scale)
    damaged = raw.labels != UNDAMAGED
    X = novelty_matrix(baselines, mags[damaged])
    y = raw.labels[damaged]
    normal = novelty_matrix(baselines, undamaged[half:])
    return FeatureDataset(X, y, assign_splits(y, split_seed)), windows, baselines, normal


def _pca_export(X, y, k):
    model = pca_fit(X, k)
    return pca_project(model, X), {
        "explained_variance": model.explained_variance.tolist(),
        "explained_fraction": model.explained_fraction.tolist(),
        "top_fraction": float(model.explained_fraction.sum()),
    }


def run_experiment(config: ExperimentConfig | None = None, seed_override: int | None = None) -> ExperimentReport:
    config = config or ExperimentConfig()
    config.validate()
    seed = config.seed if seed_override is None else int(seed_override)
    seeds = {"master": seed, "data": seed, "split": derive_seed(seed, "split"),
             "ga": derive_seed(seed, "ga"),
             **{f"train_{arm}": derive_seed(seed, arm) for arm in ARMS}}
    train_cfg = {arm: mlp.TrainConfig(**{**asdict(config.train[arm]), "seed": seeds[f"train_{arm}"]})
                 for arm in ARMS}
    small = sorted(int(c) for c in config.small_classes)
    large = [c for c in DAMAGE_CLASSES if c not in small]

    with _Stage("data"):
        raw = load_or_generate(config, seeds["data"])
    with _Stage("novelty"):
        pool, windows, _, normal = build_features(raw, config.window_len, config.ridge_scale,
                                                  seeds["split"], config.log_magnitudes)
    with _Stage("select"):
        cand = pool if not config.ga_log_scale else FeatureDataset(np.log1p(pool.X), pool.y, pool.split)
        cand = cand.normalized()
        ga_cfg = GAConfig(**{**asdict(config.ga), "seed": seeds["ga"]})
        ga = ga_search(*cand.part("train"), *cand.part("validation"), ga_cfg)
        data = pool.columns(ga.indices)

    arms: dict[str, ArmResult] = {}
    scaled: dict[str, FeatureDataset] = {}
    with _Stage("monolithic"):
        clf, hist, scaled["all"] = train_classifier(
            data, list(DAMAGE_CLASSES), config.hidden_sizes["monolithic"], train_cfg["monolithic"])
        Xte, yte = data.part("test")
        arms["monolithic"] = ArmResult(clf.evaluate(Xte, yte), hist, clf, clf.model.dims[1])
        in_small = np.isin(yte, small)
        pred = np.asarray(clf.classes)[mlp.predict(clf.model, clf.prepare(Xte[in_small]))]
        mono_small = float(np.mean(pred == yte[in_small]))

    with _Stage("split"):
        part_large, part_small = split_problem(data, small)
        for arm, part, classes in (("split_large", part_large, large),
                                   ("split_small", part_small, small)):
            clf, hist, scaled[arm] = train_classifier(part, classes, config.hidden_sizes[arm],
                                                      train_cfg[arm])
            Xte, yte = part.part("test")
            arms[arm] = ArmResult(clf.evaluate(Xte, yte), hist, clf, clf.model.dims[1])
        composite = composite_accuracy([arms["split_large"].confusion,
                                        arms["split_small"].confusion])

    with _Stage("transfer"):
        source = arms["split_large"].classifier.model
        small_norm = arms["split_small"].classifier.normalization
        rng = np.random.default_rng(seeds["train_transfer_small"])
        tcfg = train_cfg["transfer_small"]
        model, hist = train_output_layer(mlp.freeze_transfer(source, len(small), tcfg.init_std, rng),
                                         scaled["split_small"], small, tcfg)
        clf = Classifier(model, small, small_norm)
        Xte, yte = part_small.part("test")
        arms["transfer_small"] = ArmResult(clf.evaluate(Xte, yte), hist, clf, model.dims[1])

        rng = np.random.default_rng(seeds["train_scratch_small"])
        scfg = train_cfg["scratch_small"]
        model, hist = train_output_layer(mlp.linear_softmax(data.X.shape[1], len(small), scfg.init_std, rng),
                                         scaled["split_small"], small, scfg)
        clf = Classifier(model, small, small_norm)
        arms["scratch_small"] = ArmResult(clf.evaluate(Xte, yte), hist, clf, 0)

    with _Stage("pca"):
        k = config.pca_components
        exports = {
            "all_raw": (data.X, data.y),
            "large_hidden": (mlp.hidden(arms["split_large"].classifier.model,
                                        scaled["split_large"].X), part_large.y),
            "small_raw": (scaled["split_small"].X, part_small.y),
            "small_transformed": (mlp.hidden(source, scaled["split_small"].X), part_small.y),
        }
        pca_info, pca_scores = {}, {}
        for name, (X, y) in exports.items():
            scores, info = _pca_export(X, y, k)
            pca_info[name] = info
            pca_scores[name] = (y, scores)

    novelty_check = {
        "normal_median": float(np.median(normal)),
        "damaged_median": {str(c): float(np.median(pool.X[pool.y == c])) for c in DAMAGE_CLASSES},
    }
    manifest = {"config": config.to_dict(), "seed_override": seed_override, "seeds": seeds}
    return ExperimentReport(
        arms=arms,
        composite_split_accuracy=composite,
        monolithic_small_accuracy=mono_small,
        selected_features=list(ga.indices),
        selected_windows=[windows[i].to_list() for i in ga.indices],
        ga_fitness=ga.fitness,
        ga_history=ga.history,
        pca=pca_info,
        novelty_check=novelty_check,
        manifest=manifest,
        datasets={"pool": pool, "selected": data, **scaled},
        pca_scores=pca_scores,
    )


# ---------------------------------------------------------------- artifacts

def write_loss_csv(path, hist: mlp.LossHistory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (t, v) in enumerate(zip(hist.train_loss, hist.val_loss), start=1):
            w.writerow([e, repr(t), repr(v)])


def read_loss_csv(path) -> mlp.LossHistory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    hist = mlp.LossHistory([float(r[1]) for r in rows], [float(r[2]) for r in rows])
    hist.stopped_epoch = len(rows)
    hist.best_epoch = int(np.argmin(hist.val_loss)) + 1 if rows else 0
    return hist


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_artifacts(report: ExperimentReport, out_dir) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = ["manifest.json", "report.json"]
    write_json(out / "manifest.json", report.manifest)
    for arm, res in report.arms.items():
        name = f"loss_{arm}.csv"
        write_loss_csv(out / name, res.history)
        written.append(name)
    for name, (y, scores) in report.pca_scores.items():
        fname = f"pca_{name}.csv"
        write_pca_csv(out / fname, y, scores)
        written.append(fname)
    models = out / "models"
    models.mkdir(exist_ok=True)
    for arm, res in report.arms.items():
        res.classifier.save(models / f"{arm}.json")
    body = report.to_dict()
    body["files"] = written
    write_json(out / "report.json", body)
    return written
