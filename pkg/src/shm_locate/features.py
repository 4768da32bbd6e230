"""Feature datasets, GA subset selection, [-1, 1] scaling and PCA."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ConfigurationError, DegenerateFeatureError

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True, eq=False)
class Normalization:
    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


@dataclass(eq=False)
class FeatureDataset:
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    normalization: Normalization | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.split = np.asarray(self.split, dtype=str)
        if not (len(self.X) == len(self.y) == len(self.split)):
            raise BoundsError("X, y and split differ in length")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise ConfigurationError(f"unknown split tags {sorted(bad)}", field="split")

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.y))

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == name
        return self.X[mask], self.y[mask]

    def rows(self, mask) -> "FeatureDataset":
        return FeatureDataset(self.X[mask], self.y[mask], self.split[mask], self.normalization)

    def columns(self, idx) -> "FeatureDataset":
        idx = list(idx)
        norm = self.normalization
        if norm is not None:
            norm = Normalization(norm.lo[idx], norm.hi[idx])
        return FeatureDataset(self.X[:, idx], self.y, self.split, norm)

    def normalized(self) -> "FeatureDataset":
        """Scale with parameters fitted on this dataset's training rows."""
        norm = fit_normalization(self.part("train")[0])
        return FeatureDataset(apply_normalization(self.X, norm), self.y, self.split, norm)

    def counts(self) -> dict[tuple[str, int], int]:
        out: dict[tuple[str, int], int] = {}
        for s, c in zip(self.split, self.y):
            out[(str(s), int(c))] = out.get((str(s), int(c)), 0) + 1
        return out


def assign_splits(labels, seed: int) -> np.ndarray:
    """Random equal thirds per class: train / validation / test."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 0x5B117])
    split = np.empty(len(labels), dtype="<U10")
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) % 3:
            raise ConfigurationError(f"class {c} count {len(idx)} not divisible by 3",
                                     field="reps_per_class")
        idx = rng.permutation(idx)
        third = len(idx) // 3
        for k, name in enumerate(SPLITS):
            split[idx[k * third:(k + 1) * third]] = name
    return split


def write_features(ds: FeatureDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "split"] + [f"f{k}" for k in range(ds.X.shape[1])])
        for c, s, row in zip(ds.y, ds.split, ds.X):
            w.writerow([int(c), s, *map(repr, row.tolist())])


def read_features(path) -> FeatureDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    y = [int(r[0]) for r in rows]
    split = [r[1] for r in rows]
    X = np.array([[float(v) for v in r[2:]] for r in rows], dtype=float)
    return FeatureDataset(X.reshape(len(rows), -1), y, split)


# ---------------------------------------------------------------- scaling

def fit_normalization(X_train) -> Normalization:
    X_train = np.asarray(X_train, dtype=float)
    lo, hi = X_train.min(axis=0), X_train.max(axis=0)
    flat = np.flatnonzero(~(hi > lo))
    if flat.size:
        raise DegenerateFeatureError(f"feature column {flat[0]} is constant on the training split",
                                     column=int(flat[0]))
    return Normalization(lo, hi)


def apply_normalization(X, norm: Normalization) -> np.ndarray:
    return 2.0 * (np.asarray(X, dtype=float) - norm.lo) / (norm.hi - norm.lo) - 1.0


def invert_normalization(Xn, norm: Normalization) -> np.ndarray:
    return (np.asarray(Xn, dtype=float) + 1.0) * (norm.hi - norm.lo) / 2.0 + norm.lo


# ---------------------------------------------------------------- GA

@dataclass
class GAConfig:
    population: int = 40
    generations: int = 30
    subset_size: int = 9
    mutation_rate: float = 0.1
    tournament_size: int = 3
    elitism: int = 2
    fitness: str = "knn1"
    seed: int = 0

    def validate(self, d: int) -> None:
        if self.subset_size < 1 or self.subset_size > d:
            raise ConfigurationError(f"subset_size must be in [1, {d}]", field="subset_size")
        if not 0 <= self.elitism < self.population:
            raise ConfigurationError("elitism must be < population", field="elitism")
        if self.tournament_size < 1:
            raise ConfigurationError("tournament_size must be >= 1", field="tournament_size")
        if not 0 <= self.mutation_rate <= 1:
            raise ConfigurationError("mutation_rate must be a probability", field="mutation_rate")
        if self.fitness not in FITNESS:
            raise ConfigurationError(f"unknown fitness {self.fitness!r}", field="fitness")


@dataclass
class GAResult:
    indices: list[int]
    fitness: float
    history: list[float] = field(default_factory=list)  # best fitness per generation
    initial_fitness: list[float] = field(default_factory=list)


def fitness_knn(X_train, y_train, X_val, y_val, subset) -> float:
    """1-NN validation accuracy on the chosen columns.

    Distance ties go to the lower training row (``argmin`` picks the first).
    """
    subset = list(subset)
    if not subset:
        raise ConfigurationError("subset must be non-empty", field="subset")
    A = np.asarray(X_train, dtype=float)[:, subset]
    B = np.asarray(X_val, dtype=float)[:, subset]
    # |b|^2 is constant per validation row, so it cannot change the argmin
    d2 = (A * A).sum(axis=1)[None, :] - 2.0 * (B @ A.T)
    nearest = d2.argmin(axis=1)
    return float(np.mean(np.asarray(y_train)[nearest] == np.asarray(y_val)))


FITNESS = {"knn1": fitness_knn}


def _random_subset(rng, d, k) -> tuple[int, ...]:
    return tuple(sorted(rng.choice(d, size=k, replace=False).tolist()))


def _crossover(rng, a, b, d, k) -> list[int]:
    common = set(a) & set(b)
    child = sorted(common)
    for g in sorted(set(a) ^ set(b)):
        if rng.random() < 0.5:
            child.append(g)
    if len(child) > k:
        extra = [g for g in child if g not in common]
        drop = set(rng.choice(extra, size=len(child) - k, replace=False).tolist())
        child = [g for g in child if g not in drop]
    return _fill(rng, child, d, k)


def _fill(rng, genes, d, k) -> list[int]:
    genes = list(genes)
    while len(genes) < k:
        unused = np.setdiff1d(np.arange(d), genes)
        genes.append(int(rng.choice(unused)))
    return genes


def _mutate(rng, genes, d, rate) -> tuple[int, ...]:
    genes = list(genes)
    for pos in range(len(genes)):
        if rng.random() < rate:
            unused = np.setdiff1d(np.arange(d), genes)
            if unused.size:
                genes[pos] = int(rng.choice(unused))
    return tuple(sorted(genes))


def ga_search(X_train, y_train, X_val, y_val, config: GAConfig) -> GAResult:
    d = np.asarray(X_train).shape[1]
    config.validate(d)
    if len(np.unique(y_train)) < 2:
        raise ConfigurationError("need at least two classes", field="y_train")
    k = config.subset_size
    if d == k:
        ident = list(range(d))
        return GAResult(ident, FITNESS[config.fitness](X_train, y_train, X_val, y_val, ident))

    fit_fn = FITNESS[config.fitness]
    cache: dict[tuple[int, ...], float] = {}

    def score(ind):
        if ind not in cache:
            cache[ind] = fit_fn(X_train, y_train, X_val, y_val, ind)
        return cache[ind]

    def rank_key(ind):
        # higher fitness first, lexicographically smaller subset wins ties
        return (-score(ind), ind)

    rng = np.random.default_rng(config.seed)
    pop = [_random_subset(rng, d, k) for _ in range(config.population)]
    initial = [score(ind) for ind in pop]
    score(tuple(range(k)))  # so a fully tied search returns the smallest subset
    history = []
    for _ in range(config.generations):
        ranked = sorted(pop, key=rank_key)
        history.append(score(ranked[0]))
        nxt = ranked[:config.elitism]
        while len(nxt) < config.population:
            parents = []
            for _ in range(2):
                picks = rng.integers(0, len(pop), size=config.tournament_size)
                parents.append(min((pop[i] for i in picks), key=rank_key))
            child = _crossover(rng, parents[0], parents[1], d, k)
            nxt.append(_mutate(rng, child, d, config.mutation_rate))
        pop = nxt
    best = min(cache, key=rank_key)
    history.append(score(min(pop, key=rank_key)))
    return GAResult(list(best), score(best), history, initial)


def ga_select(X_train, y_train, X_val, y_val, config: GAConfig) -> list[int]:
    return ga_search(X_train, y_train, X_val, y_val, config).indices


# ---------------------------------------------------------------- PCA

@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_fraction(self) -> np.ndarray:
        return self.explained_variance / self.total_variance


def pca_fit(X, k: int) -> PCAModel:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if not 1 <= k <= min(n - 1, d):
        raise BoundsError(f"k must be in [1, {min(n - 1, d)}]", k=k, n=n, d=d)
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:k].copy()
    lead = np.abs(comps).argmax(axis=1)
    comps *= np.sign(comps[np.arange(k), lead])[:, None]
    var = s[:k] ** 2 / (n - 1)
    total = float(X.var(axis=0, ddof=1).sum())
    return PCAModel(mean, comps, var, total)


def pca_project(model: PCAModel, X) -> np.ndarray:
    return (np.asarray(X, dtype=float) - model.mean) @ model.components.T


def write_pca_csv(path, labels, scores) -> None:
    k = scores.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class"] + [f"pc{i + 1}" for i in range(k)])
        for c, row in zip(labels, scores):
            w.writerow([int(c), *map(repr, row.tolist())])
