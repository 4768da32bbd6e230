"""Synthetic transmissibility data from a grounded mass-spring-damper chain.

The chain stands in for the wing: each damage class weakens one or more
springs, and small "panels" (classes 3 and 6) weaken them less.  Spectra
are exact frequency-domain solves; measurement noise is multiplicative
Gaussian per sensor and spectral line.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SingularSystemError
from .signals import REFERENCE_FLOOR, TransmissibilityRecord, transmissibility

DAMAGE_CLASSES = tuple(range(1, 10))
UNDAMAGED = 0
SMALL_PANELS = (3, 6)


@dataclass(frozen=True)
class PanelDamage:
    class_id: int
    springs: tuple[int, ...]
    reduction: float


def _default_panels() -> list[PanelDamage]:
    # small panels 3 and 6 weaken the same springs as panels 2 and 5, so their
    # signatures are scaled-down copies that sit close to the noise floor
    table = [
        (1, (1,), 0.15),
        (2, (3,), 0.12),
        (3, (3,), 0.0007),
        (4, (6,), 0.18),
        (5, (8,), 0.10),
        (6, (8,), 0.001),
        (7, (10,), 0.14),
        (8, (11,), 0.16),
        (9, (12,), 0.12),
    ]
    return [PanelDamage(c, s, r) for c, s, r in table]


@dataclass
class ModelConfig:
    n_dof: int = 12
    mass: float | list[float] = 1.0
    stiffness: float | list[float] = 1e6
    alpha: float = 0.5
    beta: float = 1e-6
    panels: list[PanelDamage] = field(default_factory=_default_panels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["panels"] = [
            {"class_id": p.class_id, "springs": list(p.springs), "reduction": p.reduction}
            for p in self.panels
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "panels" in d:
            d["panels"] = [
                PanelDamage(int(p["class_id"]), tuple(int(s) for s in p["springs"]),
                            float(p["reduction"]))
                for p in d["panels"]
            ]
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config fields {sorted(unknown)}",
                                     field=sorted(unknown)[0])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ChainModel:
    masses: np.ndarray
    stiffnesses: np.ndarray  # n_dof + 1 springs, both chain ends grounded
    alpha: float
    beta: float
    panel_map: tuple[PanelDamage, ...] = ()

    @property
    def n_dof(self) -> int:
        return len(self.masses)

    def stiffness_matrix(self, damage_class: int = UNDAMAGED) -> np.ndarray:
        k = np.array(self.stiffnesses, dtype=float)
        if damage_class != UNDAMAGED:
            panel = self.panel(damage_class)
            for s in panel.springs:
                k[s] *= 1.0 - panel.reduction
        n = self.n_dof
        K = np.zeros((n, n))
        for i in range(n):
            K[i, i] = k[i] + k[i + 1]
            if i + 1 < n:
                K[i, i + 1] = K[i + 1, i] = -k[i + 1]
        return K

    def panel(self, damage_class: int) -> PanelDamage:
        for p in self.panel_map:
            if p.class_id == damage_class:
                return p
        raise ConfigurationError(f"unknown damage class {damage_class}", field="damage_class")


@dataclass(frozen=True, eq=False)
class SensorLayout:
    pairs: tuple[tuple[int, int], ...]  # (response_dof, reference_dof)
    excitation_dof: int
    freq_grid: np.ndarray

    @property
    def n_lines(self) -> int:
        return len(self.freq_grid)

    def check(self, n_dof: int) -> None:
        for r, ref in self.pairs:
            if not (0 <= r < n_dof and 0 <= ref < n_dof):
                raise ConfigurationError(f"sensor pair {(r, ref)} outside {n_dof} DOFs",
                                         field="pairs")
            if r == ref:
                raise ConfigurationError(f"sensor pair {(r, ref)} uses one DOF twice",
                                         field="pairs")
        if not 0 <= self.excitation_dof < n_dof:
            raise ConfigurationError("excitation_dof outside chain", field="excitation_dof")
        if np.any(np.diff(self.freq_grid) <= 0):
            raise ConfigurationError("freq_grid must be strictly ascending", field="freq_grid")

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "excitation_dof": self.excitation_dof,
            "f_lo": float(self.freq_grid[0]),
            "f_hi": float(self.freq_grid[-1]),
            "n_lines": self.n_lines,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorLayout":
        return make_layout(
            pairs=[tuple(p) for p in d["pairs"]],
            excitation_dof=int(d["excitation_dof"]),
            f_lo=float(d["f_lo"]), f_hi=float(d["f_hi"]), n_lines=int(d["n_lines"]),
        )


# Every pair straddles the excitation DOF.  A chain transmissibility between
# two points on the same side of the load only depends on the springs beyond
# its reference sensor, which would leave some pairs blind to some panels.
DEFAULT_PAIRS = ((0, 8), (2, 8), (4, 8), (7, 1), (9, 1), (11, 1), (1, 10), (3, 10), (6, 3))


def make_layout(pairs=DEFAULT_PAIRS, excitation_dof: int = 5,
                f_lo: float = 20.0, f_hi: float = 340.0, n_lines: int = 256) -> SensorLayout:
    """Uniform grid over ``[f_lo, f_hi]`` Hz; the default band covers all 12 modes."""
    if not 2 <= n_lines <= 2048:
        raise ConfigurationError("n_lines must be in [2, 2048]", field="n_lines")
    if not 0 <= f_lo < f_hi:
        raise ConfigurationError("need 0 <= f_lo < f_hi", field="f_lo")
    return SensorLayout(tuple(tuple(int(v) for v in p) for p in pairs), int(excitation_dof),
                        np.linspace(f_lo, f_hi, n_lines))


def build_wing_model(config: ModelConfig | None = None) -> ChainModel:
    config = config or ModelConfig()
    n = config.n_dof
    if n < 12:
        raise ConfigurationError("n_dof must be >= 12", field="n_dof")
    masses = np.broadcast_to(np.asarray(config.mass, dtype=float), (n,)).copy() \
        if np.ndim(config.mass) == 0 else np.asarray(config.mass, dtype=float)
    stiff = np.full(n + 1, float(config.stiffness)) \
        if np.ndim(config.stiffness) == 0 else np.asarray(config.stiffness, dtype=float)
    if masses.shape != (n,) or np.any(~(masses > 0)):
        raise ConfigurationError("masses must be n_dof positive values", field="mass")
    if stiff.shape != (n + 1,) or np.any(~(stiff > 0)):
        raise ConfigurationError("stiffnesses must be n_dof+1 positive values", field="stiffness")
    if config.alpha < 0:
        raise ConfigurationError("alpha must be >= 0", field="alpha")
    if config.beta < 0:
        raise ConfigurationError("beta must be >= 0", field="beta")

    seen = set()
    for p in config.panels:
        if p.class_id in seen:
            raise ConfigurationError(f"duplicate panel entry for class {p.class_id}",
                                     field="panels")
        seen.add(p.class_id)
        if not 0 < p.reduction < 1:
            raise ConfigurationError(f"class {p.class_id} reduction must be in (0, 1)",
                                     field="panels")
        if not p.springs or any(not 0 <= s <= n for s in p.springs):
            raise ConfigurationError(f"class {p.class_id} spring index out of range",
                                     field="panels")
    if seen != set(DAMAGE_CLASSES):
        raise ConfigurationError("panels must cover classes 1..9 exactly once", field="panels")
    small = max(p.reduction for p in config.panels if p.class_id in SMALL_PANELS)
    large = min(p.reduction for p in config.panels if p.class_id not in SMALL_PANELS)
    if not small < large:
        raise ConfigurationError("classes 3 and 6 must have the smallest reductions",
                                 field="panels")

    panels = tuple(sorted(config.panels, key=lambda p: p.class_id))
    return ChainModel(masses, stiff, float(config.alpha), float(config.beta), panels)


def frf_matrix(model: ChainModel, damage_class: int, layout: SensorLayout) -> np.ndarray:
    """Receptance of every DOF to a unit force at the excitation DOF.

    Returns complex array of shape (n_lines, n_dof).
    """
    K = model.stiffness_matrix(damage_class)
    M = np.diag(model.masses)
    C = model.alpha * M + model.beta * K
    w = 2 * np.pi * layout.freq_grid
    A = K[None] - (w ** 2)[:, None, None] * M[None] + 1j * w[:, None, None] * C[None]
    f = np.zeros(model.n_dof, dtype=complex)
    f[layout.excitation_dof] = 1.0
    H = np.empty((len(w), model.n_dof), dtype=complex)
    for k in range(len(w)):
        try:
            H[k] = np.linalg.solve(A[k], f)
        except np.linalg.LinAlgError:
            H[k] = np.nan
        if not np.all(np.isfinite(H[k])):
            raise SingularSystemError(
                f"singular dynamic stiffness at {layout.freq_grid[k]} Hz",
                frequency=float(layout.freq_grid[k]),
            )
    return H


def frf(model: ChainModel, damage_class: int, layout: SensorLayout, dof: int) -> np.ndarray:
    if not 0 <= dof < model.n_dof:
        raise ConfigurationError(f"dof {dof} outside chain", field="dof")
    return frf_matrix(model, damage_class, layout)[:, dof]


def _measure(H: np.ndarray, layout: SensorLayout, noise_level: float,
             rng: np.random.Generator) -> TransmissibilityRecord:
    # H is (n_lines, n_dof); one noise realisation per sensor DOF, shared across pairs
    eps = rng.standard_normal(H.shape[::-1])
    F = H.T * (1.0 + noise_level * eps)
    mags = np.stack([transmissibility(F[i], F[j], REFERENCE_FLOOR) for i, j in layout.pairs])
    return TransmissibilityRecord(mags, layout.freq_grid)


def simulate_measurement(model: ChainModel, damage_class: int, layout: SensorLayout,
                         noise_level: float, rng: np.random.Generator) -> TransmissibilityRecord:
    if noise_level < 0:
        raise ConfigurationError("noise_level must be >= 0", field="noise_level")
    return _measure(frf_matrix(model, damage_class, layout), layout, noise_level, rng)


def cell_rng(seed: int, class_id: int, rep: int) -> np.random.Generator:
    """Independent stream per (class, repetition) cell."""
    return np.random.default_rng([seed, class_id, rep])


@dataclass
class RawDataset:
    labels: np.ndarray       # class id per record, 0 = undamaged
    reps: np.ndarray         # repetition index within class
    magnitudes: np.ndarray   # (records, pairs, lines)
    freq_grid: np.ndarray
    rng_seed: int
    meta: dict = field(default_factory=dict)

    @property
    def per_class_counts(self) -> dict[int, int]:
        classes, counts = np.unique(self.labels, return_counts=True)
        return {int(c): int(n) for c, n in zip(classes, counts)}

    @property
    def records(self) -> list[tuple[int, TransmissibilityRecord]]:
        return [(int(c), TransmissibilityRecord(m, self.freq_grid))
                for c, m in zip(self.labels, self.magnitudes)]

    def of_class(self, class_id: int) -> np.ndarray:
        return self.magnitudes[self.labels == class_id]

    def __eq__(self, other):
        if not isinstance(other, RawDataset):
            return NotImplemented
        return (self.rng_seed == other.rng_seed
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.reps, other.reps)
                and np.array_equal(self.freq_grid, other.freq_grid)
                and np.array_equal(self.magnitudes, other.magnitudes))


def generate_dataset(model: ChainModel, layout: SensorLayout, reps_per_class: int,
                     noise_level: float, seed: int) -> RawDataset:
    """Damaged classes 1..9 get ``reps_per_class`` records each, the undamaged
    class twice as many (baseline pool followed by the normal-condition pool).
    """
    if reps_per_class < 3 or reps_per_class % 3:
        raise ConfigurationError("reps_per_class must be >= 3 and divisible by 3",
                                 field="reps_per_class")
    if noise_level < 0:
        raise ConfigurationError("noise_level must be >= 0", field="noise_level")
    layout.check(model.n_dof)

    labels, reps, mags = [], [], []
    for c in (UNDAMAGED, *DAMAGE_CLASSES):
        H = frf_matrix(model, c, layout)
        n = 2 * reps_per_class if c == UNDAMAGED else reps_per_class
        for r in range(n):
            rec = _measure(H, layout, noise_level, cell_rng(seed, c, r))
            labels.append(c)
            reps.append(r)
            mags.append(rec.magnitudes)
    return RawDataset(np.array(labels), np.array(reps), np.stack(mags),
                      layout.freq_grid.copy(), int(seed))


def write_dataset(ds: RawDataset, path: str | os.PathLike, meta: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    info = dict(ds.meta)
    info.update(meta or {})
    info.update(seed=ds.rng_seed, counts={str(k): v for k, v in ds.per_class_counts.items()},
                pairs=int(ds.magnitudes.shape[1]), lines=int(ds.magnitudes.shape[2]),
                freq_grid=[float(f) for f in ds.freq_grid])
    with open(path / "meta.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
    with open(path / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "rep", "pair_index", "line_index", "magnitude"])
        n_pairs, n_lines = ds.magnitudes.shape[1:]
        line_idx = [str(k) for k in range(n_lines)]
        for c, r, m in zip(ds.labels, ds.reps, ds.magnitudes):
            c, r = str(int(c)), str(int(r))
            for p in range(n_pairs):
                ps = str(p)
                w.writerows(zip([c] * n_lines, [r] * n_lines, [ps] * n_lines, line_idx,
                                map(repr, m[p].tolist())))


def read_dataset(path: str | os.PathLike) -> RawDataset:
    path = Path(path)
    with open(path / "meta.json") as fh:
        info = json.load(fh)
    n_pairs, n_lines = info["pairs"], info["lines"]
    cells: dict[tuple[int, int], np.ndarray] = {}
    with open(path / "records.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for c, r, p, k, v in reader:
            key = (int(c), int(r))
            m = cells.get(key)
            if m is None:
                m = cells[key] = np.full((n_pairs, n_lines), np.nan)
            m[int(p), int(k)] = float(v)
    keys = list(cells)  # file order
    meta = {k: v for k, v in info.items()
            if k not in ("seed", "counts", "pairs", "lines", "freq_grid")}
    return RawDataset(
        labels=np.array([k[0] for k in keys]),
        reps=np.array([k[1] for k in keys]),
        magnitudes=np.stack([cells[k] for k in keys]),
        freq_grid=np.array(info["freq_grid"], dtype=float),
        rng_seed=int(info["seed"]),
        meta=meta,
    )
