"""Mahalanobis squared-distance novelty indices over spectral windows."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BoundsError, SingularBaselineError
from .signals import SpectralWindow, TransmissibilityRecord, window_slice

RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class BaselineModel:
    window: SpectralWindow
    mean: np.ndarray
    covariance: np.ndarray       # regularised: sample covariance + ridge * I
    inv_covariance: np.ndarray
    regularization: float
    n_samples: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "window": self.window.to_list(),
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "ridge": self.regularization,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        cov = np.array(d["covariance"], dtype=float)
        inv = _spd_inverse(cov)
        if not np.allclose(inv @ cov, np.eye(len(cov)), rtol=0, atol=1e-8):
            raise SingularBaselineError("stored covariance does not invert cleanly")
        return cls(SpectralWindow(*d["window"]), np.array(d["mean"], dtype=float), cov, inv,
                   float(d["ridge"]), int(d["n_samples"]))


def _spd_inverse(S: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularBaselineError(
            "covariance is not positive definite; raise the ridge", dim=len(S)) from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(len(S)))
    return 0.5 * (inv + inv.T)


def default_ridge(cov: np.ndarray, scale: float = RIDGE_SCALE) -> float:
    return scale * float(np.trace(cov)) / cov.shape[0]


def fit_baseline(normal_windows, window: SpectralWindow, ridge: float | None = None,
                 ridge_scale: float = RIDGE_SCALE) -> BaselineModel:
    """Fit mean and inverse covariance on normal-condition window samples.

    ``normal_windows`` is (n_samples, window_len).  ``ridge=None`` uses
    ``ridge_scale * trace(S) / dim``.
    """
    X = np.asarray(normal_windows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d != len(window):
        raise BoundsError("sample width does not match window length",
                          width=d, window_len=len(window))
    if n < d + 1:
        raise SingularBaselineError(f"need at least {d + 1} samples, got {n}",
                                    n_samples=n, window_len=d)
    mean = X.mean(axis=0)
    S = np.cov(X, rowvar=False, ddof=1).reshape(d, d)
    S = 0.5 * (S + S.T)
    if ridge is None:
        ridge = default_ridge(S, ridge_scale)
    S = S + ridge * np.eye(d)
    return BaselineModel(window, mean, S, _spd_inverse(S), float(ridge), n)


def msd(baseline: BaselineModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != baseline.mean.shape:
        raise BoundsError("feature length does not match baseline",
                          got=list(x.shape), expected=baseline.dim)
    d = x - baseline.mean
    return max(float(d @ baseline.inv_covariance @ d), 0.0)


def msd_batch(baseline: BaselineModel, X) -> np.ndarray:
    D = np.asarray(X, dtype=float) - baseline.mean
    return np.maximum(np.einsum("ij,jk,ik->i", D, baseline.inv_covariance, D), 0.0)


def novelty_features(baselines: list[BaselineModel], record: TransmissibilityRecord) -> np.ndarray:
    return np.array([msd(b, window_slice(record, b.window)) for b in baselines], dtype=float)


def fit_baselines(magnitudes: np.ndarray, windows: list[SpectralWindow],
                  ridge: float | None = None,
                  ridge_scale: float = RIDGE_SCALE) -> list[BaselineModel]:
    """One baseline per window from a stack of normal records (records, pairs, lines)."""
    return [fit_baseline(magnitudes[:, w.pair_index, w.line_lo:w.line_hi], w, ridge, ridge_scale)
            for w in windows]


def novelty_matrix(baselines: list[BaselineModel], magnitudes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`novelty_features` over a stack of records."""
    out = np.empty((magnitudes.shape[0], len(baselines)))
    for k, b in enumerate(baselines):
        w = b.window
        w.check(magnitudes.shape[1], magnitudes.shape[2])
        out[:, k] = msd_batch(b, magnitudes[:, w.pair_index, w.line_lo:w.line_hi])
    return out


def save_baselines(baselines: list[BaselineModel], path) -> None:
    with open(path, "w") as fh:
        json.dump([b.to_dict() for b in baselines], fh)


def load_baselines(path) -> list[BaselineModel]:
    with open(path) as fh:
        return [BaselineModel.from_dict(d) for d in json.load(fh)]
