"""Two-layer perceptron written directly in numpy.

    y = softmax(W2 @ f1(W1 @ x + b1) + b2)

trained by full-batch gradient descent on the per-class binary
cross-entropy summed over output units and averaged over samples.  A model
whose first layer is frozen only ever updates ``W2`` and ``b2``.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DivergenceError, InputError

PROB_CLAMP = 1e-12

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "logistic": (lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)), lambda a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


@dataclass(eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    hidden_activation: str = "tanh"
    output_activation: str = "softmax"
    frozen_first_layer: bool = False

    def __post_init__(self):
        h, d = self.W1.shape
        c, h2 = self.W2.shape
        if self.b1.shape != (h,) or h2 != h or self.b2.shape != (c,):
            raise ConfigurationError(
                "inconsistent parameter shapes", field="W1",
                W1=[h, d], b1=list(self.b1.shape), W2=[c, h2], b2=list(self.b2.shape))
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}",
                                     field="hidden_activation")
        if self.output_activation != "softmax":
            raise ConfigurationError("only softmax outputs are supported",
                                     field="output_activation")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def trainable(self) -> tuple[str, ...]:
        return ("W2", "b2") if self.frozen_first_layer else ("W1", "b1", "W2", "b2")

    def n_trainable(self) -> int:
        return sum(self.params()[k].size for k in self.trainable())

    def copy(self) -> "MlpModel":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def to_dict(self) -> dict:
        d, h, c = self.dims
        return {
            "dims": [d, h, c],
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "frozen_first_layer": self.frozen_first_layer,
            **{k: v.ravel().tolist() for k, v in self.params().items()},
        }

    @classmethod
    def from_dict(cls, m: dict) -> "MlpModel":
        d, h, c = m["dims"]
        return cls(
            np.array(m["W1"], dtype=float).reshape(h, d),
            np.array(m["b1"], dtype=float).reshape(h),
            np.array(m["W2"], dtype=float).reshape(c, h),
            np.array(m["b2"], dtype=float).reshape(c),
            m.get("hidden_activation", "tanh"),
            m.get("output_activation", "softmax"),
            bool(m.get("frozen_first_layer", False)),
        )


def save_model(model: MlpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return MlpModel.from_dict(json.load(fh))


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    max_epochs: int = 1000
    early_stop_rel: float = 1e-3
    early_stop_patience: int = 5
    restarts: int = 5
    init_std: float = 0.5
    seed: int = 0
    hidden_activation: str = "tanh"

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0", field="learning_rate")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1", field="max_epochs")
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1", field="restarts")
        if not 0 <= self.early_stop_rel < 1:
            raise ConfigurationError("early_stop_rel must be in [0, 1)", field="early_stop_rel")
        if self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1",
                                     field="early_stop_patience")
        if not self.init_std > 0:
            raise ConfigurationError("init_std must be > 0", field="init_std")


@dataclass
class LossHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0  # 1-based epoch whose parameters were returned

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]


def init_random(d: int, h: int, c: int, init_std: float, rng: np.random.Generator,
                hidden_activation: str = "tanh") -> MlpModel:
    if min(d, h, c) < 1:
        raise ConfigurationError("layer sizes must be >= 1", field="dims")
    if not init_std > 0:
        raise ConfigurationError("init_std must be > 0", field="init_std")
    return MlpModel(
        rng.normal(0.0, init_std, (h, d)),
        rng.normal(0.0, init_std, h),
        rng.normal(0.0, init_std, (c, h)),
        rng.normal(0.0, init_std, c),
        hidden_activation,
    )


def linear_softmax(d: int, c: int, init_std: float, rng: np.random.Generator) -> MlpModel:
    """Input layer wired straight to the softmax layer.

    Encoded as a frozen identity first layer, so the same training code
    applies and only ``W2``/``b2`` (c x d, c) are learnt.
    """
    return MlpModel(np.eye(d), np.zeros(d),
                    rng.normal(0.0, init_std, (c, d)), rng.normal(0.0, init_std, c),
                    "identity", frozen_first_layer=True)


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def _as_batch(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.dims[0]:
        raise InputError(f"input has {X.shape[-1]} features, model expects {model.dims[0]}",
                         got=int(X.shape[-1]), expected=model.dims[0])
    if not np.all(np.isfinite(X)):
        raise InputError("input contains non-finite values")
    return X


def hidden(model: MlpModel, X) -> np.ndarray:
    X = _as_batch(model, X)
    return ACTIVATIONS[model.hidden_activation][0](X @ model.W1.T + model.b1)


def logits(model: MlpModel, X) -> np.ndarray:
    return hidden(model, X) @ model.W2.T + model.b2


def forward(model: MlpModel, X) -> np.ndarray:
    """Class probabilities for one input vector or a batch of rows."""
    return softmax(logits(model, X))


def predict(model: MlpModel, X):
    """Index of the most probable class; ``argmax`` resolves ties to the lowest index."""
    P = forward(model, X)
    return P.argmax(axis=-1)


def one_hot(labels, c: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    Y = np.zeros((labels.size, c))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def loss(P, Y) -> float:
    P = np.clip(np.asarray(P, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    Y = np.asarray(Y, dtype=float)
    return float(-np.sum(Y * np.log(P) + (1.0 - Y) * np.log(1.0 - P)) / P.shape[0])


def grad(model: MlpModel, X, Y) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`loss` w.r.t. the trainable parameters."""
    X = _as_batch(model, np.atleast_2d(X))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = X.shape[0]
    act, dact = ACTIVATIONS[model.hidden_activation]
    A = act(X @ model.W1.T + model.b1)
    P = softmax(A @ model.W2.T + model.b2)

    inside = (P > PROB_CLAMP) & (P < 1.0 - PROB_CLAMP)
    Pc = np.clip(P, PROB_CLAMP, 1.0 - PROB_CLAMP)
    dP = np.where(inside, -(Y / Pc - (1.0 - Y) / (1.0 - Pc)) / n, 0.0)
    # softmax Jacobian-vector product
    dZ = P * (dP - np.sum(dP * P, axis=1, keepdims=True))

    g = {"W2": dZ.T @ A, "b2": dZ.sum(axis=0)}
    if not model.frozen_first_layer:
        dH = (dZ @ model.W2) * dact(A)
        g["W1"] = dH.T @ X
        g["b1"] = dH.sum(axis=0)
    return g


def train(model: MlpModel, train_set, val_set, config: TrainConfig) -> tuple[MlpModel, LossHistory]:
    """Full-batch gradient descent with relative-improvement early stopping.

    ``train_set``/``val_set`` are ``(X, Y)`` with one-hot ``Y``.  Epoch ``e``
    applies one update and then records both losses.  Training stops after
    ``early_stop_patience`` consecutive epochs whose relative validation
    improvement is below ``early_stop_rel``; the parameters from the epoch
    with the lowest validation loss are returned.
    """
    config.validate()
    Xt, Yt = train_set
    Xv, Yv = val_set
    Xt = _as_batch(model, Xt)
    Xv = _as_batch(model, Xv)
    if Yt.shape[1] != model.dims[2] or Yv.shape[1] != model.dims[2]:
        raise InputError("label width does not match output layer",
                         got=int(Yt.shape[1]), expected=model.dims[2])

    with np.errstate(over="ignore", invalid="ignore"):
        return _descend(model.copy(), Xt, Yt, Xv, Yv, config)


def _descend(m: MlpModel, Xt, Yt, Xv, Yv, config: TrainConfig) -> tuple[MlpModel, LossHistory]:
    keys = m.trainable()
    hist = LossHistory()
    best, best_val = m.copy(), np.inf
    prev, stalled = None, 0
    for epoch in range(1, config.max_epochs + 1):
        g = grad(m, Xt, Yt)
        for k in keys:
            getattr(m, k)[...] -= config.learning_rate * g[k]
        tl = loss(forward(m, Xt), Yt)
        vl = loss(forward(m, Xv), Yv)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}",
                                  epoch=epoch, learning_rate=config.learning_rate)
        hist.train_loss.append(tl)
        hist.val_loss.append(vl)
        if vl < best_val:
            best, best_val, hist.best_epoch = m.copy(), vl, epoch
        if prev is not None:
            stalled = stalled + 1 if (prev - vl) / prev < config.early_stop_rel else 0
        prev = vl
        hist.stopped_epoch = epoch
        if stalled >= config.early_stop_patience:
            break
    return best, hist


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng([seed, restart])


def max_workers() -> int:
    n = int(os.environ.get("SHM_LOCATE_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def multi_restart_train(d: int, h: int, c: int, train_set, val_set,
                        config: TrainConfig) -> tuple[MlpModel, LossHistory]:
    """Best of ``config.restarts`` independent init+train runs (lowest validation loss)."""
    config.validate()

    def run(r):
        rng = restart_rng(config.seed, r)
        model = init_random(d, h, c, config.init_std, rng, config.hidden_activation)
        try:
            return train(model, train_set, val_set, config)
        except DivergenceError as exc:
            return exc

    workers = min(max_workers(), config.restarts)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(config.restarts)))
    else:
        results = [run(r) for r in range(config.restarts)]
    ok = [r for r in results if not isinstance(r, Exception)]
    if not ok:
        raise DivergenceError(f"all {config.restarts} restarts diverged",
                              restarts=config.restarts, learning_rate=config.learning_rate)
    # stable min: first restart wins ties
    return min(ok, key=lambda mh: mh[1].best_val_loss)


def freeze_transfer(source: MlpModel, c_target: int, init_std: float,
                    rng: np.random.Generator) -> MlpModel:
    """Copy the source's first layer and attach a fresh output layer."""
    if c_target < 2:
        raise ConfigurationError("c_target must be >= 2", field="c_target")
    h = source.dims[1]
    return MlpModel(source.W1.copy(), source.b1.copy(),
                    rng.normal(0.0, init_std, (c_target, h)), rng.normal(0.0, init_std, c_target),
                    source.hidden_activation, frozen_first_layer=True)
