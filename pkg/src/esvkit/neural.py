"""Multilayer perceptron trained by full-batch backpropagation, plus
weight-based input importance.

Hidden layers use tanh, the output layer is linear. Inputs and the target
are standardised with statistics taken from the training split only, and
the network works in standardised units throughout.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BadShape, DegenerateFeature, NonfiniteLoss, ShapeMismatch, ZeroWeights

DEFAULT_HIDDEN = 30
# small initial weights so importance reflects what training learned, not the draw
# initial weights ~ U(-INIT_SCALE / sqrt(fan_in), +INIT_SCALE / sqrt(fan_in)), biases 0
INIT_SCALE = 0.1


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (out, in)
    biases: list[np.ndarray]
    seed: int
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    input_names: tuple[str, ...] = ()
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if not self.input_names:
            self.input_names = tuple(f"x{i + 1}" for i in range(self.layer_sizes[0]))
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[l + 1], self.layer_sizes[l]) or b.shape != (self.layer_sizes[l + 1],):
                raise BadShape(f"layer {l} parameters do not chain with sizes {self.layer_sizes}")
        if (np.asarray(self.x_std) <= 0).any() or self.y_std <= 0:
            raise DegenerateFeature("normalisation standard deviations must be positive")

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "seed": self.seed,
            "input_names": list(self.input_names),
            "normalization": {
                "x_mean": self.x_mean.tolist(),
                "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean,
                "y_std": self.y_std,
            },
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        norm = d["normalization"]
        return cls(
            tuple(d["layer_sizes"]),
            [np.array(w, dtype=float) for w in d["weights"]],
            [np.array(b, dtype=float) for b in d["biases"]],
            int(d["seed"]),
            np.array(norm["x_mean"], dtype=float),
            np.array(norm["x_std"], dtype=float),
            float(norm["y_mean"]),
            float(norm["y_std"]),
            tuple(d.get("input_names", ())),
            d.get("activation", "tanh"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must be nonnegative and sum to 1")


def split_indices(n: int, split: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` with the split seed and cut it into train/val/test.

    Partition sizes are rounded from the fractions, then adjusted so that no
    partition is empty whenever ``n >= 3``.
    """
    perm = np.random.default_rng(split.seed).permutation(n)
    n_val = int(round(split.val * n))
    n_test = int(round(split.test * n))
    if n >= 3:
        n_val, n_test = max(n_val, 1), max(n_test, 1)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{n} samples leave no training data")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:])


def mlp_init(layer_sizes: Sequence[int], seed: int = 0, input_names: Sequence[str] = ()) -> MlpModel:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise BadShape(f"need at least two layers of positive width, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = INIT_SCALE / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, seed, np.zeros(sizes[0]), np.ones(sizes[0]), 0.0, 1.0, tuple(input_names))


def _forward(weights, biases, z):
    """Run standardised inputs ``z`` (n, in) through the net; keep activations."""
    acts = [z]
    a = z
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        a = a @ w.T + b
        if l != last:
            a = np.tanh(a)
        acts.append(a)
    return acts


def _standardize(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.layer_sizes[0]:
        raise ShapeMismatch(f"expected {model.layer_sizes[0]} inputs, got {x.shape[-1]}")
    return (x - model.x_mean) / model.x_std


def mlp_forward(model: MlpModel, x):
    """Predict in original target units. ``x`` is one sample or an (n, in) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = _standardize(model, np.atleast_2d(x))
    out = _forward(model.weights, model.biases, z)[-1]
    pred = model.y_mean + model.y_std * out
    if model.layer_sizes[-1] == 1:
        pred = pred[:, 0]
    return pred[0] if single else pred


def _loss_and_grads(weights, biases, z, t):
    """Mean squared error and its gradients for standardised data."""
    acts = _forward(weights, biases, z)
    n = z.shape[0]
    err = acts[-1] - t
    loss = float((err**2).sum() / n)
    delta = 2.0 * err / n
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ weights[l]) * (1.0 - acts[l] ** 2)
    return loss, gw, gb


def _targets(model: MlpModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    y = y.reshape(len(y), -1)
    return (y - model.y_mean) / model.y_std


def mse(model: MlpModel, x, y) -> float:
    pred = np.asarray(mlp_forward(model, x), dtype=float).reshape(len(y), -1)
    return float(((pred - np.asarray(y, dtype=float).reshape(len(y), -1)) ** 2).mean())


def r2_score(model: MlpModel, x, y) -> float:
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    pred = np.asarray(mlp_forward(model, x), dtype=float).reshape(y.shape)
    ss_tot = float(((y - y.mean(axis=0)) ** 2).sum())
    return 1.0 - float(((pred - y) ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0


@dataclass
class TrainResult:
    model: MlpModel
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    train_mse: float
    val_mse: float
    test_mse: float
    test_r2: float
    split: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)

    @property
    def final_train_mse(self) -> float:
        """Training MSE after the last epoch, in target units (not the snapshot's)."""
        return self.train_loss[-1] * self.model.y_std**2


def mlp_train(model: MlpModel, x, y, split: SplitSpec | None = None, epochs: int = 2000,
              learning_rate: float = 0.05) -> TrainResult:
    """Full-batch gradient descent on MSE over the training split.

    Loss histories hold the standardised-unit loss at the parameters after
    0, 1, ..., ``epochs`` updates. The returned model is the snapshot with the
    lowest validation loss; the test split is only used for the final
    report. With ``epochs=0`` the model, including its normalisation, comes
    back unchanged. Reported MSEs are in original target units.
    """
    split = split or SplitSpec()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0] or len(y) != len(x):
        raise ShapeMismatch(f"data of shape {x.shape} does not fit a {model.layer_sizes[0]}-input model")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("training data must be finite")
    if len(x) < 7:
        raise ValueError(f"need at least 7 samples, got {len(x)}")
    tr, va, te = split_indices(len(x), split)
    trained = copy.deepcopy(model)

    if epochs > 0:
        x_std = x[tr].std(axis=0)
        flat = [trained.input_names[j] for j in np.flatnonzero(x_std == 0)]
        if flat:
            raise DegenerateFeature(f"features with zero variance in the training split: {flat}")
        y_std = float(y[tr].std())
        if y_std == 0:
            raise DegenerateFeature("target has zero variance in the training split")
        trained.x_mean, trained.x_std = x[tr].mean(axis=0), x_std
        trained.y_mean, trained.y_std = float(y[tr].mean()), y_std

    z_tr, t_tr = _standardize(trained, x[tr]), _targets(trained, y[tr])
    z_va, t_va = _standardize(trained, x[va]), _targets(trained, y[va])
    weights = [w.copy() for w in trained.weights]
    biases = [b.copy() for b in trained.biases]
    train_hist, val_hist = [], []
    best = (np.inf, 0, weights, biases)
    for epoch in range(epochs + 1):
        loss, gw, gb = _loss_and_grads(weights, biases, z_tr, t_tr)
        val = float(((_forward(weights, biases, z_va)[-1] - t_va) ** 2).mean()) if len(va) else loss
        if not (np.isfinite(loss) and np.isfinite(val)):
            raise NonfiniteLoss(f"loss became non-finite at epoch {epoch}; lower the learning rate")
        train_hist.append(loss)
        val_hist.append(val)
        if val < best[0]:
            best = (val, epoch, [w.copy() for w in weights], [b.copy() for b in biases])
        if epoch == epochs:
            break
        for l in range(len(weights)):
            weights[l] -= learning_rate * gw[l]
            biases[l] -= learning_rate * gb[l]
    if epochs > 0:
        trained.weights, trained.biases = best[2], best[3]
    return TrainResult(
        trained, train_hist, val_hist, best[1],
        mse(trained, x[tr], y[tr]),
        mse(trained, x[va], y[va]) if len(va) else float("nan"),
        mse(trained, x[te], y[te]) if len(te) else float("nan"),
        r2_score(trained, x[te], y[te]) if len(te) > 1 else float("nan"),
        (tr, va, te),
    )


def _sample_loss(weights, biases, z, t):
    return float(((_forward(weights, biases, z)[-1] - t) ** 2).mean())


def gradient_check(model: MlpModel, x, y, step: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest relative gap between backprop and central differences.

    The gap for one parameter is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps parameters whose true gradient is ~0 from reporting noise.
    """
    z = _standardize(model, np.atleast_2d(np.asarray(x, dtype=float)))
    t = _targets(model, np.atleast_1d(np.asarray(y, dtype=float)).reshape(len(z), -1))
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    _, gw, gb = _loss_and_grads(weights, biases, z, t)
    worst = 0.0
    for params, grads in ((weights, gw), (biases, gb)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + step
                up = _sample_loss(weights, biases, z, t)
                p[idx] = orig - step
                down = _sample_loss(weights, biases, z, t)
                p[idx] = orig
                numeric = (up - down) / (2.0 * step)
                analytic = g[idx]
                gap = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
                worst = max(worst, gap)
    return worst


def normalized_importance(model: MlpModel, method: str = "garson") -> dict[str, float]:
    """Relative importance of each input in percent, summing to 100.

    ``garson`` partitions each hidden unit's absolute output weight among
    inputs in proportion to their absolute incoming weights.
    ``connection-weight`` sums signed input-hidden-output weight products and
    normalises their magnitudes.
    """
    if len(model.weights) != 2:
        raise BadShape("importance needs a single-hidden-layer network")
    w_in = model.weights[0]  # (hidden, inputs)
    w_out = model.weights[1]  # (outputs, hidden)
    if method == "garson":
        abs_in = np.abs(w_in)
        col = abs_in.sum(axis=1, keepdims=True)
        share = np.divide(abs_in, col, out=np.zeros_like(abs_in), where=col > 0)
        raw = (share * np.abs(w_out).sum(axis=0)[:, None]).sum(axis=0)
    elif method in ("connection-weight", "connection_weight"):
        raw = np.abs((w_out @ w_in).sum(axis=0))
    else:
        raise ValueError(f"unknown importance method {method!r}")
    total = raw.sum()
    if total == 0:
        raise ZeroWeights("network weights carry no input signal")
    pct = raw / total * 100.0
    return dict(zip(model.input_names, pct.tolist()))
