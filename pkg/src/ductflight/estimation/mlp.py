"""Learned (y, z) localizer: a small ReLU MLP trained with Adam on MSE."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyInput, TrainingDiverged

LAYER_SIZES = (13, 32, 16, 2)
INPUT_NAMES = ("tof0", "tof1", "tof2", "tof3", "tof4", "tof5", "tof6", "tof7", "tof_down",
               "vy", "vz", "roll", "pitch")
OUTPUT_NAMES = ("y", "z")
FORMAT = "ductflight.mlp"
FORMAT_VERSION = 1


@dataclass
class MlpModel:
    """Weights are stored (n_out, n_in); the forward pass is ``x @ W.T + b``."""

    weights: list
    biases: list
    input_mean: np.ndarray
    input_std: np.ndarray
    seed: Optional[int] = None
    duct_tag: str = ""
    duct_radius: Optional[float] = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.input_mean = np.asarray(self.input_mean, dtype=float)
        self.input_std = np.asarray(self.input_std, dtype=float)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0] or (k and w.shape[1] != self.weights[k - 1].shape[0]):
                raise ValueError(f"layer {k} shapes are inconsistent")
        if np.any(self.input_std <= 0):
            raise ValueError("normalisation stds must be positive")

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def zeros(cls, sizes: Sequence[int] = LAYER_SIZES) -> "MlpModel":
        ws = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        bs = [np.zeros(o) for o in sizes[1:]]
        return cls(ws, bs, np.zeros(sizes[0]), np.ones(sizes[0]))

    @classmethod
    def initialised(cls, rng: np.random.Generator, sizes: Sequence[int] = LAYER_SIZES, **kw) -> "MlpModel":
        ws = [rng.normal(0.0, math.sqrt(2.0 / i), size=(o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        bs = [np.zeros(o) for o in sizes[1:]]
        return cls(ws, bs, np.zeros(sizes[0]), np.ones(sizes[0]), **kw)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = (np.asarray(x, dtype=float) - self.input_mean) / self.input_std
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.input_mean.copy(), self.input_std.copy(), self.seed, self.duct_tag,
                        self.duct_radius)


def mlp_forward(model: MlpModel, inputs) -> tuple[float, float]:
    out = model.forward(np.asarray(inputs, dtype=float)[None, :])[0]
    return float(out[0]), float(out[1])


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """MSE over all outputs of the batch and its gradient per weight/bias."""
    h = (x - model.input_mean) / model.input_std
    acts = [h]
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    err = h - y
    loss = float(np.mean(err * err))
    g = 2.0 * err / err.size
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for k in range(last, -1, -1):
        gw[k] = g.T @ acts[k]
        gb[k] = g.sum(axis=0)
        if k:
            g = (g @ model.weights[k]) * (acts[k] > 0)
    return loss, gw, gb


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    test_fraction: float = 0.12
    seed: int = 0
    block: int = 500
    lr_final_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")

    @property
    def train_fraction(self) -> float:
        return 1.0 - self.test_fraction


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0
    seconds: float = 0.0


def split_indices(n: int, test_fraction: float, seed: int, block: int = 500):
    """Train/test split over contiguous blocks of rows.

    Dataset rows are time-ordered with each sample followed by its mirror, so
    splitting by blocks keeps near-duplicate neighbours on the same side.
    """
    rng = np.random.default_rng(seed)
    n_blocks = max(1, math.ceil(n / block))
    order = rng.permutation(n_blocks)
    n_test_blocks = int(round(test_fraction * n_blocks))
    test_blocks = np.zeros(n_blocks, dtype=bool)
    test_blocks[order[:n_test_blocks]] = True
    is_test = np.repeat(test_blocks, block)[:n]
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


def train_mlp(x: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig(),
              sizes: Sequence[int] = LAYER_SIZES, duct_tag: str = "", duct_radius: Optional[float] = None,
              progress=None) -> tuple[MlpModel, TrainReport]:
    """Fit the localizer; the returned model embeds its normalisation and seed."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise EmptyInput("empty training set")
    t0 = time.perf_counter()
    tr, te = split_indices(len(x), cfg.test_fraction, cfg.seed, cfg.block)
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.initialised(rng, sizes, seed=cfg.seed, duct_tag=duct_tag, duct_radius=duct_radius)
    xt, yt = x[tr], y[tr]
    mean = xt.mean(axis=0)
    std = xt.std(axis=0)
    model.input_mean = mean
    model.input_std = np.where(std > 1e-12, std, 1.0)

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    report = TrainReport(n_train=len(tr), n_test=len(te))
    n_batches = math.ceil(len(tr) / cfg.batch_size)
    total = cfg.epochs * n_batches
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(tr))
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, gw, gb = loss_and_grads(model, xt[idx], yt[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            step += 1
            # cosine decay towards lr_final_fraction of the base rate
            frac = cfg.lr_final_fraction + (1 - cfg.lr_final_fraction) * 0.5 * (1 + math.cos(math.pi * step / total))
            lr = cfg.learning_rate * frac
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for p, g, a, v in zip(params, gw + gb, m1, m2):
                a *= cfg.beta1
                a += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g * g
                p -= lr * (a / c1) / (np.sqrt(v / c2) + cfg.eps)
        train_loss = mse(model, xt, yt)
        test_loss = mse(model, x[te], y[te]) if len(te) else float("nan")
        if not math.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        report.train_loss.append(train_loss)
        report.test_loss.append(test_loss)
        if progress is not None:
            progress(epoch, train_loss, test_loss)
    report.seconds = time.perf_counter() - t0
    return model, report


def mse(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    err = model.forward(x) - y
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# model file

def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "layers": list(model.layer_sizes),
        "activation": "relu",
        "output_activation": "identity",
        "input_order": list(INPUT_NAMES),
        "output_order": list(OUTPUT_NAMES),
        "input_mean": [float(v) for v in model.input_mean],
        "input_std": [float(v) for v in model.input_std],
        "weights": [{"shape": list(w.shape), "data": [float(v) for v in w.ravel(order="C")]}
                    for w in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
        "seed": model.seed,
        "duct_tag": model.duct_tag,
        "duct_radius": model.duct_radius,
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')}")
    ws = [np.array(w["data"], dtype=float).reshape(w["shape"]) for w in d["weights"]]
    model = MlpModel(ws, d["biases"], d["input_mean"], d["input_std"], d.get("seed"),
                     d.get("duct_tag", ""), d.get("duct_radius"))
    if list(model.layer_sizes) != list(d["layers"]):
        raise ValueError("layer sizes do not match the weight shapes")
    return model


def save_model(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
