"""Fully connected Q-network (ReLU hidden layers, linear output) in numpy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class QNetwork:
    """input -> hidden... -> 1 with rectified hidden units.

    Parameters are stored as ``weights[k]`` of shape ``(fan_in, fan_out)`` and
    ``biases[k]`` of shape ``(fan_out,)``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer widths do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have a single unit")

    @classmethod
    def initialize(cls, n_inputs: int, hidden: Sequence[int] = (128, 64),
                   rng: np.random.Generator | int | None = 0) -> "QNetwork":
        """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(rng)
        widths = [n_inputs, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.n_inputs] + [w.shape[1] for w in self.weights]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def scaled(self, factor: float) -> "QNetwork":
        """Network whose output is multiplied by ``factor``."""
        net = self.copy()
        net.weights[-1] *= factor
        net.biases[-1] *= factor
        return net

    def forward(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.n_inputs:
            raise ValueError(f"input width {h.shape[1]} != network input width {self.n_inputs}")
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        out = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        return float(out[0]) if single else out

    __call__ = forward

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, delta: float = 1.0,
                       sample_weight: np.ndarray | None = None):
        """Weighted mean Huber loss and its gradients w.r.t. every parameter."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        w_s = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        w_s = w_s / w_s.sum()

        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        pred = (h @ self.weights[-1] + self.biases[-1])[:, 0]

        err = pred - y
        abs_err = np.abs(err)
        quad = abs_err <= delta
        losses = np.where(quad, 0.5 * err**2, delta * (abs_err - 0.5 * delta))
        loss = float(np.dot(w_s, losses))

        g = (np.where(quad, err, delta * np.sign(err)) * w_s)[:, None]
        gw, gb = [None] * len(self.weights), [None] * len(self.biases)
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = acts[k].T @ g
            gb[k] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k].T) * (acts[k] > 0)
        return loss, gw, gb

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QNetwork":
        widths = d["widths"]
        weights = [np.asarray(w, dtype=float).reshape(a, b)
                   for w, a, b in zip(d["weights"], widths[:-1], widths[1:])]
        return cls(weights, [np.asarray(b, dtype=float) for b in d["biases"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def huber_loss(pred, target, delta: float = 1.0):
    if delta <= 0:
        raise ValueError("delta must be positive")
    err = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    out = np.where(err <= delta, 0.5 * err**2, delta * (err - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    huber_delta: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, net: QNetwork, cfg: TrainConfig):
        self.cfg = cfg
        self.params = net.weights + net.biases
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.k = 0

    def update(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.k += 1
        corr1 = 1 - c.beta1**self.k
        corr2 = 1 - c.beta2**self.k
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.eps)


def train_network(
    net: QNetwork,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    sample_weight: np.ndarray | None = None,
    rng: np.random.Generator | int | None = 0,
) -> list[float]:
    """Fit ``net`` in place by mini-batch Adam on the weighted Huber loss.

    Returns the mean training loss of every epoch.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    sw = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    rng = np.random.default_rng(rng)
    opt = Adam(net, cfg)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total, mass = 0.0, 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = net.loss_and_grads(x[idx], y[idx], cfg.huber_delta, sw[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {start}")
            opt.update(gw + gb)
            batch_mass = sw[idx].sum()
            total += loss * batch_mass
            mass += batch_mass
        history.append(total / mass)
    return history
