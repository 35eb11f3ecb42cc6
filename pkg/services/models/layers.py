"""
services/models/layers.py
Stateless layer ops over a shared parameter dict. Each layer owns a name prefix; forward
returns (output, cache) and backward writes into a gradient dict and returns the input
gradient. Running statistics live in a separate buffer dict and are only changed by an
explicit ``update_running`` call.
"""

from enum import Enum
from typing import Dict, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / max(1, fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """y = x @ W + b with W stored as (n_in, n_out)."""

    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out
        self.w = f"{name}.W"
        self.b = f"{name}.b"

    def init(self, params: Params, rng: np.random.Generator) -> None:
        params[self.w] = xavier_uniform(rng, self.n_in, self.n_out)
        params[self.b] = np.zeros(self.n_out)

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x @ params[self.w] + params[self.b], x

    def backward(self, params: Params, cache: np.ndarray, dy: np.ndarray, grads: Params) -> np.ndarray:
        grads[self.w] = cache.T @ dy
        grads[self.b] = dy.sum(axis=0)
        return dy @ params[self.w].T


class BatchNorm:
    """
    TRAIN normalises with batch statistics, EVAL with the running ones. Running variance
    is tracked unbiased; the batch variance used for normalisation is the biased one.
    """

    def __init__(self, name: str, n_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.n_features = n_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = f"{name}.gamma"
        self.beta = f"{name}.beta"
        self.running_mean = f"{name}.running_mean"
        self.running_var = f"{name}.running_var"

    def init(self, params: Params, buffers: Params) -> None:
        params[self.gamma] = np.ones(self.n_features)
        params[self.beta] = np.zeros(self.n_features)
        buffers[self.running_mean] = np.zeros(self.n_features)
        buffers[self.running_var] = np.ones(self.n_features)

    def forward(self, params: Params, buffers: Params, x: np.ndarray, mode: Mode):
        if mode == Mode.TRAIN:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
        else:
            mean = buffers[self.running_mean]
            var = buffers[self.running_var]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        y = params[self.gamma] * xhat + params[self.beta]
        return y, (mode, xhat, inv_std, mean, var, x.shape[0])

    def backward(self, params: Params, cache, dy: np.ndarray, grads: Params) -> np.ndarray:
        mode, xhat, inv_std, _, _, n = cache
        grads[self.gamma] = (dy * xhat).sum(axis=0)
        grads[self.beta] = dy.sum(axis=0)
        dxhat = dy * params[self.gamma]
        if mode != Mode.TRAIN:
            return dxhat * inv_std
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def update_running(self, buffers: Params, cache) -> None:
        mode, _, _, mean, var, n = cache
        if mode != Mode.TRAIN:
            return
        unbiased = var * n / (n - 1) if n > 1 else var
        m = self.momentum
        buffers[self.running_mean] = (1 - m) * buffers[self.running_mean] + m * mean
        buffers[self.running_var] = (1 - m) * buffers[self.running_var] + m * unbiased


def relu(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return np.where(mask, x, 0.0), mask
