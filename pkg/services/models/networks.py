"""
services/models/networks.py
The two classifiers. Both map (hourly N × 24 × 3F, static N × S) to one logit per stay.

  logistic  sigmoid(w · [flattened hourly | static] + b), zero-initialised
  rnn       Elman tanh cell over the 24 hours, oldest first; the final hidden state is
            concatenated with a 4 × 32 static MLP (batch-norm → affine → ReLU per layer)
            and fed to a single affine head
"""

import copy
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import expit

from services.features.hourly import flatten_batch
from services.models.layers import BatchNorm, Dense, Mode, Params, relu, xavier_uniform
from shared.exceptions import DimensionMismatchError
from shared.models.models import WINDOW_HOURS, ModelInput
from shared.schemas.schemas import ModelKind, TrainConfig

MLP_DEPTH = 4
MLP_WIDTH = 32


class Classifier:
    kind: str = ""

    def __init__(self, n_features: int, n_static: int, config: Optional[TrainConfig] = None):
        self.n_features = n_features
        self.n_static = n_static
        self.config = config or TrainConfig()
        self.params: Params = {}
        self.buffers: Params = {}

    @property
    def input_dim(self) -> int:
        return WINDOW_HOURS * 3 * self.n_features + self.n_static

    @property
    def weight_names(self) -> List[str]:
        raise NotImplementedError

    def check_dims(self, hourly: np.ndarray, static: np.ndarray) -> None:
        expected = (WINDOW_HOURS, 3 * self.n_features)
        if hourly.ndim != 3 or hourly.shape[1:] != expected:
            raise DimensionMismatchError(
                f"{self.kind} model expects hourly N x {expected[0]} x {expected[1]}, got {hourly.shape}"
            )
        if static.ndim != 2 or static.shape[1] != self.n_static or static.shape[0] != hourly.shape[0]:
            raise DimensionMismatchError(
                f"{self.kind} model expects static N x {self.n_static}, got {static.shape}"
            )

    def forward(self, hourly: np.ndarray, static: np.ndarray, mode: Mode = Mode.EVAL):
        raise NotImplementedError

    def backward(self, cache, dlogits: np.ndarray) -> Params:
        raise NotImplementedError

    def update_running(self, cache) -> None:
        """Fold the batch statistics of a TRAIN forward pass into the running buffers."""

    def relu_masks(self, cache) -> np.ndarray:
        return np.zeros(0, dtype=bool)

    def copy(self) -> "Classifier":
        return copy.deepcopy(self)

    def state(self) -> Dict[str, np.ndarray]:
        out = {f"param:{k}": v for k, v in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> "Classifier":
        for key, value in arrays.items():
            group, name = key.split(":", 1)
            target = self.params if group == "param" else self.buffers
            if name not in target:
                raise DimensionMismatchError(f"unexpected tensor '{name}' for a {self.kind} model")
            if target[name].shape != value.shape:
                raise DimensionMismatchError(
                    f"tensor '{name}' has shape {value.shape}, model expects {target[name].shape}"
                )
            target[name] = np.array(value, dtype=np.float64)
        return self


# ── Logistic regression ───────────────────────────────────────

class LogisticModel(Classifier):
    kind = ModelKind.LOGISTIC.value

    def __init__(self, n_features: int, n_static: int, config: Optional[TrainConfig] = None):
        super().__init__(n_features, n_static, config)
        self.params = {"w": np.zeros(self.input_dim), "b": np.zeros(1)}

    @property
    def weight_names(self) -> List[str]:
        return ["w"]

    def forward(self, hourly: np.ndarray, static: np.ndarray, mode: Mode = Mode.EVAL):
        self.check_dims(hourly, static)
        x = flatten_batch(hourly, static)
        return x @ self.params["w"] + self.params["b"][0], x

    def backward(self, cache: np.ndarray, dlogits: np.ndarray) -> Params:
        return {"w": cache.T @ dlogits, "b": np.array([dlogits.sum()])}


# ── RNN + static MLP ──────────────────────────────────────────

class _RnnCache(NamedTuple):
    hourly: np.ndarray
    states: List[np.ndarray]          # h_0 … h_T
    mlp: List[Tuple[tuple, np.ndarray, np.ndarray]]
    head: np.ndarray


class RnnModel(Classifier):
    kind = ModelKind.RNN.value

    def __init__(self, n_features: int, n_static: int, config: Optional[TrainConfig] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__(n_features, n_static, config)
        rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.hidden_size = self.config.hidden_size
        width = 3 * n_features
        self.params["rnn.W_ih"] = xavier_uniform(rng, width, self.hidden_size)
        self.params["rnn.W_hh"] = xavier_uniform(rng, self.hidden_size, self.hidden_size)
        self.params["rnn.b"] = np.zeros(self.hidden_size)

        self.mlp: List[Tuple[BatchNorm, Dense]] = []
        n_in = n_static
        for k in range(MLP_DEPTH):
            bn = BatchNorm(f"mlp.{k}.bn", n_in, self.config.bn_momentum, self.config.bn_eps)
            dense = Dense(f"mlp.{k}.dense", n_in, MLP_WIDTH)
            bn.init(self.params, self.buffers)
            dense.init(self.params, rng)
            self.mlp.append((bn, dense))
            n_in = MLP_WIDTH
        self.head = Dense("head", self.hidden_size + MLP_WIDTH, 1)
        self.head.init(self.params, rng)

    @property
    def weight_names(self) -> List[str]:
        return ["rnn.W_ih", "rnn.W_hh"] + [dense.w for _, dense in self.mlp] + [self.head.w]

    def forward(self, hourly: np.ndarray, static: np.ndarray, mode: Mode = Mode.EVAL):
        self.check_dims(hourly, static)
        p = self.params
        h = np.zeros((hourly.shape[0], self.hidden_size))
        states = [h]
        for t in range(hourly.shape[1]):
            h = np.tanh(hourly[:, t] @ p["rnn.W_ih"] + h @ p["rnn.W_hh"] + p["rnn.b"])
            states.append(h)

        m = static
        mlp_cache = []
        for bn, dense in self.mlp:
            y, bn_cache = bn.forward(p, self.buffers, m, mode)
            z, dense_cache = dense.forward(p, y)
            m, mask = relu(z)
            mlp_cache.append((bn_cache, dense_cache, mask))

        out, head_cache = self.head.forward(p, np.concatenate([h, m], axis=1))
        return out[:, 0], _RnnCache(hourly, states, mlp_cache, head_cache)

    def backward(self, cache: _RnnCache, dlogits: np.ndarray) -> Params:
        p = self.params
        grads: Params = {}
        djoint = self.head.backward(p, cache.head, dlogits[:, None], grads)
        dh = djoint[:, :self.hidden_size]
        dm = djoint[:, self.hidden_size:]

        for (bn, dense), (bn_cache, dense_cache, mask) in zip(reversed(self.mlp), reversed(cache.mlp)):
            dy = dense.backward(p, dense_cache, dm * mask, grads)
            dm = bn.backward(p, bn_cache, dy, grads)

        d_ih = np.zeros_like(p["rnn.W_ih"])
        d_hh = np.zeros_like(p["rnn.W_hh"])
        d_b = np.zeros_like(p["rnn.b"])
        for t in range(cache.hourly.shape[1] - 1, -1, -1):
            h = cache.states[t + 1]
            da = dh * (1.0 - h ** 2)
            d_ih += cache.hourly[:, t].T @ da
            d_hh += cache.states[t].T @ da
            d_b += da.sum(axis=0)
            dh = da @ p["rnn.W_hh"].T
        grads["rnn.W_ih"] = d_ih
        grads["rnn.W_hh"] = d_hh
        grads["rnn.b"] = d_b
        return grads

    def update_running(self, cache: _RnnCache) -> None:
        for (bn, _), (bn_cache, _, _) in zip(self.mlp, cache.mlp):
            bn.update_running(self.buffers, bn_cache)

    def relu_masks(self, cache: _RnnCache) -> np.ndarray:
        return np.concatenate([mask.ravel() for _, _, mask in cache.mlp])


# ── Construction and inference ────────────────────────────────

def build_model(kind: str, n_features: int, n_static: int, config: Optional[TrainConfig] = None) -> Classifier:
    kind = ModelKind(kind).value
    if kind == ModelKind.LOGISTIC.value:
        return LogisticModel(n_features, n_static, config)
    return RnnModel(n_features, n_static, config)


def predict_batch(model: Classifier, hourly: np.ndarray, static: np.ndarray) -> np.ndarray:
    hourly = np.asarray(hourly, dtype=np.float64)
    static = np.asarray(static, dtype=np.float64)
    if static.ndim == 1:
        static = static.reshape(hourly.shape[0], -1)
    logits, _ = model.forward(hourly, static, Mode.EVAL)
    return expit(logits)


def predict(model: Classifier, model_input: ModelInput) -> float:
    if model_input.n_features != model.n_features or model_input.n_static != model.n_static:
        raise DimensionMismatchError(
            f"input has F={model_input.n_features}, S={model_input.n_static}; "
            f"model expects F={model.n_features}, S={model.n_static}"
        )
    return float(predict_batch(model, model_input.hourly[None], model_input.static[None])[0])
