"""
services/models/training.py
Mini-batch training with early stopping on validation AUC, and a finite-difference
gradient check over every parameter.

Loss: mean (optionally class-weighted) binary cross-entropy on the logits, plus
l2 · Σ‖W‖² over weight matrices (biases and batch-norm scales are not decayed).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from services.evaluation.metrics import auc
from services.models.layers import Mode
from services.models.networks import Classifier, build_model
from services.models.optim import make_optimizer
from shared.exceptions import EmptySplitError, NonFiniteLossError, SplitOverlapError
from shared.models.models import ModelDataset, ModelInput
from shared.schemas.schemas import TrainConfig
from shared.utils.files import write_csv

logger = logging.getLogger(__name__)

CURVE_FILE = "training_curve.csv"
REL_ERROR_FLOOR = 1e-8


# ── Loss ──────────────────────────────────────────────────────

def bce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, logits) - labels * logits


def class_weights(labels: np.ndarray, enabled: bool = True) -> np.ndarray:
    """Inverse-frequency sample weights with mean 1; ones when disabled."""
    labels = np.asarray(labels)
    if not enabled:
        return np.ones(labels.shape[0])
    n = labels.shape[0]
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(n)
    return np.where(labels == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def objective(
    model: Classifier,
    hourly: np.ndarray,
    static: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    mode: Mode = Mode.TRAIN,
):
    """(data loss, l2 term, logits, cache). The two loss terms are kept apart for the gradient check."""
    logits, cache = model.forward(hourly, static, mode)
    data = float(np.mean(weights * bce(logits, labels)))
    reg = model.config.l2 * float(sum(np.sum(model.params[n] ** 2) for n in model.weight_names))
    return data, reg, logits, cache


def loss_and_grads(model: Classifier, hourly, static, labels, weights, mode: Mode = Mode.TRAIN):
    data, reg, logits, cache = objective(model, hourly, static, labels, weights, mode)
    dlogits = weights * (expit(logits) - labels) / labels.shape[0]
    grads = model.backward(cache, dlogits)
    for name in model.weight_names:
        grads[name] = grads[name] + 2.0 * model.config.l2 * model.params[name]
    return data + reg, grads, cache


# ── History ───────────────────────────────────────────────────

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_auc: float
    val_loss: float


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    selection: str = "val_auc"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.epoch, r.loss, r.val_auc) for r in self.records], columns=["epoch", "loss", "val_auc"]
        )

    def write(self, out_dir: Path) -> Path:
        return write_csv(self.to_frame(), Path(out_dir) / CURVE_FILE)

    @property
    def best(self) -> Optional[EpochRecord]:
        return next((r for r in self.records if r.epoch == self.best_epoch), None)


@dataclass
class TrainResult:
    model: Classifier
    history: TrainingHistory


# ── Training ──────────────────────────────────────────────────

def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive slices of ``order``; a trailing batch of one joins the previous batch."""
    batches = [order[i:i + batch_size] for i in range(0, order.shape[0], batch_size)]
    if len(batches) > 1 and batches[-1].shape[0] == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _validation_score(model: Classifier, val: ModelDataset, use_auc: bool) -> Tuple[float, float, float]:
    logits, _ = model.forward(val.hourly, val.static, Mode.EVAL)
    probs = expit(logits)
    val_loss = float(np.mean(bce(logits, val.labels)))
    val_auc = auc(probs, val.labels) if use_auc else float("nan")
    return (val_auc if use_auc else -val_loss), val_auc, val_loss


def train(
    train_set: ModelDataset,
    val_set: ModelDataset,
    kind: str,
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    """
    Returns the parameters of the epoch with the best validation AUC. When the validation
    split holds a single class the selection falls back to the lowest validation loss.
    """
    config = config or TrainConfig()
    if len(train_set) == 0:
        raise EmptySplitError("training split is empty")
    if len(val_set) == 0:
        raise EmptySplitError("validation split is empty")
    if set(train_set.stay_ids) & set(val_set.stay_ids):
        raise SplitOverlapError("training and validation splits share stays")

    model = build_model(kind, train_set.n_features, train_set.n_static, config)
    optimizer = make_optimizer(config)
    rng = np.random.default_rng([config.seed, 1])
    labels = train_set.labels.astype(np.float64)
    weights = class_weights(train_set.labels, config.class_weighting)

    use_auc = 0 < int(val_set.labels.sum()) < len(val_set)
    history = TrainingHistory(selection="val_auc" if use_auc else "val_loss")
    if not use_auc:
        logger.warning("Train: validation split has a single class; selecting epochs by validation loss")

    best_score = -np.inf
    best_model = model.copy()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(rng.permutation(len(train_set)), config.batch_size)):
            loss, grads, cache = loss_and_grads(
                model, train_set.hourly[idx], train_set.static[idx], labels[idx], weights[idx]
            )
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss)
            model.update_running(cache)
            optimizer.step(model.params, grads)
            total += loss * idx.shape[0]

        score, val_auc, val_loss = _validation_score(model, val_set, use_auc)
        history.records.append(EpochRecord(epoch, total / len(train_set), val_auc, val_loss))
        logger.debug(f"Train {model.kind} epoch {epoch}: loss={total / len(train_set):.5f} val_auc={val_auc:.4f}")
        if score > best_score:
            best_score = score
            best_model = model.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best = history.best
    logger.info(
        f"Train {model.kind}: {len(history.records)} epochs, best epoch {history.best_epoch} "
        f"(val_auc={best.val_auc:.4f}, val_loss={best.val_loss:.4f})"
    )
    return TrainResult(model=best_model, history=history)


# ── Gradient check ────────────────────────────────────────────

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    n_kinks: int


def _as_batch(sample: Union[ModelDataset, ModelInput]):
    if isinstance(sample, ModelInput):
        return sample.hourly[None], sample.static[None], np.array([float(sample.label)])
    return sample.hourly, sample.static, sample.labels.astype(np.float64)


def gradient_check_report(
    kind: str,
    sample: Union[ModelDataset, ModelInput],
    config: Optional[TrainConfig] = None,
    *,
    epsilon: float = 1e-4,
    model: Optional[Classifier] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compares backprop against central differences for every parameter entry, in TRAIN
    mode. Without a model, a fresh one is built and its parameters jittered so no
    gradient starts at a symmetric point. Entries whose perturbation flips a ReLU are
    skipped and counted as kinks. Batch-norm curvature grows as the batch shrinks; use
    batches of a few dozen stays to stay inside 1e-4 at the default epsilon.
    """
    hourly, static, labels = _as_batch(sample)
    hourly = np.array(hourly, dtype=np.float64)
    static = np.array(static, dtype=np.float64)
    if model is None:
        model = build_model(kind, hourly.shape[2] // 3, static.shape[1], config)
        rng = np.random.default_rng(seed)
        for name, value in model.params.items():
            model.params[name] = value + rng.normal(0.0, 0.1, size=value.shape)
    weights = np.ones(labels.shape[0])

    _, grads, cache = loss_and_grads(model, hourly, static, labels, weights)
    base_masks = model.relu_masks(cache)

    worst, worst_name, checked, kinks = 0.0, "", 0, 0
    for name in sorted(model.params):
        model.params[name] = np.ascontiguousarray(model.params[name], dtype=np.float64)
        flat = model.params[name].reshape(-1)
        bp_flat = np.asarray(grads[name]).reshape(-1)
        for i in range(flat.shape[0]):
            old = flat[i]
            flat[i] = old + epsilon
            d_plus, r_plus, _, c_plus = objective(model, hourly, static, labels, weights)
            flat[i] = old - epsilon
            d_minus, r_minus, _, c_minus = objective(model, hourly, static, labels, weights)
            flat[i] = old
            if not (np.array_equal(model.relu_masks(c_plus), base_masks)
                    and np.array_equal(model.relu_masks(c_minus), base_masks)):
                kinks += 1
                continue
            fd = (d_plus - d_minus) / (2 * epsilon) + (r_plus - r_minus) / (2 * epsilon)
            bp = float(bp_flat[i])
            rel = abs(bp - fd) / max(REL_ERROR_FLOOR, abs(bp) + abs(fd))
            checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    if kinks:
        logger.debug(f"Gradient check skipped {kinks} entries at ReLU kinks")
    return GradCheckReport(max_rel_error=worst, worst=worst_name, n_checked=checked, n_kinks=kinks)


def gradient_check(
    kind: str,
    sample: Union[ModelDataset, ModelInput],
    config: Optional[TrainConfig] = None,
    *,
    epsilon: float = 1e-4,
    model: Optional[Classifier] = None,
    seed: int = 0,
) -> float:
    """Max relative error |g_bp − g_fd| / max(1e-8, |g_bp| + |g_fd|) over all parameters."""
    return gradient_check_report(kind, sample, config, epsilon=epsilon, model=model, seed=seed).max_rel_error
