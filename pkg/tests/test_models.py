"""
tests/test_models.py
Tests for the two classifiers: forward passes against hand-written references,
backprop against central differences, training loop behaviour and checkpoints.
"""

import numpy as np
import pytest
from scipy.special import expit

from services.evaluation.metrics import auc
from services.features.specs import load_featureset
from services.models.bundle import ModelBundle
from services.models.checkpoint import load_checkpoint, save_checkpoint
from services.models.layers import Mode
from services.models.networks import LogisticModel, RnnModel, build_model, predict, predict_batch
from services.models.optim import Adam
from services.models.training import _batches, class_weights, gradient_check_report, train
from shared.exceptions import (
    DimensionMismatchError,
    EmptySplitError,
    InputMissingError,
    NonFiniteLossError,
    SchemaError,
    SplitOverlapError,
)
from shared.models.models import ModelDataset, ModelInput
from shared.schemas.schemas import TrainConfig
from shared.utils.container import write_container


def _dataset(n: int = 6, n_features: int = 2, n_static: int = 3, seed: int = 0, prefix: str = "s",
             labels=None) -> ModelDataset:
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.arange(n) % 2
    return ModelDataset(
        hourly=rng.normal(size=(n, 24, 3 * n_features)),
        static=rng.normal(size=(n, n_static)),
        labels=np.asarray(labels),
        stay_ids=tuple(f"{prefix}{i}" for i in range(n)),
        buckets=("2008-2010",) * n,
    )


def _positive(n: int, seed: int) -> ModelDataset:
    """Positive inputs with every label 1, so no logistic gradient entry sits near zero."""
    rng = np.random.default_rng(seed)
    return ModelDataset(hourly=rng.uniform(0.1, 1.0, size=(n, 24, 6)), static=rng.uniform(0.1, 1.0, size=(n, 3)),
                        labels=np.ones(n, dtype=int), stay_ids=tuple(f"p{i}" for i in range(n)),
                        buckets=("2008-2010",) * n)


def _separable(n: int, seed: int, prefix: str) -> ModelDataset:
    """Label is the sign of the first value channel's mean."""
    rng = np.random.default_rng(seed)
    hourly = rng.normal(size=(n, 24, 3))
    labels = (hourly[:, :, 0].mean(axis=1) > 0).astype(int)
    hourly[:, :, 0] += np.where(labels == 1, 0.5, -0.5)[:, None]
    return ModelDataset(hourly=hourly, static=rng.normal(size=(n, 1)), labels=labels,
                        stay_ids=tuple(f"{prefix}{i}" for i in range(n)), buckets=("2008-2010",) * n)


# ── Forward passes ─────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_logistic_starts_at_one_half():
    """An untrained logistic model predicts one half."""
    data = _dataset()
    model = LogisticModel(2, 3)
    np.testing.assert_allclose(predict_batch(model, data.hourly, data.static), 0.5)


@pytest.mark.unit
def test_logistic_forward_matches_flat_dot_product():
    """The logistic forward pass is a sigmoid of the flat dot product."""
    data = _dataset()
    model = LogisticModel(2, 3)
    rng = np.random.default_rng(1)
    model.params["w"] = rng.normal(size=model.input_dim)
    model.params["b"] = np.array([0.3])

    x = data.item(0)
    flat = np.concatenate([x.hourly.reshape(-1), x.static])
    assert predict(model, x) == pytest.approx(float(expit(flat @ model.params["w"] + 0.3)))


@pytest.mark.unit
def test_rnn_forward_matches_reference_loop():
    """Oldest hour first, tanh cell, eval-mode static MLP on running statistics."""
    data = _dataset(n=3)
    model = RnnModel(2, 3, TrainConfig(hidden_size=5, seed=4))
    p = model.params

    def reference(hourly, static):
        h = np.zeros(5)
        for t in range(24):
            h = np.tanh(hourly[t] @ p["rnn.W_ih"] + h @ p["rnn.W_hh"] + p["rnn.b"])
        m = static
        for k in range(4):
            mean = model.buffers[f"mlp.{k}.bn.running_mean"]
            var = model.buffers[f"mlp.{k}.bn.running_var"]
            y = p[f"mlp.{k}.bn.gamma"] * (m - mean) / np.sqrt(var + 1e-5) + p[f"mlp.{k}.bn.beta"]
            m = np.maximum(y @ p[f"mlp.{k}.dense.W"] + p[f"mlp.{k}.dense.b"], 0.0)
        return float(np.concatenate([h, m]) @ p["head.W"][:, 0] + p["head.b"][0])

    logits, _ = model.forward(data.hourly, data.static, Mode.EVAL)
    for i in range(3):
        assert logits[i] == pytest.approx(reference(data.hourly[i], data.static[i]), rel=1e-10)


@pytest.mark.unit
def test_rnn_initialisation_depends_only_on_seed():
    """RNN weights are a function of the seed."""
    a = build_model("rnn", 2, 3, TrainConfig(seed=3, hidden_size=4))
    b = build_model("rnn", 2, 3, TrainConfig(seed=3, hidden_size=4))
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


@pytest.mark.unit
def test_predict_rejects_mismatched_input():
    """Inputs of the wrong width are rejected."""
    model = LogisticModel(2, 3)
    bad = ModelInput(hourly=np.zeros((24, 9)), static=np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        predict(model, bad)
    with pytest.raises(DimensionMismatchError):
        predict_batch(model, np.zeros((2, 24, 6)), np.zeros((2, 4)))


# ── Gradients ──────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_logistic_gradients_match_central_differences():
    """Every logistic gradient entry agrees with central differences."""
    report = gradient_check_report("logistic", _positive(6, seed=0), TrainConfig(l2=0.0), seed=1)
    assert report.n_checked == 24 * 6 + 3 + 1
    assert report.max_rel_error < 1e-5


@pytest.mark.unit
def test_rnn_gradients_match_central_differences():
    """Covers the recurrent cell, batch-norm in train mode, the MLP and the head."""
    config = TrainConfig(hidden_size=4, l2=1e-3)
    report = gradient_check_report("rnn", _dataset(n=32), config, seed=2)
    assert report.n_checked > 0
    assert report.max_rel_error < 1e-4, report.worst


@pytest.mark.unit
def test_class_weights_are_inverse_frequency_with_unit_mean():
    """Class weights are inverse class frequency scaled to mean one."""
    w = class_weights(np.array([1, 0, 0, 0]))
    assert w.tolist() == pytest.approx([2.0, 2 / 3, 2 / 3, 2 / 3])
    assert w.mean() == pytest.approx(1.0)
    assert class_weights(np.array([1, 0]), enabled=False).tolist() == [1.0, 1.0]
    assert class_weights(np.array([0, 0])).tolist() == [1.0, 1.0]


@pytest.mark.unit
def test_trailing_single_sample_joins_previous_batch():
    """A batch of one never trains alone; it joins the batch before it."""
    sizes = [b.shape[0] for b in _batches(np.arange(5), 2)]
    assert sizes == [2, 3]


@pytest.mark.unit
@pytest.mark.parametrize("n, batch_size, sizes", [
    (3, 2, [3]),
    (65, 64, [65]),
    (7, 3, [3, 4]),
    (6, 3, [3, 3]),
    (1, 64, [1]),
])
def test_batches_cover_every_sample_once(n, batch_size, sizes):
    """Every index lands in exactly one batch, in permutation order."""
    order = np.random.default_rng(0).permutation(n)
    batches = _batches(order, batch_size)
    assert [b.shape[0] for b in batches] == sizes
    np.testing.assert_array_equal(np.concatenate(batches), order)


@pytest.mark.unit
def test_adam_first_step_moves_by_learning_rate():
    """Adam's first step moves each parameter with a nonzero gradient by the learning rate."""
    params = {"w": np.array([1.0, 1.0, 1.0])}
    Adam(0.01).step(params, {"w": np.array([5.0, -0.2, 0.0])})
    np.testing.assert_allclose(params["w"], [0.99, 1.01, 1.0], atol=1e-6)


# ── Training ───────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_logistic_learns_a_separable_signal():
    """Training on a separable signal reaches high validation AUC and stops early."""
    config = TrainConfig(learning_rate=0.05, batch_size=16, max_epochs=30, patience=5, seed=0)
    result = train(_separable(120, 0, "t"), _separable(60, 1, "v"), "logistic", config)
    history = result.history

    assert history.selection == "val_auc"
    assert history.best.val_auc == max(r.val_auc for r in history.records)
    assert history.best.val_auc > 0.9
    assert len(history.records) <= history.best_epoch + config.patience


@pytest.mark.unit
def test_returned_model_is_the_best_epoch():
    """The returned model scores the best recorded validation AUC."""
    config = TrainConfig(learning_rate=0.05, batch_size=16, max_epochs=8, patience=8, seed=0)
    val = _separable(60, 1, "v")
    result = train(_separable(120, 0, "t"), val, "logistic", config)
    assert auc(predict_batch(result.model, val.hourly, val.static), val.labels) == pytest.approx(
        result.history.best.val_auc
    )


@pytest.mark.unit
def test_training_is_deterministic_for_a_seed():
    """Two runs with one seed give identical weights."""
    config = TrainConfig(hidden_size=4, max_epochs=2, batch_size=4, seed=9)
    runs = [train(_dataset(12, seed=0), _dataset(6, seed=1, prefix="v"), "rnn", config) for _ in range(2)]
    for name in runs[0].model.params:
        np.testing.assert_array_equal(runs[0].model.params[name], runs[1].model.params[name])


@pytest.mark.unit
def test_single_class_validation_selects_by_loss():
    """A single-class validation split selects epochs by loss."""
    val = _dataset(4, seed=1, prefix="v", labels=[0, 0, 0, 0])
    result = train(_dataset(8), val, "logistic", TrainConfig(max_epochs=3, patience=3))
    assert result.history.selection == "val_loss"
    assert all(np.isnan(r.val_auc) for r in result.history.records)


@pytest.mark.unit
def test_training_rejects_bad_splits():
    """Overlapping or empty splits are refused."""
    data = _dataset()
    with pytest.raises(SplitOverlapError):
        train(data, data.subset([0, 1]), "logistic")
    with pytest.raises(EmptySplitError):
        train(data.subset([]), data, "logistic")


@pytest.mark.unit
def test_non_finite_loss_aborts_training():
    """A non-finite loss stops training with exit code 2."""
    n = 6
    data = ModelDataset(hourly=np.full((n, 24, 3), 1e300), static=np.ones((n, 1)), labels=np.ones(n),
                        stay_ids=tuple(f"s{i}" for i in range(n)), buckets=("2008-2010",) * n)
    config = TrainConfig(optimizer="sgd", learning_rate=1e10, batch_size=2, l2=0.0)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError) as info:
        train(data, _dataset(4, n_features=1, n_static=1, prefix="v"), "logistic", config)
    assert info.value.epoch == 1
    assert info.value.exit_code == 2


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(5))
def test_noise_labels_stay_at_chance(seed):
    """Labels drawn independently of the inputs give a validation AUC near one half."""
    rng = np.random.default_rng(100 + seed)
    train_set = _dataset(600, seed=seed, prefix="t", labels=rng.integers(0, 2, size=600))
    val_set = _dataset(2000, seed=seed + 50, prefix="v", labels=rng.integers(0, 2, size=2000))
    config = TrainConfig(learning_rate=0.01, max_epochs=5, patience=5, seed=seed)
    result = train(train_set, val_set, "logistic", config)
    assert 0.45 <= result.history.best.val_auc <= 0.55


def _xor_in_time(n: int, seed: int, prefix: str) -> ModelDataset:
    """Spikes at hours 20 and 22 each appear with probability one half; label is their XOR."""
    rng = np.random.default_rng(seed)
    first, second = rng.random(n) < 0.5, rng.random(n) < 0.5
    hourly = np.zeros((n, 24, 3))
    hourly[:, :, 0] = rng.normal(scale=0.1, size=(n, 24))
    hourly[:, 20, 0] += 3.0 * first
    hourly[:, 22, 0] += 3.0 * second
    hourly[:, :, 1] = 1.0
    return ModelDataset(hourly=hourly, static=rng.normal(size=(n, 1)), labels=(first ^ second).astype(int),
                        stay_ids=tuple(f"{prefix}{i}" for i in range(n)), buckets=("2008-2010",) * n)


@pytest.mark.slow
def test_rnn_learns_xor_in_time_that_logistic_cannot():
    """Only the recurrent model separates a label that depends on two timed events jointly."""
    train_set, val_set = _xor_in_time(600, 0, "t"), _xor_in_time(400, 1, "v")

    logistic = train(train_set, val_set, "logistic",
                     TrainConfig(learning_rate=0.01, batch_size=32, max_epochs=10, patience=5, seed=0))
    rnn = train(train_set, val_set, "rnn",
                TrainConfig(hidden_size=16, learning_rate=0.01, batch_size=32, max_epochs=150, patience=30, seed=0))

    assert logistic.history.best.val_auc <= 0.6
    assert rnn.history.best.val_auc > 0.9


# ── Checkpoints ────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_checkpoint_restores_predictions(tmp_path):
    """A reloaded checkpoint predicts exactly like the saved model."""
    data = _dataset()
    model = RnnModel(2, 3, TrainConfig(hidden_size=4, seed=5))
    model.buffers["mlp.0.bn.running_mean"] = np.array([0.1, -0.2, 0.3])
    path = save_checkpoint(model, tmp_path / "model.bin")

    back = load_checkpoint(path)
    assert back.kind == "rnn"
    np.testing.assert_array_equal(predict_batch(back, data.hourly, data.static),
                                  predict_batch(model, data.hourly, data.static))


@pytest.mark.unit
def test_checkpoint_rejects_other_containers(tmp_path):
    """A feature container is not a checkpoint."""
    path = write_container(tmp_path / "features.bin", {"featureset": "dascena"}, {"hourly": np.zeros((1, 24, 3))})
    with pytest.raises(SchemaError):
        load_checkpoint(path)


@pytest.mark.unit
def test_checkpoint_tensor_shape_mismatch():
    """A tensor of the wrong shape is rejected on load."""
    model = LogisticModel(2, 3)
    with pytest.raises(DimensionMismatchError):
        model.load_state({"param:w": np.zeros(5)})


@pytest.mark.unit
def test_bundle_needs_every_file(tmp_path):
    """A model bundle with missing files is an input error."""
    with pytest.raises(InputMissingError):
        ModelBundle.load(tmp_path, load_featureset("dascena"))
