import math

import numpy as np
import pytest

from beamprint.errors import ConfigurationError, DataError, TrainingDivergenceError
from beamprint.features import FeatureConfig, FeatureSet, fit_normalizer
from beamprint.mlp import (
    AdamState,
    MlpConfig,
    MlpModel,
    adam_step,
    forward,
    init_adam,
    init_model,
    loss_and_gradients,
    mlp_config_from_dict,
    mlp_config_to_dict,
    mlp_from_dict,
    mlp_to_dict,
    predict,
    train,
)


def feature_set(values, labels):
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return FeatureSet(
        values=values,
        labels=labels,
        config=FeatureConfig(),
        skipped={},
        indices=np.arange(values.shape[0]),
    )


# ---------------------------------------------------------------------------
# initialization


def test_init_glorot_bounds():
    # 7 inputs, one hidden layer of 64: bound is sqrt(6/71)
    model = init_model(MlpConfig(hidden_layers=(64,)), input_width=7)
    bound = math.sqrt(6.0 / 71.0)
    assert bound == pytest.approx(0.2907, abs=5e-4)
    w = model.weights[0]
    assert w.shape == (7, 64)
    assert np.abs(w).max() <= bound
    # uniform fill should get close to the bound with 448 draws
    assert np.abs(w).max() > 0.9 * bound
    out = model.weights[1]
    assert out.shape == (64, 2)
    assert np.abs(out).max() <= math.sqrt(6.0 / 66.0)
    assert all(np.all(b == 0.0) for b in model.biases)


def test_init_deterministic_in_seed():
    a = init_model(MlpConfig(rng_seed=5), input_width=9)
    b = init_model(MlpConfig(rng_seed=5), input_width=9)
    c = init_model(MlpConfig(rng_seed=6), input_width=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not all(np.array_equal(x, y) for x, y in zip(a.weights, c.weights))


def test_init_rejects_bad_config():
    with pytest.raises(ConfigurationError):
        init_model(MlpConfig(hidden_layers=()), input_width=4)
    with pytest.raises(ConfigurationError):
        init_model(MlpConfig(activation="sigmoid"), input_width=4)
    with pytest.raises(ConfigurationError):
        init_model(MlpConfig(), input_width=0)
    with pytest.raises(ConfigurationError):
        init_model(MlpConfig(batch_size=0), input_width=4)


# ---------------------------------------------------------------------------
# forward pass


def hand_model(activation="tanh"):
    # fixed tiny net: 2 -> 2 -> 2, hand-pickable numbers
    model = init_model(MlpConfig(hidden_layers=(2,), activation=activation), input_width=2)
    model.weights[0] = np.array([[1.0, 0.0], [0.0, -1.0]])
    model.biases[0] = np.array([0.5, 0.0])
    model.weights[1] = np.array([[2.0, 1.0], [0.0, 1.0]])
    model.biases[1] = np.array([0.0, -1.0])
    return model


def test_forward_hand_computed_tanh():
    model = hand_model("tanh")
    x = np.array([1.0, 2.0])
    h = np.tanh([1.5, -2.0])
    expect = np.array([2.0 * h[0], h[0] + h[1] - 1.0])
    assert np.allclose(forward(model, x), expect)


def test_forward_hand_computed_relu():
    model = hand_model("relu")
    x = np.array([1.0, 2.0])
    h = np.array([1.5, 0.0])  # relu clips the negative pre-activation
    expect = np.array([2.0 * h[0], h[0] + h[1] - 1.0])
    assert np.allclose(forward(model, x), expect)


def test_forward_linear_output_layer():
    # output must not be squashed: feed values far outside tanh range
    model = hand_model("tanh")
    model.weights[1] *= 100.0
    out = forward(model, np.array([1.0, 2.0]))
    assert np.abs(out).max() > 10.0


def test_forward_batch_matches_single():
    model = init_model(MlpConfig(hidden_layers=(5, 3)), input_width=4)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 4))
    batch = forward(model, x)
    assert batch.shape == (6, 2)
    for i in range(6):
        assert np.allclose(batch[i], forward(model, x[i]))


def test_forward_rejects_width_mismatch():
    model = init_model(MlpConfig(), input_width=4)
    with pytest.raises(DataError):
        forward(model, np.zeros(5))


# ---------------------------------------------------------------------------
# loss and gradients


def test_loss_is_mse_over_batch_and_dims():
    model = hand_model()
    x = np.array([[1.0, 2.0], [0.0, 0.0]])
    y = np.zeros((2, 2))
    pred = forward(model, x)
    expect = float(np.mean((pred - y) ** 2))
    loss, _, _ = loss_and_gradients(model, x, y)
    assert loss == pytest.approx(expect, abs=1e-15)


def finite_difference_grads(model, x, y, step=1e-5):
    gw = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    for arr, grad in list(zip(model.weights, gw)) + list(zip(model.biases, gb)):
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up, _, _ = loss_and_gradients(model, x, y)
            flat[i] = keep - step
            down, _, _ = loss_and_gradients(model, x, y)
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * step)
    return gw, gb


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_gradients_match_finite_differences(activation, rng):
    # small randomized check; the acceptance suite runs the big sweep
    for _ in range(5):
        width = int(rng.integers(2, 7))
        model = init_model(
            MlpConfig(hidden_layers=(width,), activation=activation, rng_seed=int(rng.integers(1000))),
            input_width=int(rng.integers(2, 6)),
        )
        x = rng.normal(size=(4, model.input_width))
        y = rng.normal(size=(4, 2))
        _, gw, gb = loss_and_gradients(model, x, y)
        fw, fb = finite_difference_grads(model, x, y)
        for a, b in zip(gw + gb, fw + fb):
            denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
            assert np.max(np.abs(a - b) / denom) < 1e-4


def test_gradient_shapes_and_validation():
    model = init_model(MlpConfig(hidden_layers=(3,)), input_width=4)
    x = np.zeros((5, 4))
    y = np.zeros((5, 2))
    _, gw, gb = loss_and_gradients(model, x, y)
    assert [g.shape for g in gw] == [(4, 3), (3, 2)]
    assert [g.shape for g in gb] == [(3,), (2,)]
    with pytest.raises(DataError):
        loss_and_gradients(model, x, np.zeros((5, 3)))


# ---------------------------------------------------------------------------
# adam


def test_adam_first_step_direction_and_size():
    # with bias correction the first update is lr * g / (|g| + eps),
    # essentially +-lr regardless of gradient magnitude
    model = init_model(MlpConfig(learning_rate=1e-3), input_width=2)
    w0 = [w.copy() for w in model.weights]
    state = init_adam(model)
    gw = [np.full_like(w, 0.5) for w in model.weights]
    gb = [np.full_like(b, -2.0) for b in model.biases]
    adam_step(model, gw, gb, state, model.config)
    for before, after in zip(w0, model.weights):
        assert np.allclose(before - after, 1e-3, atol=1e-9)
    for b in model.biases:
        assert np.allclose(b, 1e-3, atol=1e-9)
    assert state.t == 1


def test_adam_zero_gradient_keeps_weights():
    model = init_model(MlpConfig(), input_width=2)
    w0 = [w.copy() for w in model.weights]
    state = init_adam(model)
    gw = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    adam_step(model, gw, gb, state, model.config)
    assert all(np.array_equal(a, b) for a, b in zip(w0, model.weights))


# ---------------------------------------------------------------------------
# training loop


def toy_training_set(n=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 3))
    y = np.column_stack([x[:, 0] + 0.5 * x[:, 1], x[:, 2] - x[:, 0]])
    return feature_set(x, y)


def test_train_requires_normalizer():
    model = init_model(MlpConfig(), input_width=3)
    with pytest.raises(ConfigurationError):
        train(model, toy_training_set())


def test_train_reduces_loss_and_records_history():
    ts = toy_training_set()
    model = init_model(MlpConfig(max_epochs=40, patience=40), input_width=3)
    model.normalizer = fit_normalizer(ts)
    report = train(model, ts)
    assert report.epochs_run == len(report.loss_history) == len(model.loss_history)
    assert report.final_loss == report.loss_history[-1]
    assert report.loss_history[-1] < report.loss_history[0]


def test_train_bit_for_bit_deterministic():
    ts = toy_training_set()
    outs = []
    for _ in range(2):
        model = init_model(MlpConfig(max_epochs=10, rng_seed=3), input_width=3)
        model.normalizer = fit_normalizer(ts)
        train(model, ts)
        outs.append(model)
    a, b = outs
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    assert a.loss_history == b.loss_history


def test_train_shuffle_seed_changes_path():
    ts = toy_training_set()
    losses = []
    for seed in (0, 1):
        model = init_model(MlpConfig(max_epochs=5, rng_seed=0), input_width=3)
        # same init, different shuffle: rebuild with same init seed then
        # swap the config used for training
        cfg = MlpConfig(max_epochs=5, rng_seed=seed)
        model.normalizer = fit_normalizer(ts)
        train(model, ts, cfg)
        losses.append(model.loss_history)
    assert losses[0] != losses[1]


def test_early_stop_patience_one_infinite_delta_runs_two_epochs():
    # the first epoch sets the baseline, the second cannot beat an
    # infinite improvement requirement, so training halts at epoch 2
    ts = toy_training_set()
    model = init_model(
        MlpConfig(max_epochs=100, patience=1, min_delta=float("inf")), input_width=3
    )
    model.normalizer = fit_normalizer(ts)
    report = train(model, ts)
    assert report.epochs_run == 2
    assert report.stopped_early


def test_early_stop_keeps_last_weights():
    # run A: unrestricted 30 epochs. run B: same but patience forces a
    # stop; B's weights must equal A's at the stopping epoch (last, not
    # best, weights are kept)
    ts = toy_training_set()
    a = init_model(MlpConfig(max_epochs=30, patience=10**9, rng_seed=2), input_width=3)
    a.normalizer = fit_normalizer(ts)
    report_a = train(a, ts)

    b = init_model(MlpConfig(max_epochs=30, patience=3, min_delta=1.0, rng_seed=2), input_width=3)
    b.normalizer = fit_normalizer(ts)
    report_b = train(b, ts)
    assert report_b.stopped_early
    assert report_b.epochs_run < report_a.epochs_run
    assert report_b.loss_history == report_a.loss_history[: report_b.epochs_run]


def test_max_epochs_without_stop():
    ts = toy_training_set()
    model = init_model(MlpConfig(max_epochs=7, patience=10**9), input_width=3)
    model.normalizer = fit_normalizer(ts)
    report = train(model, ts)
    assert report.epochs_run == 7
    assert not report.stopped_early


def test_divergence_raises():
    # adam steps are ~lr in size, so an absurd rate walks the output
    # layer past 1e154 and the squared error overflows to inf
    ts = toy_training_set()
    model = init_model(MlpConfig(learning_rate=1e160, max_epochs=50), input_width=3)
    model.normalizer = fit_normalizer(ts)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergenceError):
        train(model, ts)


def test_predict_maps_back_to_metres():
    # labels live far from the origin; predict must undo the label z-score
    rng = np.random.default_rng(1)
    x = rng.uniform(-1.0, 1.0, size=(128, 3))
    y = np.column_stack([100.0 + 20.0 * x[:, 0], 500.0 + 10.0 * x[:, 1]])
    ts = feature_set(x, y)
    model = init_model(MlpConfig(max_epochs=200, patience=200), input_width=3)
    model.normalizer = fit_normalizer(ts)
    train(model, ts)
    pred = predict(model, x)
    assert np.mean(np.linalg.norm(pred - y, axis=1)) < 2.0
    assert 80.0 < pred[:, 0].mean() < 120.0


# ---------------------------------------------------------------------------
# serialization


def test_config_round_trip():
    cfg = MlpConfig(hidden_layers=(32, 16), activation="relu", rng_seed=9)
    assert mlp_config_from_dict(mlp_config_to_dict(cfg)) == cfg


def test_config_unknown_key():
    d = mlp_config_to_dict(MlpConfig())
    d["momentum"] = 0.9
    with pytest.raises(ConfigurationError):
        mlp_config_from_dict(d)


def test_model_round_trip():
    ts = toy_training_set()
    model = init_model(MlpConfig(max_epochs=3), input_width=3)
    model.normalizer = fit_normalizer(ts)
    train(model, ts)
    back = mlp_from_dict(mlp_to_dict(model))
    assert all(np.array_equal(a, b) for a, b in zip(back.weights, model.weights))
    assert back.loss_history == model.loss_history
    assert np.allclose(predict(back, ts.values), predict(model, ts.values))
