import numpy as np
import pytest

from bfmlab import trainer as T
from bfmlab.channel import SimConfig, load_profile, simulate_csi
from bfmlab.dataset import dataset_from_csi
from bfmlab.estimator import ModelSpec, ModelWeights, build_model, forward, value_and_grad
from bfmlab.rng import stream


@pytest.fixture(scope="module")
def tiny_ds():
    cfg = SimConfig(n_samples=40, seed=2)
    return dataset_from_csi(simulate_csi(load_profile("model-b"), cfg), cfg, "model-b", 11)


def tiny_spec(variant="cnn"):
    return ModelSpec(variant, n_blocks=2, base_channels=2, freq_bins=16, convlstm_hidden=2)


def test_config_validation():
    cfg = T.TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.max_epochs, cfg.patience) == (64, 1e-3, 200, 10)
    for bad in (dict(batch_size=0), dict(patience=0), dict(learning_rate=0.0), dict(optimizer="rms")):
        with pytest.raises(ValueError):
            T.TrainConfig(**bad)


def test_early_stopping_increasing_losses():
    es = T.EarlyStopping(10)
    stops = []
    for epoch, loss in enumerate(np.linspace(1, 2, 30), start=1):
        es.update(loss)
        if es.should_stop:
            stops.append(epoch)
            break
    assert stops == [11] and es.best_epoch == 1


def test_early_stopping_tolerance():
    es = T.EarlyStopping(2, min_delta=1e-7)
    assert es.update(1.0)
    assert not es.update(1.0 - 5e-8)
    assert es.update(1.0 - 2e-7)


def test_train_stops_after_patience_with_best_weights(tiny_ds, monkeypatch):
    losses = iter(np.linspace(1.0, 2.0, 50))
    snapshots = []
    real = T.evaluate_loss

    def fake(weights, *a, **k):
        real(weights, *a, **k)
        snapshots.append(weights.copy())
        return float(next(losses))

    monkeypatch.setattr(T, "evaluate_loss", fake)
    cfg = T.TrainConfig(batch_size=64, patience=10, max_epochs=30, dtype="float64")
    best, rec = T.train(tiny_ds, tiny_spec(), cfg)
    assert rec.epochs == 11 and rec.stop_reason == "early_stop" and rec.best_epoch == 1
    for k in best.params:
        np.testing.assert_array_equal(best.params[k], snapshots[0].params[k])


def test_max_epochs_stop(tiny_ds):
    best, rec = T.train(tiny_ds, tiny_spec(), T.TrainConfig(max_epochs=3, dtype="float64"))
    assert rec.epochs == 3 and rec.stop_reason == "max_epochs"
    assert len(rec.train_loss) == len(rec.seconds) == 3
    assert rec.val_loss[rec.best_epoch - 1] == min(rec.val_loss)
    xv, yv, mv = tiny_ds.split("val")
    assert T.evaluate_loss(best, tiny_spec(), xv, yv, mv) == pytest.approx(min(rec.val_loss), rel=1e-12)


@pytest.mark.parametrize("variant", ["cnn", "cnn_convlstm"])
def test_training_is_reproducible(tiny_ds, variant):
    cfg = T.TrainConfig(max_epochs=2, dtype="float64", seed=5)
    w1, r1 = T.train(tiny_ds, tiny_spec(variant), cfg)
    w2, r2 = T.train(tiny_ds, tiny_spec(variant), cfg)
    assert r1.same_trajectory(r2)
    assert all(w1.params[k].tobytes() == w2.params[k].tobytes() for k in w1.params)
    _, r3 = T.train(tiny_ds, tiny_spec(variant), T.TrainConfig(max_epochs=2, dtype="float64", seed=6))
    assert r3.train_loss != r1.train_loss


def test_training_reduces_loss(tiny_ds):
    _, rec = T.train(tiny_ds, tiny_spec(), T.TrainConfig(max_epochs=6, batch_size=8, dtype="float64"))
    assert rec.val_loss[-1] < rec.val_loss[0]


def test_record_csv():
    rec = T.TrainRecord([0.5, 0.25], [0.4, 0.3], [1.0, 2.0], "max_epochs", 2)
    lines = rec.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds"
    assert lines[1] == "1,0.5,0.4,1.000"
    assert len(lines) == 3


def _weights():
    return ModelWeights({"w": np.array([0.0, 1.0]), "b": np.array([2.0])})


def test_update_zero_gradients():
    w = _weights()
    state = T.init_optimizer("adam", w)
    state.m["w"][:] = 1.0
    state.v["w"][:] = 1.0
    T.update_step(w, {"w": np.zeros(2), "b": np.zeros(1)}, state, 1e-3)
    np.testing.assert_array_equal(w.params["b"], [2.0])
    np.testing.assert_allclose(state.m["w"], 0.9)
    np.testing.assert_allclose(state.v["w"], 0.999)


def test_update_sgd():
    w = _weights()
    T.update_step(w, {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}, T.init_optimizer("sgd", w), 0.1)
    np.testing.assert_array_equal(w.params["w"], [0.0 - 0.1 * 1.0, 1.0 + 0.1 * 2.0])
    np.testing.assert_array_equal(w.params["b"], [2.0 - 0.1 * 0.5])


def test_adam_single_step_hand_oracle():
    w = ModelWeights({"w": np.array([0.0])})
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    T.update_step(w, {"w": np.array([1.0])}, T.init_optimizer("adam", w), lr)
    m_hat = (1 - b1) * 1.0 / (1 - b1)
    v_hat = (1 - b2) * 1.0 / (1 - b2)
    assert w.params["w"][0] == pytest.approx(-lr * m_hat / (np.sqrt(v_hat) + eps), rel=1e-12)
    assert w.params["w"][0] == pytest.approx(-1e-3, rel=1e-7)


def test_update_key_mismatch():
    w = _weights()
    with pytest.raises(KeyError):
        T.update_step(w, {"w": np.zeros(2)}, T.init_optimizer("adam", w), 1e-3)


def test_divergence_raises_with_record(tiny_ds):
    spec = tiny_spec()
    w = build_model(spec, stream(0, "init"))
    w.params["out.b"][:] = np.inf
    with pytest.raises(T.DivergenceError) as exc, np.errstate(all="ignore"):
        T.train(tiny_ds, spec, T.TrainConfig(max_epochs=2, dtype="float64"), init=w)
    assert exc.value.record.stop_reason == "diverged"


def test_dropout_changes_train_mode_only():
    spec = tiny_spec()
    w = build_model(spec, stream(0, "init"))
    x = np.random.default_rng(0).standard_normal((4, 16, 4, 2))
    a = forward(w.copy(), spec, x, "train", stream(0, "d", 1))[0]
    b = forward(w.copy(), spec, x, "train", stream(0, "d", 2))[0]
    assert np.any(a != b)
    y = np.zeros((4, 16, 4, 1))
    m = np.ones((4, 16), bool)
    v1, _ = value_and_grad(w.copy(), spec, x, y, m, stream(0, "d", 1))
    v2, _ = value_and_grad(w.copy(), spec, x, y, m, stream(0, "d", 1))
    assert v1 == v2
