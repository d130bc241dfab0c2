import json

import numpy as np
import pytest
import torch

from conftest import make_net, tiny_config
from koopagru.data_io import RawSeries, make_windows
from koopagru.detector import evaluate_val_errors, score_test
from koopagru.exceptions import IoError, NumericalError, TrainError
from koopagru.synth import AnomalySpec, gen_sine_mixture, inject_anomalies
from koopagru.trainer import ARRAY_DTYPE, Checkpoint, TrainConfig, build_model, train


def sine_split(L=16, n_train=12, n_val=4, seed=0):
    s = gen_sine_mixture([(2, 1.0, 0.0), (5, 0.4, 0.7)], L, n_train + n_val, m=2, noise_std=0.05, seed=seed)
    wb = make_windows(s, L)
    w = np.array(wb.windows)
    return make_windows(w[:n_train].reshape(-1, 2), L), make_windows(w[n_train:].reshape(-1, 2), L)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 0.1})


def test_zero_epochs_is_a_no_op():
    tr, va = sine_split()
    model = build_model(tiny_config(), tr, seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    ckpt, report = train(model, (tr, va), TrainConfig(max_epochs=0))
    assert report.train_loss == [] and report.val_loss == []
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])
    assert np.array_equal(ckpt.arrays["k_var.weight"], before["k_var.weight"].numpy())


def test_loss_decreases_on_a_linear_system():
    from koopagru.synth import LinearSystemSpec, gen_linear_system, rotation_matrix

    A = 0.99 * rotation_matrix(2 * np.pi / 16)
    s = gen_linear_system(LinearSystemSpec(A, np.array([1.0, 0.0]), steps=16 * 16, noise_std=0.01))
    w = np.array(make_windows(s, 16).windows)
    tr, va = make_windows(w[:12].reshape(-1, 2), 16), make_windows(w[12:].reshape(-1, 2), 16)
    model = build_model(tiny_config(), tr, seed=0)
    _, report = train(model, (tr, va), TrainConfig(max_epochs=6, batch_size=4, patience=10))
    assert report.train_loss[5] < report.train_loss[0]


def test_fixed_seed_is_deterministic():
    tr, va = sine_split()
    curves = []
    for _ in range(2):
        model = build_model(tiny_config(dropout=0.3, gru_layers_variant=2), tr, seed=7)
        _, rep = train(model, (tr, va), TrainConfig(max_epochs=4, batch_size=4, seed=7))
        curves.append((rep.train_loss, rep.val_loss))
    assert curves[0] == curves[1]


def test_early_stopping_keeps_the_best_epoch():
    tr, va = sine_split()
    model = build_model(tiny_config(), tr, seed=0)
    ckpt, rep = train(model, (tr, va), TrainConfig(max_epochs=30, batch_size=2, patience=2,
                                                    learning_rate=0.05))
    assert rep.best_val_loss == min(rep.val_loss)
    assert rep.val_loss[rep.best_epoch] == rep.best_val_loss
    if rep.stopped_early:
        assert len(rep.val_loss) - 1 - rep.best_epoch == 2
    # the returned model is the best-val state
    from koopagru.trainer import _mean_loss
    assert _mean_loss(model, np.array(va.windows, dtype=np.float32), 128) == pytest.approx(rep.best_val_loss, rel=1e-6)
    assert ckpt.metadata["epoch"] == rep.best_epoch


def test_empty_training_set():
    model = build_model(tiny_config(), make_windows(np.zeros((16, 2)), 16))
    empty = make_windows(np.zeros((16, 2)), 16)
    empty = type(empty)(np.zeros((0, 16, 2)), np.zeros(0))
    with pytest.raises(TrainError):
        train(model, (empty, None), TrainConfig(max_epochs=1))


def test_non_finite_loss_reports_location():
    tr, va = sine_split()
    model = build_model(tiny_config(), tr)
    with torch.no_grad():
        model.k_var.weight[0, 0] = float("inf")
    with pytest.raises(NumericalError, match="epoch 0, batch 0"):
        train(model, (tr, va), TrainConfig(max_epochs=1))


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_roundtrip_is_bitwise(tmp_path):
    tr, va = sine_split()
    model = build_model(tiny_config(), tr, seed=3)
    ckpt, _ = train(model, (tr, va), TrainConfig(max_epochs=2, batch_size=4))
    ckpt.save(tmp_path / "ck")
    loaded = Checkpoint.load(tmp_path / "ck").build_model()
    w = va.windows
    assert torch.equal(model.eval()(w).phi_pred, loaded(w).phi_pred)
    assert loaded.selection.dominant == model.selection.dominant


def test_checkpoint_layout(tmp_path):
    tr, _ = sine_split()
    model = build_model(tiny_config(), tr)
    Checkpoint.from_model(model, TrainConfig(), seed=0).save(tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["format_version"] == 1
    assert manifest["model_config"]["lambda"] == 1e-3
    for name, entry in manifest["arrays"].items():
        f = tmp_path / "ck" / entry["file"]
        assert entry["dtype"] == ARRAY_DTYPE
        assert f.stat().st_size == 4 * int(np.prod(entry["shape"]))
        expected = model.state_dict()[name].numpy().astype("<f4")
        assert np.array_equal(np.fromfile(f, dtype="<f4").reshape(entry["shape"]), expected)


def test_checkpoint_version_check(tmp_path):
    tr, _ = sine_split()
    Checkpoint.from_model(build_model(tiny_config(), tr), TrainConfig()).save(tmp_path / "ck")
    mf = tmp_path / "ck" / "manifest.json"
    d = json.loads(mf.read_text())
    d["format_version"] = 99
    mf.write_text(json.dumps(d))
    with pytest.raises(IoError):
        Checkpoint.load(tmp_path / "ck")
    with pytest.raises(IoError):
        Checkpoint.load(tmp_path / "nothing")


# -- validation errors ----------------------------------------------------------------


def test_val_error_length():
    tr, va = sine_split()
    model = build_model(tiny_config(), tr)
    scores = evaluate_val_errors(model, va)
    assert len(scores) == len(va) * 15
    assert np.all(scores.scores >= 0)
    assert scores.index[0] == 1 and 16 not in scores.index[:15]


def test_persistence_on_a_constant_series_scores_zero():
    from koopagru.model import ModelConfig, NormFlags
    from conftest import zero_module

    w = np.tile([[0.3, -1.0]], (16 * 3, 1))
    wb = make_windows(w, 16)
    cfg = ModelConfig(alpha=0.0, window=16, q=3, hidden1=3, hidden2=3, dropout=0.0,
                      norm_flags=NormFlags(True, True, True, False))
    net = make_net(cfg, wb.windows)
    zero_module(net.variant_encoder)
    zero_module(net.invariant_encoder)
    with torch.no_grad():
        net.k_var.weight.copy_(torch.eye(5))
    assert np.max(evaluate_val_errors(net, wb).scores) < 1e-6
    assert np.max(score_test(net, wb).scores) < 1e-6


def test_spike_produces_the_largest_error():
    L = 16
    s = gen_sine_mixture([(2, 1.0, 0.0), (5, 0.4, 0.7)], L, 20, m=2, noise_std=0.02, seed=1)
    tr = make_windows(s.slice(0, 12 * L), L)
    va = make_windows(s.slice(12 * L, 16 * L), L)
    model = build_model(tiny_config(), tr, seed=0)
    train(model, (tr, va), TrainConfig(max_epochs=15, batch_size=2))
    test = inject_anomalies(RawSeries(s.values[16 * L:]), AnomalySpec("spike", [37], 8.0, 1))
    wb = make_windows(test, L)
    scores = score_test(model, wb)
    peak = scores.index[np.argmax(scores.scores)]
    assert peak // L == 37 // L
