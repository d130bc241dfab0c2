import numpy as np
import pytest
import torch

from conftest import fd_relative_errors, jitter_biases, make_net, tiny_config, zero_module
from koopagru.exceptions import ConfigError, ShapeError
from koopagru.model import (
    EPS_NORM,
    ModelConfig,
    NormFlags,
    denormalize,
    instance_normalize,
    zero_pad_invariant,
)

OFF = NormFlags(False, False, False, False)


def set_operator(op, matrix):
    with torch.no_grad():
        op.weight.copy_(torch.as_tensor(matrix, dtype=op.weight.dtype))


# -- normalization --------------------------------------------------------------


def test_constant_channel_normalizes_to_zero():
    x = torch.stack([torch.randn(20), torch.full((20,), 3.0)], dim=-1)
    xh, stats = instance_normalize(x)
    assert torch.all(xh[:, 1] == 0)
    assert stats.sigma[..., 1].item() == pytest.approx(EPS_NORM)


def test_normalized_moments():
    x = torch.randn(4, 50, 3, dtype=torch.float64) * 3 + 2
    xh, _ = instance_normalize(x)
    assert xh.mean(dim=1).abs().max() < 1e-7
    assert (xh.std(dim=1, unbiased=False) - 1).abs().max() < 1e-6


def test_already_standard_is_a_fixed_point():
    x = torch.randn(200, 2, dtype=torch.float64)
    x = (x - x.mean(0)) / x.std(0, unbiased=False)
    xh, _ = instance_normalize(x)
    assert torch.allclose(xh, x, atol=1e-12)


def test_denormalize_inverts_normalize():
    x = torch.randn(3, 30, 2, dtype=torch.float64) * 5 - 1
    xh, stats = instance_normalize(x)
    assert torch.allclose(denormalize(xh, stats), x, atol=1e-8)


# -- zero padding ----------------------------------------------------------------


def test_zero_pad():
    v = torch.randn(5, 2)
    out = zero_pad_invariant(v, 6)
    assert out.shape == (5, 6)
    assert torch.equal(out[:, :2], v) and torch.all(out[:, 2:] == 0)
    assert torch.equal(zero_pad_invariant(v, 2), v)
    assert torch.all(zero_pad_invariant(torch.zeros(3, 2), 5) == 0)


def test_zero_pad_too_narrow():
    with pytest.raises(ShapeError):
        zero_pad_invariant(torch.zeros(3, 4), 2)


# -- config ----------------------------------------------------------------------


def test_config_roundtrip_uses_lambda_key():
    cfg = ModelConfig(alpha=0.5, beta=0.3, lambda_reg=1e-4, gru_layers_variant=8)
    d = cfg.to_dict()
    assert d["lambda"] == 1e-4 and "lambda_reg" not in d
    assert ModelConfig.from_dict(d) == cfg


def test_config_defaults():
    cfg = ModelConfig()
    assert cfg.norm_flags == NormFlags(True, True, True, False)
    assert (cfg.window, cfg.q, cfg.hidden1, cfg.hidden2, cfg.dropout) == (100, 128, 100, 128, 0.01)


@pytest.mark.parametrize("bad", [{"alpha": 1.5}, {"beta": -1}, {"lambda": -0.1}, {"window": 1},
                                 {"gru_layers_variant": 0}, {"bogus": 1}, {"norm_flags": {"x": True}}])
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(bad)


# -- forward ---------------------------------------------------------------------


def test_forward_shapes(sine_windows):
    net = make_net(tiny_config(), sine_windows)
    out = net(sine_windows[:3])
    assert out.phi_pred.shape == (3, 15, 2 + 4)
    assert out.x_next_pred.shape == (3, 15, 2)
    assert torch.equal(out.x_next_pred, out.phi_pred[..., :2])


def test_wrong_window_shape(sine_windows):
    net = make_net(tiny_config(), sine_windows)
    with pytest.raises(ShapeError):
        net(np.zeros((1, 10, 2)))


def test_beta_zero_gives_variant_branch_only(sine_windows):
    net = make_net(tiny_config(beta=0.0), sine_windows)
    out = net(sine_windows[:2])
    assert torch.equal(out.phi_pred, out.variant)


def test_beta_zero_invariant_gradients_vanish(sine_windows):
    net = make_net(tiny_config(beta=0.0), sine_windows)
    net.loss(sine_windows[:4]).koopman_term.backward()
    for name, p in net.named_parameters():
        if name.startswith(("invariant_encoder", "k_inv")):
            assert p.grad is None or torch.all(p.grad == 0), name


def test_alpha_zero_invariant_input_is_zero(sine_windows):
    net = make_net(tiny_config(alpha=0.0), sine_windows)
    x_inv, x_var = net.split(torch.tensor(sine_windows))
    assert torch.all(x_inv == 0)
    assert torch.equal(x_var, torch.tensor(sine_windows))
    zero_module(net.invariant_encoder)
    out = net(sine_windows[:2])
    assert torch.equal(out.phi_pred, out.variant)


def test_hand_composed_persistence_forecast(rng):
    """K_var = I with a silent encoder reproduces the variant input; the
    invariant branch adds beta times its constant output to the measurement slots."""
    L, m, q, beta = 8, 2, 3, 0.4
    w = rng.standard_normal((1, L, m))
    cfg = ModelConfig(alpha=0.0, beta=beta, window=L, q=q, hidden1=4, hidden2=4, dropout=0.0)
    net = make_net(cfg, w, double=True)
    zero_module(net.variant_encoder)
    zero_module(net.invariant_encoder)
    c = np.array([0.7, -1.3])
    with torch.no_grad():
        net.invariant_encoder.out.bias.copy_(torch.as_tensor(c))
    set_operator(net.k_var, np.eye(m + q))
    set_operator(net.k_inv, np.eye(m))
    pred = net(w).x_next_pred.detach().numpy()[0]
    # alpha = 0: the variant part is the whole window; persistence of X_t plus beta*c
    expected = w[0, :-1] + beta * c
    assert np.allclose(pred, expected, atol=1e-12)


def test_loss_micro_example(rng):
    """One window, hand-set operators, silent encoders, no normalization."""
    L, m, q, lam = 5, 2, 1, 0.01
    w = rng.standard_normal((1, L, m))
    cfg = ModelConfig(alpha=0.0, beta=0.5, lambda_reg=lam, window=L, q=q, hidden1=3, hidden2=3,
                      dropout=0.0, norm_flags=OFF)
    net = make_net(cfg, w, double=True)
    zero_module(net.variant_encoder)
    zero_module(net.invariant_encoder)
    K_var = np.array([[0.9, 0.1, 0.0], [-0.2, 1.1, 0.0], [0.3, 0.0, 0.5]])
    K_inv = np.array([[2.0, 0.0], [1.0, -1.0]])
    set_operator(net.k_var, K_var)
    set_operator(net.k_inv, K_inv)
    terms = net.loss(w)

    x_t, x_next = w[0, :-1], w[0, 1:]
    lifted = np.hstack([x_t, np.zeros((L - 1, 1))])
    pred = lifted @ K_var.T            # invariant branch outputs zero before K_inv
    target = np.hstack([x_next, np.zeros((L - 1, 1))])
    koop = np.sqrt(np.sum((target - pred) ** 2))
    reg = np.sqrt(np.sum(K_var ** 2)) + np.sqrt(np.sum(K_inv ** 2))
    assert terms.koopman_term.item() == pytest.approx(koop, rel=1e-12)
    assert terms.reg_term.item() == pytest.approx(reg, rel=1e-12)
    assert terms.total.item() == pytest.approx(koop + lam * reg, rel=1e-12)


def test_lambda_zero_total_is_koopman_term(sine_windows):
    net = make_net(tiny_config(lambda_reg=0.0), sine_windows)
    t = net.loss(sine_windows[:3])
    assert t.total.item() == t.koopman_term.item()


def test_exact_prediction_has_zero_koopman_term():
    L, m, q = 6, 2, 2
    w = np.tile([[1.5, -0.5]], (L, 1))[None]
    cfg = ModelConfig(alpha=0.0, window=L, q=q, hidden1=3, hidden2=3, dropout=0.0, norm_flags=OFF)
    net = make_net(cfg, w, double=True)
    zero_module(net.variant_encoder)
    zero_module(net.invariant_encoder)
    set_operator(net.k_var, np.eye(m + q))
    t = net.loss(w)
    assert t.koopman_term.item() == 0.0
    assert t.total.item() == pytest.approx(cfg.lambda_reg * t.reg_term.item())


def test_koopman_term_is_averaged_over_the_batch(sine_windows):
    net = make_net(tiny_config(), sine_windows).eval()
    each = [net.loss(sine_windows[i:i + 1]).koopman_term.item() for i in range(4)]
    assert net.loss(sine_windows[:4]).koopman_term.item() == pytest.approx(np.mean(each), rel=1e-5)


def test_squared_loss_switch(sine_windows):
    plain = make_net(tiny_config(), sine_windows).eval()
    squared = make_net(tiny_config(squared_loss=True), sine_windows).eval()
    a = plain.loss(sine_windows[:1]).koopman_term.item()
    b = squared.loss(sine_windows[:1]).koopman_term.item()
    assert b == pytest.approx(a ** 2, rel=1e-5)


def test_variant_measurement_slots_hold_normalized_input(sine_windows):
    net = make_net(tiny_config(), sine_windows)
    set_operator(net.k_var, np.eye(6))
    w = torch.as_tensor(sine_windows[:2], dtype=torch.float32)
    _, x_var = net.split(w)
    xh, stats = instance_normalize(x_var[:, :-1])
    advanced = net(w).variant
    # K_var = I and denorm on: measurement slots come back in original scale
    assert torch.allclose(advanced[..., :2], denormalize(xh, stats), atol=1e-5)


@pytest.mark.parametrize("flags", [NormFlags(True, True, True, False), NormFlags(True, False, True, False),
                                   NormFlags(False, False, False, False), NormFlags(True, True, True, True)])
def test_norm_flag_configurations_run(sine_windows, flags):
    net = make_net(tiny_config(norm_flags=flags), sine_windows)
    assert torch.isfinite(net.loss(sine_windows[:2]).total)


def test_norm_flags_change_the_prediction(sine_windows):
    outs = []
    for flags in (NormFlags(True, True, True, False), NormFlags(True, False, True, False)):
        outs.append(make_net(tiny_config(norm_flags=flags), sine_windows).eval()(sine_windows[:1]).x_next_pred)
    assert not torch.allclose(outs[0], outs[1])


def test_loss_gradients_match_finite_differences(rng):
    L, m = 8, 2
    w = rng.standard_normal((2, L, m))
    cfg = ModelConfig(alpha=0.25, beta=0.5, lambda_reg=0.1, window=L, q=3, hidden1=4, hidden2=3,
                      dropout=0.0)
    net = make_net(cfg, w, double=True).eval()
    jitter_biases(net)
    params = dict(net.named_parameters())
    errors = fd_relative_errors(lambda: net.loss(w).total, params)
    assert max(errors.values()) < 1e-4, errors


def test_predict_next_restores_training_mode(sine_windows):
    net = make_net(tiny_config(), sine_windows).train()
    pred = net.predict_next(sine_windows[:2])
    assert isinstance(pred, np.ndarray) and pred.shape == (2, 15, 2)
    assert net.training
