import numpy as np
import pytest
import torch

from koopagru.data_io import make_windows
from koopagru.model import KoopAGRUNet, ModelConfig, NormFlags
from koopagru.spectral import fit_dominant_spectrum


def tiny_config(**overrides) -> ModelConfig:
    """Small enough to train in well under a second per epoch."""
    kw = dict(alpha=0.1, beta=0.1, lambda_reg=1e-3, window=16, q=4, hidden1=6, hidden2=5,
              gru_layers_variant=1, gru_layers_invariant=1, dropout=0.0)
    kw.update(overrides)
    return ModelConfig(**kw)


def make_net(config: ModelConfig, windows: np.ndarray, seed: int = 0, double: bool = False) -> KoopAGRUNet:
    sel = fit_dominant_spectrum(windows, config.alpha)
    torch.manual_seed(seed)
    net = KoopAGRUNet(config, windows.shape[-1], sel, seed=seed)
    return net.double() if double else net


def jitter_biases(module: torch.nn.Module, seed: int = 0, scale: float = 0.3):
    """Random non-zero biases, so no ReLU sits exactly on its kink at the test point."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if "bias" in name:
                p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


def zero_module(module: torch.nn.Module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sine_windows(rng):
    t = np.arange(16 * 12)
    x = np.stack([np.sin(2 * np.pi * 2 * t / 16), np.cos(2 * np.pi * 3 * t / 16 + 0.4)], axis=1)
    x = x + 0.05 * rng.standard_normal(x.shape)
    return np.array(make_windows(x, 16).windows)


def fd_relative_errors(loss_fn, params, h: float = 1e-3) -> dict:
    """Autograd vs central finite differences, one relative error per named parameter.

    ``loss_fn`` is a zero-argument closure returning a scalar tensor; ``params``
    maps names to float64 parameters read by that closure.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    errors = {}
    for name, p in params.items():
        analytic = p.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
        scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
        errors[name] = (analytic - numeric).norm().item() / scale
    return errors


# -- acceptance summary ------------------------------------------------------------

_CRITERIA: dict = {}
_NOTES: dict = {}


@pytest.fixture
def criterion_note(request):
    """Attach a short measurement to the test's acceptance summary line."""
    name = request.node.get_closest_marker("criterion").args[0]
    return lambda text: _NOTES.__setitem__(name, text)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.skipped:
        return
    if report.when == "call" or report.failed:
        ok = _CRITERIA.get(marker.args[0], True)
        _CRITERIA[marker.args[0]] = ok and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        note = f" ({_NOTES[name]})" if name in _NOTES else ""
        terminalreporter.write_line(f"{name}: {'PASS' if _CRITERIA[name] else 'FAIL'}{note}")
