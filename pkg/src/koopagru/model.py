"""The full forward pass: FFT split, both branches, fusion, and the training loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import EncoderConfig, InvariantEncoder, VariantEncoder, lift, project_future
from .exceptions import ConfigError, NumericalError, ShapeError
from .koopman import KoopmanOperator, operator_norms
from .spectral import FrequencySelection, split_invariant_variant

EPS_NORM = 1e-5


@dataclass
class NormFlags:
    var_norm: bool = True
    var_denorm: bool = True
    inv_norm: bool = True
    inv_denorm: bool = False


@dataclass
class ModelConfig:
    alpha: float = 0.1
    beta: float = 0.1
    lambda_reg: float = 1e-3
    window: int = 100
    q: int = 128
    hidden1: int = 100
    hidden2: int = 128
    gru_layers_variant: int = 1
    gru_layers_invariant: int = 1
    dropout: float = 0.01
    norm_flags: NormFlags = field(default_factory=NormFlags)
    # squared Frobenius residual instead of the plain norm
    squared_loss: bool = False

    def __post_init__(self):
        if isinstance(self.norm_flags, dict):
            unknown = set(self.norm_flags) - {f.name for f in fields(NormFlags)}
            if unknown:
                raise ConfigError(f"unknown norm_flags keys: {sorted(unknown)}")
            self.norm_flags = NormFlags(**self.norm_flags)
        self.validate()

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0 or self.lambda_reg < 0:
            raise ConfigError("beta and lambda must be non-negative")
        if self.window < 2:
            raise ConfigError("window must be at least 2")
        if min(self.q, self.hidden1, self.hidden2, self.gru_layers_variant, self.gru_layers_invariant) < 1:
            raise ConfigError("layer sizes and counts must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_reg")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_reg"] = d.pop("lambda")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def variant_encoder(self, m: int) -> EncoderConfig:
        return EncoderConfig(m, self.hidden1, self.hidden2, self.q, self.gru_layers_variant, self.dropout)

    def invariant_encoder(self, m: int) -> EncoderConfig:
        return EncoderConfig(m, self.hidden1, self.hidden2, self.q, self.gru_layers_invariant, 0.0)


class NormStats(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


def instance_normalize(x: torch.Tensor, eps: float = EPS_NORM):
    """Per-window, per-channel z-scoring over the time axis (second to last)."""
    mu = x.mean(dim=-2, keepdim=True)
    sigma = x.std(dim=-2, unbiased=False, keepdim=True).clamp_min(eps)
    return (x - mu) / sigma, NormStats(mu, sigma)


def denormalize(x: torch.Tensor, stats: NormStats) -> torch.Tensor:
    return x * stats.sigma + stats.mu


def zero_pad_invariant(v: torch.Tensor, width: int) -> torch.Tensor:
    m = v.shape[-1]
    if width < m:
        raise ShapeError(f"pad width {width} is smaller than {m}")
    return F.pad(v, (0, width - m))


class ForwardOutput(NamedTuple):
    phi_pred: torch.Tensor
    x_next_pred: torch.Tensor
    variant: torch.Tensor
    invariant: torch.Tensor


class LossTerms(NamedTuple):
    total: torch.Tensor
    koopman_term: torch.Tensor
    reg_term: torch.Tensor


class KoopAGRUNet(nn.Module):
    """Encoders, operators and the frozen frequency selection for one dataset."""

    def __init__(self, config: ModelConfig, n_channels: int, selection: FrequencySelection,
                 seed: Optional[int] = None):
        super().__init__()
        if selection.window_length != config.window:
            raise ShapeError("frequency selection was fitted on a different window length")
        self.config = config
        self.n_channels = n_channels
        self.selection = selection
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        self.variant_encoder = VariantEncoder(config.variant_encoder(n_channels))
        self.invariant_encoder = InvariantEncoder(config.invariant_encoder(n_channels))
        self.k_var = KoopmanOperator(n_channels + config.q, generator=gen)
        self.k_inv = KoopmanOperator(n_channels, generator=gen)

    @property
    def observable_width(self) -> int:
        return self.n_channels + self.config.q

    def _as_batch(self, windows) -> torch.Tensor:
        p = self.k_var.weight
        if isinstance(windows, torch.Tensor):
            w = windows.to(dtype=p.dtype)
        else:
            # copy: window views over read-only series cannot back a tensor
            w = torch.tensor(np.asarray(windows), dtype=p.dtype)
        if w.dim() == 2:
            w = w.unsqueeze(0)
        if w.dim() != 3 or w.shape[1] != self.config.window or w.shape[2] != self.n_channels:
            raise ShapeError(
                f"expected windows of shape (B, {self.config.window}, {self.n_channels}), got {tuple(w.shape)}"
            )
        return w

    def split(self, windows: torch.Tensor):
        x_inv, x_var = split_invariant_variant(windows.detach().cpu().numpy(), self.selection)
        as_t = lambda a: torch.from_numpy(a).to(dtype=windows.dtype)  # noqa: E731
        return as_t(x_inv), as_t(x_var)

    def forward(self, windows) -> ForwardOutput:
        w = self._as_batch(windows)
        flags = self.config.norm_flags
        m = self.n_channels
        x_inv, x_var = self.split(w)
        xv = x_var[:, :-1]
        xi = x_inv[:, :-1]

        if flags.var_norm:
            xv, v_stats = instance_normalize(xv)
        advanced = self.k_var(lift(xv, self.variant_encoder(xv)))
        if flags.var_norm and flags.var_denorm:
            advanced = torch.cat([denormalize(advanced[..., :m], v_stats), advanced[..., m:]], dim=-1)

        if flags.inv_norm:
            xi, i_stats = instance_normalize(xi)
        inv = self.k_inv(self.invariant_encoder(xi))
        if flags.inv_norm and flags.inv_denorm:
            inv = denormalize(inv, i_stats)
        inv = zero_pad_invariant(inv, self.observable_width)

        phi = self.config.beta * inv + advanced
        return ForwardOutput(phi, phi[..., :m], advanced, inv)

    def target(self, windows) -> torch.Tensor:
        w = self._as_batch(windows)
        return project_future(self.variant_encoder, w[:, 1:])

    def loss(self, windows) -> LossTerms:
        w = self._as_batch(windows)
        out = self.forward(w)
        resid = self.target(w) - out.phi_pred
        sq = resid.pow(2).sum(dim=(-2, -1))
        per_window = sq if self.config.squared_loss else sq.sqrt()
        koopman_term = per_window.mean()
        reg_term = operator_norms(self.k_var, self.k_inv)
        total = koopman_term + self.config.lambda_reg * reg_term
        if not torch.isfinite(total):
            raise NumericalError(
                f"non-finite loss (koopman={koopman_term.item()}, reg={reg_term.item()})"
            )
        return LossTerms(total, koopman_term, reg_term)

    @torch.no_grad()
    def predict_next(self, windows) -> np.ndarray:
        """Eval-mode next-step predictions, shape ``(B, L-1, m)``."""
        was_training = self.training
        self.eval()
        try:
            return self.forward(windows).x_next_pred.cpu().numpy()
        finally:
            self.train(was_training)
