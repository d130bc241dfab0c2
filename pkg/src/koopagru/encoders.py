"""Learned observable functions.

Both encoders apply two per-step feedforward layers (with ReLU) to the
``m``-dimensional measurement at each time step and feed the result to a
stacked GRU.  The variant encoder's per-step top-layer hidden state is the
observable ``psi(x(i))``; the invariant encoder adds a final linear layer
mapping back to ``m`` channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .exceptions import NumericalError, ShapeError


@dataclass
class EncoderConfig:
    input_dim: int
    hidden1: int = 100
    hidden2: int = 128
    gru_hidden: int = 128
    gru_layers: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.gru_layers < 1:
            raise ValueError("gru_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.input_dim, self.hidden1, self.hidden2, self.gru_hidden) < 1:
            raise ValueError("all layer widths must be positive")

    to_dict = asdict


def _check_finite(x: torch.Tensor):
    if not torch.isfinite(x).all():
        raise NumericalError("encoder input contains NaN or Inf")


class _StepGRUEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.feed = nn.Sequential(
            nn.Linear(cfg.input_dim, cfg.hidden1),
            nn.ReLU(),
            nn.Linear(cfg.hidden1, cfg.hidden2),
            nn.ReLU(),
        )
        self.gru = nn.GRU(
            cfg.hidden2,
            cfg.gru_hidden,
            num_layers=cfg.gru_layers,
            batch_first=True,
            dropout=cfg.dropout if cfg.gru_layers > 1 else 0.0,
        )
        # nn.Linear/nn.GRU already draw weights uniformly in +-1/sqrt(fan_in);
        # only the biases are reset.
        for name, p in self.named_parameters():
            if "bias" in name:
                nn.init.zeros_(p)

    def _hidden_states(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"expected (..., n, {self.cfg.input_dim}) input, got {tuple(x.shape)}")
        _check_finite(x)
        out, _ = self.gru(self.feed(x))
        return out


class VariantEncoder(_StepGRUEncoder):
    """Maps ``(B, n, m)`` measurements to ``(B, n, q)`` observables, ``q = gru_hidden``."""

    @property
    def observable_dim(self) -> int:
        return self.cfg.gru_hidden

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._hidden_states(x)


class InvariantEncoder(_StepGRUEncoder):
    """Maps ``(B, n, m)`` to ``(B, n, m)`` through the GRU and a dimension-matching layer."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__(cfg)
        self.out = nn.Linear(cfg.gru_hidden, cfg.input_dim)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self._hidden_states(x))


def lift(x: torch.Tensor, psi: torch.Tensor) -> torch.Tensor:
    """Measurement-inclusive observables ``[x | psi]`` along the last axis."""
    if x.shape[:-1] != psi.shape[:-1]:
        raise ShapeError(f"cannot lift {tuple(x.shape)} with {tuple(psi.shape)}")
    return torch.cat([x, psi], dim=-1)


def project_future(encoder: VariantEncoder, x_next: torch.Tensor) -> torch.Tensor:
    """Training target: the next-step measurements lifted with the shared variant encoder."""
    psi = encoder(x_next)
    if x_next.dim() == 2:
        x_next = x_next.unsqueeze(0)
    return lift(x_next, psi)


def gru_param_count(input_dim: int, hidden: int, layers: int) -> int:
    first = 3 * (input_dim * hidden + hidden * hidden + 2 * hidden)
    rest = 3 * (2 * hidden * hidden + 2 * hidden)
    return first + (layers - 1) * rest


def encoder_param_count(cfg: EncoderConfig, invariant: bool = False) -> int:
    """Closed-form parameter count of an encoder built from ``cfg``."""
    n = cfg.input_dim * cfg.hidden1 + cfg.hidden1
    n += cfg.hidden1 * cfg.hidden2 + cfg.hidden2
    n += gru_param_count(cfg.hidden2, cfg.gru_hidden, cfg.gru_layers)
    if invariant:
        n += cfg.gru_hidden * cfg.input_dim + cfg.input_dim
    return n


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
