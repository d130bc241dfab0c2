"""Finite Koopman operator matrices and a closed-form DMD fit used as an oracle."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from torch import nn

from .exceptions import NumericalError, ShapeError

INIT_NOISE = 1e-3


class KoopmanOperator(nn.Module):
    """A learnable ``d x d`` matrix advancing observables by one step.

    Rows of a sequence are observables at successive steps, so applying the
    operator computes ``seq @ K.T``.  Initialised at identity plus uniform
    noise in ``+-1e-3``.
    """

    def __init__(self, dim: int, generator: Optional[torch.Generator] = None, dtype=None):
        super().__init__()
        if dim < 1:
            raise ShapeError("operator dimension must be positive")
        dtype = dtype or torch.get_default_dtype()
        noise = (torch.rand(dim, dim, generator=generator, dtype=dtype) * 2 - 1) * INIT_NOISE
        self.weight = nn.Parameter(torch.eye(dim, dtype=dtype) + noise)

    @classmethod
    def from_matrix(cls, matrix) -> "KoopmanOperator":
        m = torch.as_tensor(np.asarray(matrix))
        if m.dim() != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"operator matrix must be square, got {tuple(m.shape)}")
        if not torch.isfinite(m).all():
            raise NumericalError("operator matrix has non-finite entries")
        op = cls(m.shape[0], dtype=m.dtype)
        with torch.no_grad():
            op.weight.copy_(m)
        return op

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @property
    def matrix(self) -> torch.Tensor:
        return self.weight

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        return apply_operator(self.weight, seq)


def apply_operator(K, seq):
    """Advance every row of ``seq`` (shape ``(..., n, d)``) by ``K``."""
    if isinstance(K, KoopmanOperator):
        K = K.weight
    if seq.shape[-1] != K.shape[0]:
        raise ShapeError(f"sequence width {seq.shape[-1]} != operator size {K.shape[0]}")
    return seq @ K.T


def operator_norms(K_var, K_inv):
    """Sum of the Frobenius norms of the two operators."""
    mats = [k.weight if isinstance(k, KoopmanOperator) else k for k in (K_var, K_inv)]
    if all(isinstance(k, torch.Tensor) for k in mats):
        return torch.linalg.matrix_norm(mats[0]) + torch.linalg.matrix_norm(mats[1])
    return float(sum(np.linalg.norm(np.asarray(k), "fro") for k in mats))


def dmd_least_squares(x_t, x_next) -> KoopmanOperator:
    """Least-squares operator with ``x_next.T ~= K @ x_t.T`` via the pseudo-inverse."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    if x_t.shape != x_next.shape or x_t.ndim != 2:
        raise ShapeError("snapshot matrices must be 2-D and of equal shape")
    K = x_next.T @ np.linalg.pinv(x_t.T)
    return KoopmanOperator.from_matrix(K)


def dmd_residual(K, x_t, x_next) -> float:
    K = np.asarray(K.weight.detach() if isinstance(K, KoopmanOperator) else K)
    return float(np.linalg.norm(np.asarray(x_next).T - K @ np.asarray(x_t).T, "fro"))
