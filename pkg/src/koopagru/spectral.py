"""Dominant-frequency selection and invariant/variant splitting of windows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data_io import WindowBatch
from .exceptions import SpectralError


def n_dominant(alpha: float, spectrum_size: int) -> int:
    """``round(alpha * spectrum_size)`` with halves rounded up, clamped to the spectrum."""
    k = math.floor(alpha * spectrum_size + 0.5)
    return int(min(max(k, 0), spectrum_size))


@dataclass(frozen=True)
class FrequencySelection:
    alpha: float
    window_length: int
    mean_amplitude: np.ndarray
    dominant: tuple

    @property
    def spectrum_size(self) -> int:
        return self.window_length // 2 + 1

    def mask(self) -> np.ndarray:
        keep = np.zeros(self.spectrum_size, dtype=bool)
        keep[list(self.dominant)] = True
        return keep

    def with_alpha(self, alpha: float) -> "FrequencySelection":
        """Re-rank the same amplitude table at a different ``alpha``."""
        return FrequencySelection(alpha, self.window_length, self.mean_amplitude,
                                  _rank(self.mean_amplitude, alpha))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "window_length": self.window_length,
            "spectrum_size": self.spectrum_size,
            "dominant": list(self.dominant),
            "mean_amplitude": [float(a) for a in self.mean_amplitude],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencySelection":
        amp = np.asarray(d["mean_amplitude"], dtype=np.float64)
        return cls(float(d["alpha"]), int(d["window_length"]), amp,
                   tuple(int(b) for b in d["dominant"]))


def _rank(mean_amplitude: np.ndarray, alpha: float) -> tuple:
    if not 0.0 <= alpha <= 1.0:
        raise SpectralError(f"alpha must lie in [0, 1], got {alpha}")
    k = n_dominant(alpha, mean_amplitude.shape[0])
    # stable sort on negated amplitude: ties go to the lower bin
    order = np.argsort(-mean_amplitude, kind="stable")
    return tuple(sorted(int(b) for b in order[:k]))


def _as_windows(windows) -> np.ndarray:
    if isinstance(windows, WindowBatch):
        windows = windows.windows
    arr = np.asarray(windows, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise SpectralError(f"expected (B, L, m) windows, got shape {arr.shape}")
    return arr


def fit_dominant_spectrum(train_windows, alpha: float) -> FrequencySelection:
    """Rank real-FFT bins by amplitude averaged over all windows and channels."""
    w = _as_windows(train_windows)
    if w.shape[0] == 0:
        raise SpectralError("cannot fit a frequency selection on an empty batch")
    amp = np.abs(np.fft.rfft(w, axis=1)).mean(axis=(0, 2))
    return FrequencySelection(float(alpha), w.shape[1], amp, _rank(amp, alpha))


def split_invariant_variant(window, sel: FrequencySelection):
    """Split windows into the dominant-bin reconstruction and the remainder.

    Accepts a single ``(L, m)`` window or a ``(B, L, m)`` batch; time is the
    second-to-last axis.
    """
    x = np.asarray(window, dtype=np.float64)
    L = x.shape[-2]
    if L != sel.window_length:
        raise SpectralError(f"window length {L} != fitted length {sel.window_length}")
    if not sel.dominant:
        x_inv = np.zeros_like(x)
    else:
        spec = np.fft.rfft(x, axis=-2)
        shape = [1] * x.ndim
        shape[-2] = sel.spectrum_size
        spec = spec * sel.mask().reshape(shape)
        x_inv = np.fft.irfft(spec, n=L, axis=-2)
    return x_inv, x - x_inv


class FourierDecomposer(TransformerMixin, BaseEstimator):
    """Transformer returning the invariant (or variant) part of each window.

    ``fit`` takes windows shaped ``(B, L, m)`` (or a :class:`WindowBatch`) and
    freezes the dominant-bin selection; ``transform`` applies it to any batch
    of the same window length.
    """

    def __init__(self, alpha: float = 0.1, component: str = "invariant"):
        self.alpha = alpha
        self.component = component

    def fit(self, X, y=None):
        if self.component not in ("invariant", "variant"):
            raise ValueError(f"component must be 'invariant' or 'variant', got {self.component!r}")
        self.selection_ = fit_dominant_spectrum(X, self.alpha)
        self.dominant_ = np.array(self.selection_.dominant, dtype=np.int64)
        return self

    def transform(self, X):
        check_is_fitted(self, "selection_")
        x_inv, x_var = split_invariant_variant(_as_windows(X), self.selection_)
        return x_inv if self.component == "invariant" else x_var
