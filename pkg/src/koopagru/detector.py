"""Prediction-error scoring, percentile thresholds, flagging and metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data_io import WindowBatch
from .exceptions import CalibrationError, ShapeError


@dataclass(frozen=True)
class ScoreSeries:
    """Non-negative scores and the time index each one is assigned to."""

    scores: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class Threshold:
    delta: float
    r: float
    source: str = "validation"


@dataclass(frozen=True)
class DetectionResult:
    flags: np.ndarray
    adjusted_flags: np.ndarray
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    adjusted: bool

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "adjusted": self.adjusted,
        }


def window_errors(model, windows) -> np.ndarray:
    """Per-step L2 error of next-step predictions, shape ``(B, L-1)``."""
    w = windows.windows if isinstance(windows, WindowBatch) else np.asarray(windows)
    pred = model.predict_next(w)
    actual = w[:, 1:, :]
    return np.linalg.norm(actual - pred, axis=-1)


def evaluate_val_errors(model, val_windows: WindowBatch) -> ScoreSeries:
    """Raw prediction errors: ``L-1`` scores per window, each assigned to its target step."""
    err = window_errors(model, val_windows)
    L = val_windows.window_length
    index = val_windows.window_origin[:, None] + np.arange(1, L)[None, :]
    return ScoreSeries(err.reshape(-1), index.reshape(-1))


def score_test(model, test_windows: WindowBatch) -> ScoreSeries:
    """One score per windowed time step.

    The error of predicting step ``t+1`` is assigned to ``t+1``; the first step
    of every window repeats that window's first score.
    """
    err = window_errors(model, test_windows)
    filled = np.concatenate([err[:, :1], err], axis=1)
    L = test_windows.window_length
    index = test_windows.window_origin[:, None] + np.arange(L)[None, :]
    return ScoreSeries(filled.reshape(-1), index.reshape(-1))


def calibrate_threshold(val_scores, r: float, upper: bool = True) -> Threshold:
    """Percentile threshold on validation scores.

    With ``upper=True`` (default) ``delta`` is the ``(100 - r)``-th percentile,
    so roughly ``r`` percent of validation points exceed it.  ``upper=False``
    takes the ``r``-th percentile literally.
    """
    scores = val_scores.scores if isinstance(val_scores, ScoreSeries) else np.asarray(val_scores)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise CalibrationError("cannot calibrate a threshold on an empty score set")
    if not 0 < r < 100:
        raise CalibrationError(f"r must lie strictly between 0 and 100, got {r}")
    q = 100.0 - r if upper else r
    return Threshold(float(np.percentile(scores, q, method="linear")), float(r))


def flag(scores, threshold) -> np.ndarray:
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores)
    delta = threshold.delta if isinstance(threshold, Threshold) else float(threshold)
    return (s > delta).astype(np.int64)


def _segments(labels: np.ndarray):
    padded = np.concatenate([[0], labels.astype(np.int8), [0]])
    d = np.diff(padded)
    return zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1))


def point_adjust(flags, labels) -> np.ndarray:
    """Mark a whole ground-truth segment as detected if any flag falls inside it."""
    flags = np.asarray(flags).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if flags.shape != labels.shape:
        raise ShapeError(f"flags {flags.shape} and labels {labels.shape} differ in shape")
    out = flags.copy()
    for start, stop in _segments(labels):
        if out[start:stop].any():
            out[start:stop] = 1
    return out


def _safe_div(a: float, b: float) -> float:
    return a / b if b > 0 else 0.0


def compute_metrics(flags, labels, adjusted: bool = False) -> DetectionResult:
    flags = np.asarray(flags).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if flags.shape != labels.shape:
        raise ShapeError(f"flags {flags.shape} and labels {labels.shape} differ in shape")
    tp = int(np.sum((flags == 1) & (labels == 1)))
    fp = int(np.sum((flags == 1) & (labels == 0)))
    fn = int(np.sum((flags == 0) & (labels == 1)))
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * p * r, p + r)
    return DetectionResult(flags, flags, p, r, f1, tp, fp, fn, adjusted)


def detect(scores, threshold: Threshold, labels, point_adjustment: bool = True) -> DetectionResult:
    """Flag ``scores`` and score the flags (point-adjusted or raw) against ``labels``."""
    raw = flag(scores, threshold)
    labels = np.asarray(labels)
    adjusted = point_adjust(raw, labels) if point_adjustment else raw
    res = compute_metrics(adjusted, labels, adjusted=point_adjustment)
    return DetectionResult(raw, adjusted, res.precision, res.recall, res.f1,
                           res.tp, res.fp, res.fn, point_adjustment)


def labels_for(scores: ScoreSeries, labels: Optional[np.ndarray]) -> Optional[np.ndarray]:
    return None if labels is None else np.asarray(labels)[scores.index]
