"""Loading, standardization and windowing of multivariate series.

Two on-disk layouts are understood:

* ``csv``: either a single CSV file that is split chronologically into
  train/val/test, or a directory holding ``train.csv``, ``test.csv`` and an
  optional ``test_label.csv``.  The header row is optional and detected
  automatically; a column called ``label`` or ``anomaly`` is taken as the
  ground truth, and ``timestamp*``/``time``/``date`` columns are dropped.
* ``npy``: a directory holding ``train.npy``, ``test.npy`` and
  ``test_label.npy`` (optionally ``val.npy`` and ``val_label.npy``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataQualityError, DatasetDimensionError, IoError, WindowingError

EPS_STD = 1e-8

LABEL_COLUMNS = ("label", "anomaly")
_TIME_COLUMNS = ("time", "date")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawSeries:
    """A (T, m) multivariate series with optional per-step anomaly labels."""

    values: np.ndarray
    channel_names: Optional[tuple] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataQualityError(f"series values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataQualityError("series contains NaN or Inf values")
        object.__setattr__(self, "values", _frozen(values))
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int64).ravel()
            if labels.shape[0] != values.shape[0]:
                raise DataQualityError(
                    f"labels length {labels.shape[0]} != series length {values.shape[0]}"
                )
            object.__setattr__(self, "labels", _frozen(labels))
        if self.channel_names is not None:
            names = tuple(str(c) for c in self.channel_names)
            if len(names) != values.shape[1]:
                raise DataQualityError("channel_names length does not match channel count")
            object.__setattr__(self, "channel_names", names)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: Optional[int] = None) -> "RawSeries":
        labels = None if self.labels is None else self.labels[start:stop]
        return RawSeries(self.values[start:stop], self.channel_names, labels)


class Standardizer:
    """Per-channel z-scoring with statistics frozen at ``fit`` time."""

    def __init__(self, eps: float = EPS_STD):
        self.eps = eps

    def fit(self, values):
        values = np.asarray(values, dtype=np.float64)
        self.mean_ = values.mean(axis=0)
        self.std_ = np.maximum(values.std(axis=0), self.eps)
        return self

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean_) / self.std_

    def fit_transform(self, values):
        return self.fit(values).transform(values)

    def inverse_transform(self, values):
        return np.asarray(values, dtype=np.float64) * self.std_ + self.mean_


@dataclass(frozen=True)
class DatasetSplit:
    train: RawSeries
    val: RawSeries
    test: RawSeries
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.train.n_channels


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    format: str = "csv"
    dims: Optional[int] = None
    val_fraction: float = 0.2
    # only used for a single-file CSV: fraction of rows held out for testing
    test_fraction: float = 0.5
    impute: bool = False


# ---------------------------------------------------------------------------
# readers


def _has_header(path: Path) -> bool:
    with open(path, newline="", encoding="utf-8") as fh:
        first = next(csv.reader(fh), None)
    if not first:
        raise IoError(f"{path} is empty")
    for cell in first:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        header = 0 if _has_header(path) else None
        df = pd.read_csv(path, header=header)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if header is None:
        df.columns = [f"ch{i}" for i in range(df.shape[1])]
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _split_frame(df: pd.DataFrame):
    """Separate a frame into (values frame, labels or None)."""
    labels = None
    drop = []
    for col in df.columns:
        low = col.lower()
        if low in LABEL_COLUMNS:
            labels = df[col].to_numpy()
            drop.append(col)
        elif low.startswith("timestamp") or low in _TIME_COLUMNS:
            drop.append(col)
    return df.drop(columns=drop), labels


def _clean(values: pd.DataFrame | np.ndarray, impute: bool, what: str) -> np.ndarray:
    frame = pd.DataFrame(values).apply(pd.to_numeric, errors="coerce")
    arr = frame.to_numpy(dtype=np.float64)
    if np.all(np.isfinite(arr)):
        return arr
    if not impute:
        raise DataQualityError(f"{what} contains NaN/Inf and imputation is disabled")
    frame = frame.replace([np.inf, -np.inf], np.nan).ffill().bfill().fillna(0.0)
    return frame.to_numpy(dtype=np.float64)


def _check_dims(arr: np.ndarray, dims: Optional[int], what: str):
    if dims is not None and arr.shape[1] != dims:
        raise DatasetDimensionError(f"{what}: declared {dims} channels, file has {arr.shape[1]}")


def _load_npy(path: Path, spec: DatasetSpec):
    def read(name, required=True):
        f = path / name
        if not f.exists():
            if required:
                raise IoError(f"missing {f}")
            return None
        try:
            return np.load(f, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise IoError(f"cannot read {f}: {exc}") from exc

    train = read("train.npy")
    test = read("test.npy")
    test_labels = read("test_label.npy", required=False)
    val = read("val.npy", required=False)
    val_labels = read("val_label.npy", required=False)
    parts = {}
    for name, arr in (("train", train), ("test", test), ("val", val)):
        if arr is None:
            continue
        arr = np.asarray(arr)
        if arr.ndim == 1:
            arr = arr[:, None]
        parts[name] = _clean(arr, spec.impute, name)
    return parts, None, test_labels, val_labels


def _load_csv(path: Path, spec: DatasetSpec):
    if path.is_dir():
        train_df, _ = _split_frame(_read_csv(_require(path / "train.csv")))
        test_df, test_labels = _split_frame(_read_csv(_require(path / "test.csv")))
        label_file = path / "test_label.csv"
        if label_file.exists():
            ldf = _read_csv(label_file)
            ldf, lab = _split_frame(ldf)
            test_labels = lab if lab is not None else ldf.iloc[:, -1].to_numpy()
        names = tuple(train_df.columns)
        parts = {
            "train": _clean(train_df, spec.impute, "train"),
            "test": _clean(test_df, spec.impute, "test"),
        }
        return parts, names, test_labels, None

    df, labels = _split_frame(_read_csv(path))
    names = tuple(df.columns)
    values = _clean(df, spec.impute, str(path))
    n_test = int(round(len(values) * spec.test_fraction))
    cut = len(values) - n_test
    parts = {"train": values[:cut], "test": values[cut:]}
    train_labels = None if labels is None else labels[:cut]
    test_labels = None if labels is None else labels[cut:]
    return parts, names, test_labels, train_labels


def _require(path: Path) -> Path:
    if not path.exists():
        raise IoError(f"no such file: {path}")
    return path


def load_dataset(spec: DatasetSpec) -> DatasetSplit:
    """Read a dataset and return train/val/test partitions z-scored with train statistics."""
    path = Path(spec.path)
    if not path.exists():
        raise IoError(f"no such path: {path}")
    if not 0.0 <= spec.val_fraction < 1.0:
        raise DataQualityError("val_fraction must lie in [0, 1)")
    fmt = spec.format.lower()
    train_labels = None
    val_labels = None
    if fmt == "csv":
        parts, names, test_labels, train_labels = _load_csv(path, spec)
    elif fmt in ("npy", "npy-directory"):
        parts, names, test_labels, val_labels = _load_npy(path, spec)
    else:
        raise IoError(f"unknown dataset format {spec.format!r}")

    for name, arr in parts.items():
        _check_dims(arr, spec.dims, name)
    m = parts["train"].shape[1]
    if parts["test"].shape[1] != m:
        raise DatasetDimensionError("train and test channel counts differ")

    train = parts["train"]
    if "val" in parts:
        val = parts["val"]
    else:
        n_val = int(round(len(train) * spec.val_fraction))
        val = train[len(train) - n_val:]
        if train_labels is not None:
            val_labels = train_labels[len(train) - n_val:]
            train_labels = train_labels[: len(train) - n_val]
        train = train[: len(train) - n_val]
    if len(train) == 0:
        raise DataQualityError("training partition is empty")

    scaler = Standardizer().fit(train)
    return DatasetSplit(
        train=RawSeries(scaler.transform(train), names, train_labels),
        val=RawSeries(scaler.transform(val), names, val_labels),
        test=RawSeries(scaler.transform(parts["test"]), names, test_labels),
        mean=_frozen(scaler.mean_),
        std=_frozen(scaler.std_),
    )


# ---------------------------------------------------------------------------
# windowing


@dataclass(frozen=True)
class WindowBatch:
    windows: np.ndarray
    window_origin: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "windows", _frozen(self.windows))
        object.__setattr__(self, "window_origin", _frozen(np.asarray(self.window_origin, dtype=np.int64)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(self.labels))

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    @property
    def n_channels(self) -> int:
        return self.windows.shape[2]

    def flat_values(self) -> np.ndarray:
        """Windows concatenated back into a (B*L, m) series."""
        return self.windows.reshape(-1, self.n_channels)

    def flat_labels(self) -> Optional[np.ndarray]:
        return None if self.labels is None else self.labels.reshape(-1)


def make_windows(series, L: int) -> WindowBatch:
    """Cut ``series`` into non-overlapping windows of length ``L``; the tail is dropped."""
    if isinstance(series, RawSeries):
        values, labels = series.values, series.labels
    else:
        values = np.asarray(series, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        labels = None
    if L < 1:
        raise WindowingError(f"window length must be positive, got {L}")
    T = values.shape[0]
    if T < L:
        raise WindowingError(f"series of length {T} is shorter than window length {L}")
    n = T // L
    windows = values[: n * L].reshape(n, L, values.shape[1])
    win_labels = None if labels is None else labels[: n * L].reshape(n, L)
    return WindowBatch(windows, np.arange(n) * L, win_labels)


def shift_pair(window):
    """Return ``(X_t, X_next)``: all rows but the last, and all rows but the first.

    Works on a single ``(L, m)`` window or on any array whose second-to-last
    axis is time.
    """
    if window.shape[-2] < 2:
        raise WindowingError("need at least two time steps to form a shifted pair")
    return window[..., :-1, :], window[..., 1:, :]


def write_series_csv(series: RawSeries, path, channel_names: Optional[Sequence[str]] = None):
    names = channel_names or series.channel_names or [f"ch{i}" for i in range(series.n_channels)]
    df = pd.DataFrame(series.values, columns=list(names))
    if series.labels is not None:
        df["label"] = series.labels
    df.to_csv(path, index=False)
