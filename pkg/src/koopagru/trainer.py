"""ADAM training with early stopping, and the on-disk checkpoint format.

A checkpoint is a directory::

    manifest.json        # version, configs, frequency selection, array table
    <param-name>.bin     # raw little-endian float32, C order

"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data_io import DatasetSplit, WindowBatch, make_windows
from .detector import evaluate_val_errors  # noqa: F401  (re-exported for callers that train then calibrate)
from .exceptions import ConfigError, IoError, NumericalError, TrainError, WindowingError
from .model import KoopAGRUNet, ModelConfig
from .spectral import FrequencySelection, fit_dominant_spectrum

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ARRAY_DTYPE = "<f4"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be positive and max_epochs non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_loss: Optional[float] = None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def build_model(config: ModelConfig, train_windows: WindowBatch, seed: int = 0) -> KoopAGRUNet:
    """Fit the frequency selection on ``train_windows`` and initialise a model."""
    selection = fit_dominant_spectrum(train_windows, config.alpha)
    torch.manual_seed(seed)
    return KoopAGRUNet(config, train_windows.n_channels, selection, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    arrays: dict
    selection: FrequencySelection
    model_config: ModelConfig
    train_config: TrainConfig
    n_channels: int
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: KoopAGRUNet, train_config: TrainConfig, **metadata) -> "Checkpoint":
        arrays = {k: v.detach().cpu().numpy().astype(ARRAY_DTYPE) for k, v in model.state_dict().items()}
        return cls(arrays, model.selection, copy.deepcopy(model.config), train_config,
                   model.n_channels, dict(metadata))

    def build_model(self) -> KoopAGRUNet:
        model = KoopAGRUNet(self.model_config, self.n_channels, self.selection)
        state = {k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in self.arrays.items()}
        model.load_state_dict(state)
        model.eval()
        return model

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        table = {}
        for name, arr in self.arrays.items():
            fname = f"{name}.bin"
            np.ascontiguousarray(arr, dtype=ARRAY_DTYPE).tofile(path / fname)
            table[name] = {"file": fname, "shape": list(arr.shape), "dtype": ARRAY_DTYPE}
        manifest = {
            "format_version": FORMAT_VERSION,
            "n_channels": self.n_channels,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "frequency_selection": self.selection.to_dict(),
            "metadata": self.metadata,
            "arrays": table,
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        mfile = path / "manifest.json"
        if not mfile.exists():
            raise IoError(f"no checkpoint manifest at {mfile}")
        manifest = json.loads(mfile.read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise IoError(f"unsupported checkpoint version {manifest.get('format_version')}")
        arrays = {}
        for name, entry in manifest["arrays"].items():
            data = np.fromfile(path / entry["file"], dtype=entry["dtype"])
            arrays[name] = data.reshape(entry["shape"])
        return cls(
            arrays,
            FrequencySelection.from_dict(manifest["frequency_selection"]),
            ModelConfig.from_dict(manifest["model_config"]),
            TrainConfig.from_dict(manifest["train_config"]),
            int(manifest["n_channels"]),
            manifest.get("metadata", {}),
        )


# ---------------------------------------------------------------------------
# training


def _mean_loss(model: KoopAGRUNet, windows: np.ndarray, batch_size: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            batch = windows[i:i + batch_size]
            total += model.loss(batch).total.item() * len(batch)
    return total / len(windows)


def _windows_or_none(series, L: int) -> Optional[WindowBatch]:
    try:
        return make_windows(series, L)
    except WindowingError:
        return None


def train(model: KoopAGRUNet, split, cfg: TrainConfig):
    """Optimise ``model`` in place and return ``(checkpoint, report)``.

    ``split`` is a :class:`DatasetSplit` or a ``(train_windows, val_windows)``
    pair.  The returned checkpoint (and ``model`` itself on return) holds the
    parameters of the epoch with the lowest validation loss.
    """
    L = model.config.window
    if isinstance(split, DatasetSplit):
        train_w = _windows_or_none(split.train, L)
        val_w = _windows_or_none(split.val, L)
    else:
        train_w, val_w = split
    if train_w is None or len(train_w) == 0:
        raise TrainError("training partition yields no complete windows")
    train_arr = np.asarray(train_w.windows, dtype=np.float32)
    val_arr = None if val_w is None or len(val_w) == 0 else np.asarray(val_w.windows, dtype=np.float32)

    report = TrainReport()
    if cfg.max_epochs == 0:
        return Checkpoint.from_model(model, cfg, seed=cfg.seed, epoch=0), report

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")
    wait = 0

    for epoch in range(cfg.max_epochs):
        model.train()
        perm = torch.randperm(len(train_arr), generator=gen).numpy()
        running, seen = 0.0, 0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = train_arr[perm[start:start + cfg.batch_size]]
            opt.zero_grad()
            try:
                terms = model.loss(batch)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from exc
            terms.total.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            running += terms.total.item() * len(batch)
            seen += len(batch)
        train_loss = running / seen
        val_loss = _mean_loss(model, val_arr, cfg.batch_size) if val_arr is not None else train_loss
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        logger.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)

        if val_loss < best_val:
            best_val, wait = val_loss, 0
            best_state = copy.deepcopy(model.state_dict())
            report.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                report.stopped_early = True
                break

    model.load_state_dict(best_state)
    model.eval()
    report.best_val_loss = best_val
    ckpt = Checkpoint.from_model(model, cfg, seed=cfg.seed, epoch=report.best_epoch, val_loss=best_val)
    return ckpt, report
