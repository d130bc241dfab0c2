"""``koopagru`` command-line entry point.

Subcommands::

    koopagru synth  --out data/            # spiked sine-mixture CSV + matching config
    koopagru train  --config cfg.json      # checkpoint, metrics, loss curve
    koopagru detect --config cfg.json      # scores, metrics, score plot
    koopagru sweep  --config cfg.json --param beta

Settings resolve as preset < ``--config`` file < flags.  Exit codes: 0 on
success, 2 for usage/config/data problems, 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import config as cfgmod  # noqa: E402
from .data_io import RawSeries, load_dataset, make_windows, write_series_csv  # noqa: E402
from .detector import calibrate_threshold, detect, evaluate_val_errors, score_test  # noqa: E402
from .estimator import KoopAGRUDetector  # noqa: E402
from .exceptions import KoopAGRUError, NumericalError  # noqa: E402
from .synth import spike_fixture  # noqa: E402

logger = logging.getLogger("koopagru")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

SWEEP_GRIDS = {
    "alpha": [0.0, 0.1, 0.5, 1.0],
    "beta": [0.0, 0.1, 0.3, 0.5, 0.8, 1.0],
    "lambda": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
    "r": [0.5, 1.0, 4.0, 5.0],
}

# flag dest -> (section, key) in the config dict
_OVERRIDES = {
    "data_path": ("data", "path"),
    "format": ("data", "format"),
    "dims": ("data", "dims"),
    "val_fraction": ("data", "val_fraction"),
    "test_fraction": ("data", "test_fraction"),
    "alpha": ("model", "alpha"),
    "beta": ("model", "beta"),
    "lambda_": ("model", "lambda"),
    "window": ("model", "window"),
    "q": ("model", "q"),
    "gru_layers_variant": ("model", "gru_layers_variant"),
    "gru_layers_invariant": ("model", "gru_layers_invariant"),
    "lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "max_epochs"),
    "patience": ("train", "patience"),
    "seed": ("train", "seed"),
    "r": ("detect", "r"),
}


def _version() -> str:
    try:
        return metadata.version("koopagru")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run config (a previous run_manifest.json also works)")
    p.add_argument("--preset", choices=cfgmod.PRESETS, help="start from a shipped dataset preset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--r", type=float, help="percent of validation points above the threshold")
    p.add_argument("--window", type=int)
    p.add_argument("--no-point-adjust", action="store_true")
    p.add_argument("--data-path")
    p.add_argument("--format", choices=["csv", "npy"])
    p.add_argument("--dims", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--q", type=int, help="observable dimension")
    p.add_argument("--gru-layers-variant", type=int)
    p.add_argument("--gru-layers-invariant", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopagru", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a spiked sine-mixture CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--windows", type=int, default=200)
    p.add_argument("--test-windows", type=int, default=80)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--spikes", type=int, default=10)
    p.add_argument("--magnitude", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--noise", type=float)

    p = sub.add_parser("train", help="train a model and calibrate its threshold")
    _common(p)

    p = sub.add_parser("detect", help="score the test partition with a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint directory (default: <out>/checkpoint)")

    p = sub.add_parser("sweep", help="train+detect over a one-parameter grid")
    _common(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_GRIDS))
    p.add_argument("--values", help="comma-separated grid (default: the standard ablation grid)")
    return parser


def resolve_config(args, require_data: bool = True) -> cfgmod.RunConfig:
    raw = {}
    if args.preset:
        raw = cfgmod.load_preset(args.preset)
    if args.config:
        raw = cfgmod.merge(raw, cfgmod.read_config_file(args.config))
    for dest, (section, key) in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            raw.setdefault(section, {})
            raw[section] = dict(raw[section] or {}, **{key: value})
    if args.no_point_adjust:
        raw.setdefault("detect", {})["point_adjust"] = False
    if args.out:
        raw["out"] = args.out
    raw.pop("meta", None)
    return cfgmod.resolve(raw, require_data=require_data)


# ---------------------------------------------------------------------------
# artifacts


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def write_manifest(out: Path, cfg: cfgmod.RunConfig, command: str, **extra):
    manifest = cfg.to_dict()
    manifest["meta"] = {"command": command, "version": _version(), "seed": cfg.train.seed, **extra}
    _write_json(out / "run_manifest.json", manifest)


def _plot_loss(report, path: Path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = np.arange(len(report.train_loss))
    ax.plot(epochs, report.train_loss, label="train")
    ax.plot(epochs, report.val_loss, label="validation")
    if report.best_epoch is not None:
        ax.axvline(report.best_epoch, color="grey", ls=":", label="best")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_scores(index, scores, delta, labels, path: Path):
    fig, ax = plt.subplots(figsize=(10, 3.5))
    ax.plot(index, scores, lw=0.7, label="score")
    ax.axhline(delta, color="red", ls="--", lw=0.8, label="threshold")
    if labels is not None:
        padded = np.concatenate([[0], labels.astype(np.int8), [0]])
        d = np.diff(padded)
        for a, b in zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)):
            ax.axvspan(index[a], index[b - 1] + 1, color="orange", alpha=0.3, lw=0)
    ax.set_xlabel("time step")
    ax.set_ylabel("prediction error")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    kw = {k: v for k, v in (("magnitude", args.magnitude), ("width", args.width),
                            ("noise_std", args.noise)) if v is not None}
    fx = spike_fixture(L=args.window, n_windows=args.windows, m=args.channels, n_spikes=args.spikes,
                       test_windows=args.test_windows, seed=args.seed, **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = np.vstack([fx.train.values, fx.test.values])
    labels = np.concatenate([np.zeros(len(fx.train), dtype=np.int64), fx.test.labels])
    write_series_csv(RawSeries(values, labels=labels), out / "data.csv")
    config = {
        "data": {"path": str((out / "data.csv").resolve()), "format": "csv", "dims": args.channels,
                 "test_fraction": args.test_windows / args.windows},
        "model": {"window": args.window},
    }
    _write_json(out / "config.json", config)
    print(f"wrote {out / 'data.csv'} ({len(values)} rows, {int(labels.sum())} anomalous)")
    return EXIT_OK


def _fit(cfg: cfgmod.RunConfig, split) -> KoopAGRUDetector:
    det = KoopAGRUDetector.from_configs(cfg.model, cfg.train, r=cfg.detect.r,
                                        val_fraction=cfg.data.val_fraction, standardize=False)
    X_val = split.val.values if len(split.val) >= cfg.model.window else None
    return det.fit(split.train.values, X_val=X_val)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    split = load_dataset(cfg.data)
    det = _fit(cfg, split)
    out.mkdir(parents=True, exist_ok=True)
    det.save(out / "checkpoint")
    rep = det.report_
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        w.writerows(zip(range(len(rep.train_loss)), rep.train_loss, rep.val_loss))
    _plot_loss(rep, out / "loss_curve.png")
    _write_json(out / "metrics.json", {
        "epochs_run": len(rep.train_loss),
        "best_epoch": rep.best_epoch,
        "best_val_loss": rep.best_val_loss,
        "final_train_loss": rep.train_loss[-1] if rep.train_loss else None,
        "stopped_early": rep.stopped_early,
        "r": det.threshold_.r,
        "delta": det.threshold_.delta,
    })
    write_manifest(out, cfg, "train")
    print(f"trained {len(rep.train_loss)} epochs, best val loss {rep.best_val_loss}; wrote {out}")
    return EXIT_OK


def _evaluate(det: KoopAGRUDetector, split, r: float):
    """Recalibrate at ``r`` and score the test partition: (scores, threshold, labels)."""
    L = det.window
    calib = split.val if len(split.val) >= L else split.train
    threshold = calibrate_threshold(evaluate_val_errors(det.model_, make_windows(calib, L)), r)
    test_w = make_windows(split.test, L)
    scores = score_test(det.model_, test_w)
    labels = None if test_w.labels is None else test_w.flat_labels()
    return scores, threshold, labels


def _metrics(scores, threshold, labels, point_adjust: bool) -> dict:
    raw = detect(scores, threshold, labels, point_adjustment=False).to_dict()
    adj = detect(scores, threshold, labels, point_adjustment=True).to_dict()
    primary = adj if point_adjust else raw
    return {**primary, "r": threshold.r, "delta": threshold.delta, "raw": raw, "point_adjusted": adj}


def cmd_detect(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint"
    if not (ckpt / "manifest.json").exists():
        print(f"error: no checkpoint at {ckpt}", file=sys.stderr)
        return EXIT_CONFIG
    det = KoopAGRUDetector.load(ckpt)
    # model and training settings come from the checkpoint, not the flags
    cfg.model, cfg.train = det.checkpoint_.model_config, det.checkpoint_.train_config
    split = load_dataset(cfg.data)
    scores, threshold, labels = _evaluate(det, split, cfg.detect.r)
    flags = (scores.scores > threshold.delta).astype(np.int64)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "score", "flag", "label"])
        lab = labels if labels is not None else [""] * len(scores)
        w.writerows(zip(scores.index.tolist(), scores.scores.tolist(), flags.tolist(), list(lab)))
    if labels is not None:
        metrics = _metrics(scores, threshold, labels, cfg.detect.point_adjust)
        metrics["adjusted"] = cfg.detect.point_adjust
    else:
        metrics = {"r": threshold.r, "delta": threshold.delta, "adjusted": cfg.detect.point_adjust,
                   "n_flagged": int(flags.sum())}
    _write_json(out / "metrics.json", metrics)
    _plot_scores(scores.index, scores.scores, threshold.delta, labels, out / "scores.png")
    write_manifest(out, cfg, "detect", checkpoint=str(ckpt))
    summary = f"f1={metrics['f1']:.4f}" if "f1" in metrics else f"{metrics['n_flagged']} flagged"
    print(f"r={threshold.r} delta={threshold.delta:.6g} {summary}; wrote {out}")
    return EXIT_OK


def _parse_values(param: str, text):
    if text is None:
        return list(SWEEP_GRIDS[param])
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise cfgmod.ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    values = _parse_values(args.param, args.values)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    split = load_dataset(base.data)
    rows = []
    shared = None  # r does not affect training, so one model serves the whole r grid
    for value in values:
        row = {"param": args.param, "value": value, "f1": None, "precision": None,
               "recall": None, "f1_raw": None, "status": "ok"}
        try:
            if args.param == "r":
                cfg = base
                if shared is None:
                    shared = _fit(cfg, split)
                det = shared
                r = value
            else:
                raw = base.to_dict()
                raw["model"][args.param] = value
                cfg = cfgmod.resolve(raw)
                det = _fit(cfg, split)
                r = cfg.detect.r
            scores, threshold, labels = _evaluate(det, split, r)
            if labels is None:
                raise cfgmod.ConfigError("sweeps need test labels")
            m = _metrics(scores, threshold, labels, base.detect.point_adjust)
            row.update(f1=m["f1"], precision=m["precision"], recall=m["recall"], f1_raw=m["raw"]["f1"])
        except Exception as exc:  # one bad grid point must not end the sweep
            logger.warning("sweep %s=%s failed: %s", args.param, value, exc)
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    done = [r for r in rows if r["status"] == "ok"]
    best = max(done, key=lambda r: r["f1"]) if done else None
    _write_json(out / "sweep_summary.json", {"param": args.param, "values": values,
                                              "best": best, "n_failed": len(rows) - len(done)})
    write_manifest(out, base, "sweep", param=args.param, values=values)
    for r in rows:
        mark = "  <- best" if r is best else ""
        f1 = "failed" if r["f1"] is None else f"f1={r['f1']:.4f}"
        print(f"{args.param}={r['value']:g}  {f1}{mark}")
    return EXIT_OK if done else EXIT_NUMERICAL


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (KoopAGRUError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
