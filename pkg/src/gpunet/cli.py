"""Command-line surface: count / train / eval / predict / features / gradcheck.

Every option can also come from a JSON config file (--config) whose keys
mirror the flag names; explicit flags win over the file, the file wins over
built-in defaults. Exit codes: 0 success, 1 check failure, 2 usage or data
error, 3 numeric divergence.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import data as dataio
from .costs import model_cost
from .errors import DivergenceError, GpunetError, NonFiniteError, SpecError
from .gradcheck import run_suite
from .metrics import binarize
from .models import DEFAULT_WIDTHS, MODEL_NAMES, UNet, build_model, config_for
from .train import TrainConfig, evaluate, load_checkpoint, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


# ---------------------------------------------------------------------------
# Option merging: flags > config file > defaults


def _load_config_file(path) -> dict:
    try:
        with open(path) as f:
            loaded = json.load(f)
    except json.JSONDecodeError as exc:
        raise SpecError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise SpecError(f"config file {path} must hold a JSON object")
    return loaded


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    merged = dict(defaults)
    if getattr(args, "config", None):
        loaded = _load_config_file(args.config)
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise SpecError(f"unknown config keys {unknown}; valid: {sorted(defaults)}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key)
        if value is not None:
            merged[key] = value
    return merged


def _require(merged: dict, *keys: str) -> None:
    missing = [k for k in keys if merged[k] is None]
    if missing:
        raise SpecError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _parse_widths(value):
    if value is None:
        return None
    if isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split() if p]
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise SpecError(f"widths must be comma-separated integers, got {value!r}") from None
    return tuple(int(v) for v in value)


# ---------------------------------------------------------------------------
# Dataset plumbing shared by train/eval


def _resize_sample(s: dataio.Sample, h: int, w: int) -> dataio.Sample:
    if s.image.shape[2:] == (h, w):
        return s
    return dataio.Sample(
        id=s.id,
        image=dataio.resize_bilinear(s.image, h, w),
        mask=dataio.resize_mask(s.mask, h, w),
    )


def _resolve_splits(merged: dict):
    """Load --data-dir or generate --synthetic N, resize, split 70/10/20."""
    if (merged["data_dir"] is None) == (merged["synthetic"] is None):
        raise SpecError("exactly one of --data-dir or --synthetic is required")
    h, w = int(merged["height"]), int(merged["width"])
    if merged["synthetic"] is not None:
        samples = dataio.synth_shapes(int(merged["synthetic"]), h, w, seed=int(merged["seed"]))
    else:
        samples = [_resize_sample(s, h, w) for s in dataio.load_dataset(merged["data_dir"])]
    ids = [s.id for s in samples]
    by_id = {s.id: s for s in samples}
    parts = dataio.split_dataset(ids, dataio.SplitSpec(seed=int(merged["seed"])))
    return tuple([by_id[i] for i in part] for part in parts)


def _load_model_input(model: UNet, image_path) -> np.ndarray:
    x = dataio.load_image(image_path)
    model._check_input(x)
    return x


# ---------------------------------------------------------------------------
# Commands


COUNT_DEFAULTS = {
    "model": "unet", "height": 192, "width": 256,
    "widths": None, "in_channels": 3, "format": "table",
}


def cmd_count(args) -> int:
    merged = _merged(args, COUNT_DEFAULTS)
    cfg = config_for(
        merged["model"],
        widths=_parse_widths(merged["widths"]) or DEFAULT_WIDTHS,
        in_channels=int(merged["in_channels"]),
    )
    report = model_cost(UNet(cfg), int(merged["height"]), int(merged["width"]))
    if merged["format"] == "json":
        print(json.dumps(report.as_dict()))
    else:
        print(report.table())
    return EXIT_OK


TRAIN_DEFAULTS = {
    "model": "gpu-net", "data_dir": None, "synthetic": None,
    "height": 96, "width": 96, "widths": None,
    "epochs": 100, "lr": 1e-3, "batch": 4, "seed": 0,
    "optimizer": "adam", "eval_every": 1,
    "out": "gpunet.ckpt", "history": None,
}


def cmd_train(args) -> int:
    merged = _merged(args, TRAIN_DEFAULTS)
    train_set, val_set, _ = _resolve_splits(merged)
    cfg = config_for(
        merged["model"],
        widths=_parse_widths(merged["widths"]) or DEFAULT_WIDTHS,
        in_channels=int(train_set[0].image.shape[1]),
    )
    model = build_model(cfg, seed=int(merged["seed"]))
    tcfg = TrainConfig(
        epochs=int(merged["epochs"]),
        learning_rate=float(merged["lr"]),
        batch_size=int(merged["batch"]),
        seed=int(merged["seed"]),
        optimizer=merged["optimizer"],
        eval_every=int(merged["eval_every"]),
        checkpoint=merged["out"],
    )
    history_path = merged["history"] or f"{merged['out']}.history.jsonl"
    with open(history_path, "w") as hist_file:

        def on_epoch(row: dict) -> None:
            hist_file.write(json.dumps(row) + "\n")
            hist_file.flush()
            print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))

        train(model, train_set, val_set, tcfg, on_epoch=on_epoch)
    print(f"checkpoint: {merged['out']}")
    print(f"history: {history_path}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "ckpt": None, "data_dir": None, "synthetic": None,
    "height": 96, "width": 96, "seed": 0,
    "split": "test", "batch": 4, "mode": "pooled",
}


def cmd_eval(args) -> int:
    merged = _merged(args, EVAL_DEFAULTS)
    _require(merged, "ckpt")
    model = load_checkpoint(merged["ckpt"])
    splits = dict(zip(("train", "val", "test"), _resolve_splits(merged)))
    if merged["split"] not in splits:
        raise SpecError(f"split must be train, val or test, got {merged['split']!r}")
    record = evaluate(model, splits[merged["split"]], int(merged["batch"]), merged["mode"])
    print(json.dumps(record))
    return EXIT_OK


PREDICT_DEFAULTS = {"ckpt": None, "image": None, "out": "mask.pgm"}


def cmd_predict(args) -> int:
    merged = _merged(args, PREDICT_DEFAULTS)
    _require(merged, "ckpt", "image")
    model = load_checkpoint(merged["ckpt"])
    x = _load_model_input(model, merged["image"])
    mask = binarize(model.forward(x, train=False))
    dataio.save_image(mask, merged["out"])
    print(f"mask: {merged['out']}")
    return EXIT_OK


FEATURES_DEFAULTS = {"ckpt": None, "image": None, "level": "first", "out_dir": "features"}


def cmd_features(args) -> int:
    merged = _merged(args, FEATURES_DEFAULTS)
    _require(merged, "ckpt", "image")
    model = load_checkpoint(merged["ckpt"])
    x = _load_model_input(model, merged["image"])
    maps = model.feature_maps(x, merged["level"])
    out_dir = merged["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    normalized = []
    for i, fmap in enumerate(maps):
        lo, hi = float(fmap.min()), float(fmap.max())
        if hi > lo:
            norm = (fmap - lo) / (hi - lo)
        else:
            norm = np.full_like(fmap, 128.0 / 255.0)
        normalized.append(norm)
        dataio.save_image(norm, os.path.join(out_dir, f"map_{i:03d}.pgm"))
    h, w = maps[0].shape[2:]
    cols = math.ceil(math.sqrt(len(maps)))
    rows = math.ceil(len(maps) / cols)
    sheet = np.zeros((1, 1, rows * h, cols * w), dtype=maps[0].dtype)
    for i, norm in enumerate(normalized):
        r, c = divmod(i, cols)
        sheet[:, :, r * h : (r + 1) * h, c * w : (c + 1) * w] = norm
    dataio.save_image(sheet, os.path.join(out_dir, "sheet.pgm"))
    print(f"wrote {len(maps)} maps + sheet.pgm to {out_dir}")
    return EXIT_OK


GRADCHECK_DEFAULTS = {"scope": "primitives", "dtype": "32", "seed": 0}


def cmd_gradcheck(args) -> int:
    merged = _merged(args, GRADCHECK_DEFAULTS)
    dtype_name = "float64" if str(merged["dtype"]) == "64" else "float32"
    results = run_suite(merged["scope"], dtype_name, seed=int(merged["seed"]))
    failed = False
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failed = failed or not r.passed
        print(f"{r.name:28s} rel_err={r.rel_err:.3e}  tol={r.tol:g}  {status}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpunet",
        description="Ghost/GP U-Net segmentation toolkit: cost analysis, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file whose keys mirror the flag names; flags win")
        return p

    p = add("count", cmd_count, "print analytic parameter/FLOP counts")
    p.add_argument("--model", choices=sorted(MODEL_NAMES))
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--widths", help="comma-separated 5-level ladder, e.g. 8,16,32,64,128")
    p.add_argument("--in-channels", type=int, dest="in_channels", choices=(1, 3))
    p.add_argument("--format", choices=("table", "json"))

    p = add("train", cmd_train, "train a model and save the best-JS checkpoint")
    p.add_argument("--model", choices=sorted(MODEL_NAMES))
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--synthetic", type=int, help="generate N synthetic samples instead of loading")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--history", help="history JSONL path (default: <out>.history.jsonl)")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--synthetic", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--batch", type=int)
    p.add_argument("--mode", choices=("pooled", "per_image"))

    p = add("predict", cmd_predict, "write the binary mask for one image")
    p.add_argument("--ckpt")
    p.add_argument("--image")
    p.add_argument("--out")

    p = add("features", cmd_features, "dump per-channel feature maps as PGMs")
    p.add_argument("--ckpt")
    p.add_argument("--image")
    p.add_argument("--level", choices=("first", "last"))
    p.add_argument("--out-dir", dest="out_dir")

    p = add("gradcheck", cmd_gradcheck, "finite-difference checks of the backward passes")
    p.add_argument("--scope", choices=("primitives", "blocks", "model"))
    p.add_argument("--dtype", choices=("32", "64"))
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (DivergenceError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except GpunetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
