"""Command line: gen | train | eval | infer | sweep (visualize is an alias of infer)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ABLATION_ROWS, RunConfig
from .estimator import ReferringSegmenter, TrainingDiverged
from .imageio import heatmap, read_ppm, write_pgm
from .language import Vocabulary, tokenize, unknown_words
from .synth import VAL_SEED_OFFSET, build_dataset, generate_split, load_split

CHECKPOINT_NAME = "checkpoint.ckpt"
LOG_NAME = "train_log.jsonl"
SWEEP_AXES = ("n_rounds", "n_gc", "ablation")
SWEEP_DEFAULTS = {"n_rounds": (0, 1, 2, 3), "n_gc": (0, 1, 2, 3)}


class CliError(RuntimeError):
    pass


# ------------------------------------------------------------------ config

def _bool_or_none(text):
    t = text.lower()
    if t in ("auto", "none"):
        return None
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false/auto, got {text!r}")


def _int_tuple(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def add_config_flags(parser):
    """One --flag per RunConfig field; unset flags stay None and do not override."""
    parser.add_argument("--config", type=Path, help="JSON run config; flags override it")
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "gc_relu":
            group.add_argument(flag, type=_bool_or_none, default=argparse.SUPPRESS,
                               metavar="{true,false,auto}")
        elif f.type in ("bool", bool):
            group.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("tuple", tuple):
            group.add_argument(flag, type=_int_tuple, default=None, metavar="A,B,...")
        elif f.type in ("str", str):
            group.add_argument(flag, default=None)
        elif f.type in ("int", int):
            group.add_argument(flag, type=int, default=None)
        else:
            group.add_argument(flag, type=float, default=None)


def resolve_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None) is not None:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
    for f in dataclasses.fields(RunConfig):
        if not hasattr(args, f.name):
            continue
        v = getattr(args, f.name)
        if v is not None or f.name == "gc_relu":
            base[f.name] = v
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# -------------------------------------------------------------------- data

def dataset_vocab(root):
    path = Path(root) / "vocab.txt"
    if not path.exists():
        raise CliError(f"{root}: no vocab.txt; is this a dataset directory?")
    return Vocabulary.load(path)


def _load(root, split, limit=None):
    if not (Path(root) / "manifest.jsonl").exists():
        raise CliError(f"{root}: manifest.jsonl not found")
    data = load_split(root, split, limit)
    if len(data) == 0:
        raise CliError(f"{root}: split {split!r} is empty")
    return data


def memory_splits(config: RunConfig):
    train = generate_split(config.data_seed, range(config.n_train), config.rel_fraction)
    val = generate_split(config.data_seed,
                         range(VAL_SEED_OFFSET, VAL_SEED_OFFSET + config.n_val), config.rel_fraction)
    return train, val


# ---------------------------------------------------------------- training

def train_model(config: RunConfig, train, val, vocab=None, log_path=None, out_dir=None):
    """Fit one model; streams JSONL records to ``log_path`` when given.

    On a non-finite loss the offending batch is written to
    ``out_dir/divergence.json`` and CliError is raised.
    """
    est = ReferringSegmenter.from_config(config, vocabulary=None if vocab is None else list(vocab.itos))
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", encoding="utf-8")
        fh.write(json.dumps({"kind": "header", "config_hash": config.config_hash(), "seed": config.seed,
                             "config": config.to_dict()}, sort_keys=True) + "\n")

    def log(rec):
        if fh is not None:
            fh.write(json.dumps(dict(rec, kind="val" if "val_overall_iou" in rec else "step"),
                                sort_keys=True) + "\n")

    try:
        types = [r.get("oracle_types") for r in train.records]
        est.fit(train.inputs(), train.masks, val.inputs() if val is not None else None,
                val.masks if val is not None else None,
                oracle_types=types if all(t is not None for t in types) else None, log=log)
    except TrainingDiverged as exc:
        if out_dir is not None:
            batch = [train.records[i] for i in exc.batch_index]
            _write_json(Path(out_dir) / "divergence.json", {
                "config_hash": config.config_hash(), "seed": config.seed, "step": exc.step,
                "epoch": exc.epoch, "loss": repr(exc.loss),
                "batch": [{k: r.get(k) for k in ("id", "expression", "tokens", "image", "mask")}
                          for r in batch]})
        raise CliError(f"training diverged: {exc}") from exc
    finally:
        if fh is not None:
            fh.close()
    est.config_ = config
    return est


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    config = resolve_config(args)
    out = Path(args.out)
    records = build_dataset(out, seed=config.data_seed, n_train=config.n_train, n_val=config.n_val,
                            rel_fraction=config.rel_fraction)
    n_train = sum(r["split"] == "train" for r in records)
    print(f"manifest: {out / 'manifest.jsonl'}")
    print(f"train: {n_train}  val: {len(records) - n_train}")
    return 0


def cmd_train(args):
    config = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = dataset_vocab(args.data)
    train = _load(args.data, "train", args.limit)
    val = _load(args.data, "val")
    config = config.replace(n_train=len(train), n_val=len(val))
    config.save(out / "config.json")
    est = train_model(config, train, val, vocab, out / LOG_NAME, out)
    path = est.save(out / CHECKPOINT_NAME)
    print(f"checkpoint: {path}")
    print(f"best epoch {est.best_epoch_}  val overall IoU {est.best_val_iou_:.4f}")
    return 0


def _load_checkpoint(path):
    try:
        return ReferringSegmenter.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(args):
    est = _load_checkpoint(args.checkpoint)
    vocab = dataset_vocab(args.data)
    if vocab != est.vocab_:
        raise CliError(f"vocabulary mismatch: checkpoint has {len(est.vocab_)} tokens, "
                       f"dataset {args.data} has {len(vocab)}")
    data = _load(args.data, args.split, args.limit)
    if data.images.shape[1] != est.config_.image_size:
        raise CliError(f"image size {data.images.shape[1]} does not match checkpoint "
                       f"image_size {est.config_.image_size}")
    report = est.evaluate(data.inputs(), data.masks)
    meta = {"config_hash": est.config_.config_hash(), "seed": est.config_.seed,
            "split": args.split, "checkpoint": str(args.checkpoint)}
    text = report.to_json(**meta)
    if args.json is not None:
        Path(args.json).write_text(text + "\n")
    else:
        print(text)
    print(report.table(), file=sys.stderr if args.json is None else sys.stdout)
    return 0


def _write_matrix(stem, values):
    write_pgm(f"{stem}.pgm", heatmap(values))
    np.savetxt(f"{stem}.csv", np.asarray(values), delimiter=",", fmt="%.17g")


def cmd_infer(args):
    est = _load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image = read_ppm(args.image).astype(np.float64) / 255.0
    oov = unknown_words(args.expression, est.vocab_)
    if oov:
        warnings.warn(f"out-of-vocabulary words mapped to <unk>: {' '.join(oov)}", stacklevel=1)
    tokens = tokenize(args.expression, est.vocab_)
    maps = est.affinity_maps(image, tokens)
    mask = est.predict([(image, tokens)])[0]
    prob = est.predict_proba([(image, tokens)])[0]
    write_pgm(out / "mask.pgm", mask * 255)
    write_pgm(out / "probability.pgm", heatmap(prob))
    H, W = maps["logits"].shape
    for lv, B1 in maps["B1"].items():
        _write_matrix(out / f"B1_level{lv}", B1)
        for t in range(B1.shape[1]):
            write_pgm(out / f"B1_level{lv}_word{t}.pgm", heatmap(B1[:, t].reshape(H, W)))
    for lv, A in maps["A"].items():
        _write_matrix(out / f"A_level{lv}", A)
    for k, rnd in enumerate(maps["pool"]):
        for lv, lam in rnd.items():
            write_pgm(out / f"pool_round{k + 1}_level{lv}.pgm", heatmap(lam.reshape(H, W)))
    words = [est.vocab_.itos[i] for i in tokens]
    _write_json(out / "summary.json", {
        "config_hash": est.config_.config_hash(), "seed": est.config_.seed,
        "expression": args.expression, "words": words, "unknown": oov,
        "word_types": maps["P"].tolist(), "mask_pixels": int(mask.sum()),
        "grid": [H, W], "levels_with_graph": sorted(maps["A"])})
    print(f"mask: {out / 'mask.pgm'} ({int(mask.sum())} pixels)")
    return 0


def sweep_grid(axis, values=None):
    """(label, overrides) per sweep row; n_gc = 0 means reasoning switched off."""
    if axis == "ablation":
        return [(name, dict(ov)) for name, ov in ABLATION_ROWS]
    if axis not in SWEEP_DEFAULTS:
        raise CliError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    values = SWEEP_DEFAULTS[axis] if values is None else values
    rows = []
    for v in values:
        if axis == "n_gc":
            rows.append((str(v), {"n_gc": max(int(v), 1), "rar": int(v) > 0}))
        else:
            rows.append((str(v), {axis: int(v)}))
    return rows


def run_sweep(config, axis, values=None, seeds=None, data=None, details=None):
    """Train and evaluate each grid row for each seed; returns CSV rows
    (label, mean overall IoU, mean Prec@0.5). Failures give NaN rows."""
    seeds = [config.seed] if seeds is None else list(seeds)
    if data is None:
        data = memory_splits(config)
    train, val = data
    rows = []
    for label, overrides in sweep_grid(axis, values):
        ious, precs = [], []
        for seed in seeds:
            cfg = config.replace(seed=seed, **overrides)
            rec = {"axis": axis, "value": label, "seed": seed, "config_hash": cfg.config_hash()}
            try:
                est = train_model(cfg, train, val)
                rep = est.evaluate(val.inputs(), val.masks)
                ious.append(rep.overall_iou)
                precs.append(rep.prec[0.5])
                rec.update(overall_iou=rep.overall_iou, prec50=rep.prec[0.5])
            except Exception as exc:  # noqa: BLE001 - a failed run is recorded, not fatal
                ious.append(math.nan)
                precs.append(math.nan)
                rec["error"] = f"{type(exc).__name__}: {exc}"
            if details is not None:
                details.append(rec)
        rows.append((label, float(np.mean(ious)), float(np.mean(precs))))
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "overall_iou", "prec50"])
        for label, iou_, p50 in rows:
            w.writerow([label, repr(iou_), repr(p50)])


def cmd_sweep(args):
    config = resolve_config(args)
    data = None
    if args.data is not None:
        data = (_load(args.data, "train", args.limit), _load(args.data, "val"))
    values = None if args.values is None else [int(v) for v in args.values.split(",")]
    seeds = None if args.seeds is None else [int(s) for s in args.seeds.split(",")]
    details = []
    rows = run_sweep(config, args.axis, values, seeds, data, details)
    out = Path(args.out)
    write_sweep_csv(out, rows)
    side = out.with_suffix(".runs.jsonl")
    side.write_text("".join(json.dumps(d, sort_keys=True) + "\n" for d in details))
    for d in details:
        if "error" in d:
            print(f"run {d['value']} seed {d['seed']} failed: {d['error']}", file=sys.stderr)
    print(f"sweep: {out} ({len(rows)} rows); per-run records: {side}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="cmpc", description="Referring image segmentation on synthetic shapes.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    add_config_flags(g)
    g.add_argument("--out", required=True, type=Path)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    add_config_flags(t)
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--limit", type=int, default=None, help="use the first N train samples")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", default="val", choices=("train", "val"))
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--json", type=Path, default=None, help="write the report here (default stdout)")
    e.set_defaults(func=cmd_eval)

    for name in ("infer", "visualize"):
        i = sub.add_parser(name, help="predict a mask and export affinity maps")
        i.add_argument("--checkpoint", required=True, type=Path)
        i.add_argument("--image", required=True, type=Path)
        i.add_argument("--expression", required=True)
        i.add_argument("--out", required=True, type=Path)
        i.set_defaults(func=cmd_infer)

    s = sub.add_parser("sweep", help="train/evaluate one run per axis value")
    add_config_flags(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", default=None, help="comma-separated axis values")
    s.add_argument("--seeds", default=None, help="comma-separated seeds, averaged per row")
    s.add_argument("--data", type=Path, default=None, help="dataset directory (default: in-memory)")
    s.add_argument("--limit", type=int, default=None)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
