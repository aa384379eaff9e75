"""Command-line interface: ``dcrl {gen-data,pretrain,train,eval}``.

Every run is a function of its flags, the optional JSON config file, the
input files and the seed. Results go to plain CSV/JSON files under
``--out``.

Dataset specs::

    blobs:n=200,C=4,dim=10,spread=1.5[,seed=S]
    manifolds:n=200,C=4[,noise=0.02][,seed=S]
    csv:PATH                 header row optional; a last header column
                             named "label" holds labels
    idx:IMAGES[,LABELS]

Exit codes: 0 ok, 2 usage or configuration, 3 data, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import clusterhead as ch
from .config import ABLATIONS, CONFIG_VERSION, TrainConfig
from .dataio import Dataset, SplitSpec, export_csv, gen_blobs, gen_intersecting_manifolds, load_csv, load_idx, split, zscore
from .errors import ConfigError, DataError, DCRLError
from .metrics import DEFAULT_K1, DEFAULT_K2, evaluate_all
from .trainer import DCRL

logger = logging.getLogger("dcrl")

LOCK_NAME = ".dcrl.lock"

# shortcut flags for the ablation rows
_TOGGLES = {
    "no_structure_losses": "no-structure",
    "no_cluster_loss": "no-cluster",
    "no_continuation": "no-continuation",
    "sep_baseline": "sep-baseline",
}


# -- dataset specs -----------------------------------------------------------

def _kv(body, flag, allowed):
    out = {}
    for item in filter(None, body.split(",")):
        key, sep, value = item.partition("=")
        if not sep or key not in allowed:
            raise ConfigError(f"{flag}: bad parameter {item!r}; expected one of {', '.join(allowed)}")
        try:
            out[key] = allowed[key](value)
        except ValueError:
            raise ConfigError(f"{flag}: parameter {key} has a bad value {value!r}") from None
    return out


def _existing(path, flag):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: file not found: {path}")
    return p


def _sniff_csv(path):
    with open(path, newline="") as fh:
        first = next(csv.reader(fh), [])
    try:
        [float(c) for c in first]
        return False, False
    except ValueError:
        return True, bool(first) and first[-1].strip().lower() == "label"


def load_dataset(spec: str, seed: int, flag="--dataset") -> Dataset:
    """Build a dataset from a spec string (see the module docstring)."""
    if not spec:
        raise ConfigError(f"{flag} is required")
    kind, _, body = spec.partition(":")
    if kind == "blobs":
        kw = _kv(body, flag, {"n": int, "C": int, "dim": int, "spread": float, "seed": int, "box": float})
        try:
            return gen_blobs(kw.get("n", 200), kw.get("C", 4), kw.get("dim", 10), kw.get("spread", 1.0),
                             kw.get("seed", seed), kw.get("box", 5.0))
        except ValueError as exc:
            raise ConfigError(f"{flag}: {exc}") from None
    if kind == "manifolds":
        kw = _kv(body, flag, {"n": int, "C": int, "noise": float, "seed": int})
        try:
            return gen_intersecting_manifolds(kw.get("n", 200), kw.get("C", 4), kw.get("seed", seed), kw.get("noise", 0.02))
        except ValueError as exc:
            raise ConfigError(f"{flag}: {exc}") from None
    if kind == "csv":
        path = _existing(body, flag)
        header, labelled = _sniff_csv(path)
        return load_csv(path, has_label_column=labelled, has_header=header)
    if kind == "idx":
        parts = body.split(",")
        if len(parts) > 2 or not parts[0]:
            raise ConfigError(f"{flag}: idx needs IMAGES[,LABELS]")
        images = _existing(parts[0], flag)
        labels = _existing(parts[1], flag) if len(parts) == 2 else None
        return load_idx(images, labels)
    raise ConfigError(f"{flag}: unknown dataset kind {kind!r}; use blobs, manifolds, csv or idx")


def prepare_dataset(args) -> Dataset:
    ds = load_dataset(args.dataset, args.seed if args.seed is not None else 0)
    if args.zscore:
        ds = zscore(ds)
    if args.split is not None:
        try:
            train, test = split(ds, SplitSpec(args.split, args.split_seed))
        except ValueError as exc:
            raise ConfigError(f"--split: {exc}") from None
        ds = train if args.part == "train" else test
    return ds


# -- configuration -----------------------------------------------------------

def _flag(name):
    return "--" + name.replace("_", "-")


def _parse_hidden(text):
    try:
        return tuple(int(h) for h in text.split(",") if h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden sizes must be comma-separated integers, got {text!r}") from None


def _add_config_flags(p):
    g = p.add_argument_group("training configuration (same names as the JSON config keys)")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "seed":
            continue
        if f.type in ("bool", bool):
            g.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "hidden":
            g.add_argument("--hidden", type=_parse_hidden, default=None, metavar="H1,H2,...")
        else:
            kind = {"int": int, "float": float, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
            g.add_argument(_flag(f.name), dest=f.name, type=kind, default=None)
    t = p.add_argument_group("ablation toggles")
    t.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
    t.add_argument("--no-structure-losses", action="store_true", help="drop L_LIS, L_rank and L_align")
    t.add_argument("--no-cluster-loss", action="store_true")
    t.add_argument("--no-continuation", action="store_true", help="constant loss weights")
    t.add_argument("--sep-baseline", action="store_true", help="separation loss in place of the ranking loss")


def read_config_file(path) -> dict:
    p = _existing(path, "--config")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--config: {p} is not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"--config: {p} must hold a JSON object")
    if "version" not in d:
        raise ConfigError(f"--config: {p} has no 'version' field")
    if d["version"] != CONFIG_VERSION:
        raise ConfigError(f"--config: version {d['version']} not supported (expected {CONFIG_VERSION})")
    known = {f.name for f in dataclasses.fields(TrainConfig)} | {"version"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"--config: unknown keys {', '.join(unknown)}")
    return d


def build_config(args, dataset: Dataset | None = None, base: dict | None = None) -> TrainConfig:
    """File values, then flags; a missing cluster count comes from the labels."""
    d = dict(base or {})
    if args.config:
        d.update(read_config_file(args.config))
    d.pop("version", None)
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "seed":
            d[f.name] = v
    if args.seed is not None:
        d["seed"] = args.seed
    if "n_clusters" not in d and dataset is not None and dataset.num_classes is not None:
        d["n_clusters"] = dataset.num_classes
    cfg = TrainConfig.from_dict(d)
    if args.ablation:
        cfg = cfg.with_ablation(args.ablation)
    for attr, name in _TOGGLES.items():
        if getattr(args, attr, False):
            cfg = cfg.with_ablation(name)
    return cfg


# -- output directory --------------------------------------------------------

class OutputDir:
    """Creates ``path`` and holds a sentinel lock file while a run writes to it."""

    def __init__(self, path):
        self.path = Path(path)
        self.lock = self.path / LOCK_NAME

    def __enter__(self):
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"--out: cannot create {self.path}: {exc.strerror}") from None
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"--out: {self.path} is locked by another run (remove {LOCK_NAME} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self.path

    def __exit__(self, *exc):
        try:
            self.lock.unlink()
        except FileNotFoundError:
            pass
        return False


def _write_text(path: Path, text: str):
    path.write_text(text)
    logger.info("wrote %s", path)


def embeddings_csv(z, pred, labels=None) -> str:
    cols = [f"z{i}" for i in range(z.shape[1])] + ["pred"] + (["label"] if labels is not None else [])
    lines = [",".join(cols)]
    for i in range(z.shape[0]):
        cells = [repr(float(v)) for v in z[i]] + [str(int(pred[i]))]
        if labels is not None:
            cells.append(str(int(labels[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def pretrain_loss_csv(losses) -> str:
    return "epoch,loss\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(losses))


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    ds = load_dataset(args.dataset, args.seed if args.seed is not None else 0)
    if ds.labels is None:
        raise ConfigError("--dataset: gen-data expects a generator (blobs or manifolds)")
    with OutputDir(args.out) as out:
        path = out / args.name
        export_csv(ds, path)
        logger.info("wrote %s", path)
    print(f"{path}: {len(ds)} rows, {ds.dim} features, {ds.num_classes} labels")
    return 0


def cmd_pretrain(args) -> int:
    ds = prepare_dataset(args)
    cfg = build_config(args, ds)
    with OutputDir(args.out) as out:
        runner = DCRL.initialise(ds, cfg)
        checkpoint.save(runner, out / "pretrained.ckpt")
        _write_text(out / "pretrain_loss.csv", pretrain_loss_csv(runner.pretrain_losses))
        _write_text(out / "config.json", cfg.to_json() + "\n")
    losses = runner.pretrain_losses
    print(f"pretrained {cfg.pretrain_epochs} epochs: loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return 0


def _runner_for_training(args, ds, cfg) -> DCRL:
    if args.pretrain_first:
        return DCRL.initialise(ds, cfg)
    if not args.checkpoint:
        raise ConfigError("train needs --checkpoint PATH or --pretrain-first")
    prev = checkpoint.load(_existing(args.checkpoint, "--checkpoint"))
    if prev.model.input_dim != ds.dim:
        raise ConfigError(f"--checkpoint: model expects {prev.model.input_dim} features, dataset has {ds.dim}")
    if args.resume:
        if prev.config.n_clusters != cfg.n_clusters:
            raise ConfigError("--resume: cluster count differs from the checkpoint")
        prev.config = dataclasses.replace(prev.config, epochs=max(cfg.epochs, prev.config.epochs))
        return prev
    runner = DCRL(cfg, prev.model, ch.init_centers(prev.model.encode(ds.x), cfg.n_clusters, seed=cfg.seed).centers)
    runner.pretrain_losses = prev.pretrain_losses
    return runner


def cmd_train(args) -> int:
    ds = prepare_dataset(args)
    base = None
    if args.resume and args.checkpoint:
        base = checkpoint.load(_existing(args.checkpoint, "--checkpoint")).config.to_dict()
    cfg = build_config(args, ds, base)
    with OutputDir(args.out) as out:
        runner = _runner_for_training(args, ds, cfg)
        if runner.pretrain_losses:
            _write_text(out / "pretrain_loss.csv", pretrain_loss_csv(runner.pretrain_losses))
        _write_text(out / "config.json", runner.config.to_json() + "\n")
        runner.fit(ds, checkpoint_path=out / "model.ckpt")
        checkpoint.save(runner, out / "model.ckpt")
        _write_text(out / "history.csv", runner.history.to_csv())
        z = runner.embed(ds.x)
        pred = runner.predict(ds.x).predictions(runner.config.assign_by)
        _write_text(out / "embeddings.csv", embeddings_csv(z, pred, ds.labels))
    last = dict(zip(runner.history.columns, runner.history.rows[-1])) if len(runner.history) else {}
    summary = ", ".join(f"{k}={last[k]:.4f}" for k in ("acc", "nmi") if k in last)
    print(f"trained to epoch {runner.epoch}" + (f": {summary}" if summary else ""))
    return 0


def cmd_eval(args) -> int:
    ds = prepare_dataset(args)
    if args.identity:
        z = ds.x
        pred = ds.labels if ds.labels is not None else np.zeros(len(ds), dtype=np.int64)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint PATH (or --identity)")
        runner = checkpoint.load(_existing(args.checkpoint, "--checkpoint"))
        if runner.model.input_dim != ds.dim:
            raise ConfigError(f"--dataset: {ds.dim} features, checkpoint model expects {runner.model.input_dim}")
        z = runner.embed(ds.x)
        pred = runner.predict(ds.x).predictions(runner.config.assign_by)
    report = evaluate_all(ds.x, z, ds.labels, pred, args.k1, args.k2)
    with OutputDir(args.out) as out:
        _write_text(out / f"{args.prefix}.json", report.to_json() + "\n")
        _write_text(out / f"{args.prefix}.csv", report.csv_header() + "\n" + report.csv_row() + "\n")
    print(report.to_json())
    return 0


# -- parser ------------------------------------------------------------------

def _common(p, config=True):
    p.add_argument("--dataset", metavar="SPEC", required=True, help="blobs:..., manifolds:..., csv:PATH or idx:IMG[,LBL]")
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    if config:
        p.add_argument("--config", metavar="PATH", default=None, help="JSON file with a 'version' field")
        p.add_argument("--zscore", action="store_true", help="standardise features before use")
        p.add_argument("--split", type=float, default=None, metavar="FRACTION", help="stratified train fraction")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--part", choices=("train", "test"), default="train", help="which side of --split to use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcrl", description="Deep clustering with geometric structure preservation.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    _common(g, config=False)
    g.add_argument("--name", default="data.csv")
    g.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="denoising autoencoder pretraining")
    _common(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="fine-tune with clustering and structure losses")
    _common(t)
    _add_config_flags(t)
    t.add_argument("--checkpoint", metavar="PATH", default=None, help="pretrained (or, with --resume, partial) run")
    t.add_argument("--pretrain-first", action="store_true")
    t.add_argument("--resume", action="store_true", help="continue the checkpoint's own run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="all eight metrics for a trained model")
    _common(e)
    e.add_argument("--checkpoint", metavar="PATH", default=None)
    e.add_argument("--identity", action="store_true", help="embed = input, predictions = labels")
    e.add_argument("--k1", type=int, default=DEFAULT_K1)
    e.add_argument("--k2", type=int, default=DEFAULT_K2)
    e.add_argument("--prefix", default="metrics", help="output file stem")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except DCRLError as exc:
        print(f"dcrl {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dcrl {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
