"""Binary checkpoints of a :class:`~dcrl.trainer.DCRL` run.

Layout::

    DCRL1\\n
    key=value lines (version, dims, C, epoch, seed, config, meta, blocks)
    \\n
    float64 little-endian blocks, in the order listed under ``blocks``

``blocks`` is a ``;``-separated list of ``name:rows:cols``. Everything
needed to resume lives in the file: weights, centres, Adam moments and
step, the history so far and the pretraining losses. Saving what was
loaded reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .autoencoder import EncoderDecoder
from .config import TrainConfig
from .errors import CheckpointError, ConfigError
from .ndtensor import AdamState

MAGIC = b"DCRL1\n"
FORMAT_VERSION = 1
_HEADER_KEYS = ("version", "dims", "C", "epoch", "seed", "config", "meta", "blocks")


def _blocks(runner):
    model = runner.model
    out = [(name, t.data) for name, t in model.arrays()]
    out.append(("centers", runner.centers))
    out.append(("adam.step", np.array([[float(runner.opt.step)]])))
    names = [name for name, _ in model.arrays()] + ["centers"]
    for name, m, v in zip(names, runner.opt.m, runner.opt.v):
        out.append((f"adam.m.{name}", np.asarray(m).reshape(np.shape(m))))
        out.append((f"adam.v.{name}", np.asarray(v).reshape(np.shape(v))))
    out.append(("history", runner.history.as_array()))
    out.append(("pretrain_losses", np.asarray(runner.pretrain_losses, dtype=np.float64).reshape(1, -1)))
    return out


def dumps(runner) -> bytes:
    blocks = _blocks(runner)
    meta = {
        "stable_epochs": runner.stable_epochs,
        "history_columns": list(runner.history.columns),
        "with_labels": runner.history.with_labels,
        "adam": [runner.opt.beta1, runner.opt.beta2, runner.opt.eps],
    }
    header = {
        "version": str(FORMAT_VERSION),
        "dims": ",".join(str(d) for d in runner.model.layer_dims),
        "C": str(runner.centers.shape[0]),
        "epoch": str(runner.epoch),
        "seed": str(runner.config.seed),
        "config": runner.config.to_json(),
        "meta": json.dumps(meta, sort_keys=True),
        "blocks": ";".join(f"{n}:{a.shape[0]}:{a.shape[1]}" for n, a in blocks),
    }
    text = "".join(f"{k}={header[k]}\n" for k in _HEADER_KEYS) + "\n"
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks)
    return MAGIC + text.encode("utf-8") + payload


def save(runner, path) -> Path:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    data = dumps(runner)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _parse_header(buf: bytes, where):
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{where}: field 'magic' is wrong; not a DCRL1 checkpoint")
    end = buf.find(b"\n\n", len(MAGIC) - 1)
    if end < 0:
        raise CheckpointError(f"{where}: field 'header' is truncated")
    header = {}
    for line in buf[len(MAGIC):end].decode("utf-8", errors="replace").split("\n"):
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{where}: field 'header' has a malformed line {line[:40]!r}")
        header[key] = value
    for key in _HEADER_KEYS:
        if key not in header:
            raise CheckpointError(f"{where}: field '{key}' is missing")
    return header, end + 2


def _int(header, key, where):
    try:
        return int(header[key])
    except ValueError:
        raise CheckpointError(f"{where}: field '{key}' is not an integer: {header[key]!r}") from None


def loads(buf: bytes, where="checkpoint"):
    """Rebuild a :class:`~dcrl.trainer.DCRL` from checkpoint bytes."""
    from .trainer import DCRL  # deferred: trainer imports this module

    header, offset = _parse_header(buf, where)
    version = _int(header, "version", where)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{where}: field 'version' is {version}, this build reads {FORMAT_VERSION}")
    try:
        config = TrainConfig.from_dict(json.loads(header["config"]))
    except (ValueError, ConfigError) as exc:
        raise CheckpointError(f"{where}: field 'config' is invalid: {exc}") from None
    try:
        meta = json.loads(header["meta"])
        dims = [int(d) for d in header["dims"].split(",")]
    except ValueError as exc:
        raise CheckpointError(f"{where}: field 'meta' or 'dims' is invalid: {exc}") from None

    arrays = {}
    for spec in header["blocks"].split(";"):
        try:
            name, rows, cols = spec.rsplit(":", 2)
            rows, cols = int(rows), int(cols)
        except ValueError:
            raise CheckpointError(f"{where}: field 'blocks' has a malformed entry {spec!r}") from None
        nbytes = 8 * rows * cols
        if offset + nbytes > len(buf):
            raise CheckpointError(f"{where}: block '{name}' is truncated at byte {len(buf)} (needs {offset + nbytes})")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=offset).astype(np.float64).reshape(rows, cols)
        offset += nbytes
    if offset != len(buf):
        raise CheckpointError(f"{where}: {len(buf) - offset} trailing bytes after the last block")

    model = EncoderDecoder(dims[0], dims[1:-1], dims[-1], seed=0)
    for name, t in model.arrays():
        if name not in arrays:
            raise CheckpointError(f"{where}: block '{name}' is missing")
        if arrays[name].shape != t.data.shape:
            raise CheckpointError(f"{where}: block '{name}' has shape {arrays[name].shape}, expected {t.data.shape}")
        t.data = arrays[name].copy()
    C = _int(header, "C", where)
    centers = arrays.get("centers")
    if centers is None or centers.shape != (C, dims[-1]):
        raise CheckpointError(f"{where}: block 'centers' is missing or mis-shaped")

    runner = DCRL(config, model, centers)
    b1, b2, eps = meta.get("adam", [0.9, 0.999, 1e-8])
    names = [name for name, _ in model.arrays()] + ["centers"]
    try:
        runner.opt = AdamState(
            m=[arrays[f"adam.m.{n}"].copy() for n in names],
            v=[arrays[f"adam.v.{n}"].copy() for n in names],
            step=int(arrays["adam.step"][0, 0]),
            beta1=b1,
            beta2=b2,
            eps=eps,
        )
    except KeyError as exc:
        raise CheckpointError(f"{where}: block {exc} is missing") from None
    runner.epoch = _int(header, "epoch", where)
    runner.stable_epochs = int(meta.get("stable_epochs", 0))
    runner.history.with_labels = bool(meta.get("with_labels", False))
    if list(runner.history.columns) != meta.get("history_columns", list(runner.history.columns)):
        raise CheckpointError(f"{where}: field 'meta' lists unexpected history columns")
    hist = arrays.get("history")
    if hist is None:
        raise CheckpointError(f"{where}: block 'history' is missing")
    runner.history.rows = [tuple(float(v) for v in row) for row in hist]
    runner.pretrain_losses = [float(v) for v in arrays.get("pretrain_losses", np.zeros((1, 0))).ravel()]
    return runner


def load(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc.strerror}") from None
    return loads(buf, str(path))

