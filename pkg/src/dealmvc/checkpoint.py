"""Checkpoint archive.

A checkpoint is a ``.npz`` (zip of ``.npy`` members) readable by
:func:`numpy.load`:

* ``params/<module path>`` -- every parameter and buffer of the model,
  keyed by its ``state_dict`` name (e.g. ``params/autoencoders.0.encoder.0.weight``);
* ``__meta__`` -- a 0-d unicode array holding JSON with ``schema``
  (integer, currently 1), ``model`` (architecture arguments) and ``config``
  (the :class:`TrainConfig` used).

Members are written in sorted order with a fixed timestamp, so saving the
same model twice gives byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataError, MissingCheckpoint
from .networks import DealMVC
from .trainer import TrainConfig

SCHEMA_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, model: DealMVC, cfg: TrainConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"schema": SCHEMA_VERSION, "model": model.config_dict(), "config": cfg.to_dict()}
    members = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for key, tensor in model.state_dict().items():
        members[f"params/{key}"] = tensor.detach().cpu().numpy()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(members[name]))
    return path


def load_checkpoint(path):
    """Returns ``(model, config)``."""
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise DataError(f"{path}: not a checkpoint (no __meta__ member)")
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("schema") != SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported checkpoint schema {meta.get('schema')}")
        state = {
            name[len("params/"):]: torch.from_numpy(archive[name].copy())
            for name in archive.files
            if name.startswith("params/")
        }
    arch = meta["model"]
    model = DealMVC(
        arch["dims"],
        arch["n_clusters"],
        embed_dim=arch["embed_dim"],
        hidden=arch["hidden"],
        attn_hidden=arch["attn_hidden"],
        prob_hidden=arch["prob_hidden"],
    )
    model.load_state_dict(state)
    return model, TrainConfig.from_dict(meta["config"])
