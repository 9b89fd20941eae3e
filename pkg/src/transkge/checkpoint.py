"""Checkpoint files: a JSON header line followed by raw little-endian float64 tables.

The header lists the tables in the order their bytes follow, so a reader
needs nothing beyond the header to locate every section. Anchor-mode
checkpoints reference their anchor vocabulary file by relative path and
SHA-256.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchors import AnchorVocab, load_anchor_vocab
from .scoring import ModelParams

CHECKPOINT_MAGIC = "kge-ckpt v1"


@dataclass
class Checkpoint:
    params: ModelParams
    step: int = 0
    config: dict = field(default_factory=dict)
    valid_mrr: float | None = None
    header: dict = field(default_factory=dict)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_checkpoint(path, params: ModelParams, step: int = 0, config: dict | None = None,
                    valid_mrr: float | None = None, anchors_path=None) -> dict:
    """Write ``params`` atomically and return the header that was written."""
    path = Path(path)
    anchors = None
    if params.anchor_mode:
        if anchors_path is None:
            raise ValueError("anchor-mode checkpoints need anchors_path")
        anchors_path = Path(anchors_path)
        rel = os.path.relpath(anchors_path, path.parent if str(path.parent) else ".")
        anchors = {"path": rel, "sha256": _sha256(anchors_path)}
    header = {
        "format": CHECKPOINT_MAGIC,
        "scorer": params.scorer,
        "dim": params.dim,
        "n_entities": params.n_entities,
        "n_relations": params.n_relations,
        "tables": [{"name": k, "shape": list(v.shape)} for k, v in params.tables.items()],
        "parameter_count": params.parameter_count(),
        "step": int(step),
        "valid_mrr": valid_mrr,
        "config": config or {},
        "anchors": anchors,
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in params.tables.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)
    return header


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        header = json.loads(line)
    except ValueError:
        header = None
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    return header


def load_checkpoint(path, anchors: AnchorVocab | None = None) -> Checkpoint:
    """Read a checkpoint; anchor vocabularies are loaded from the recorded path unless given."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    header = read_header(path)
    off = data.index(b"\n") + 1
    tables = {}
    for spec in header["tables"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        if off + 8 * count > len(data):
            raise ValueError(f"{path}: truncated in table {spec['name']!r}")
        tables[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off) \
            .astype(np.float64).reshape(shape)
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    ref = header.get("anchors")
    if ref is not None and anchors is None:
        apath = path.parent / ref["path"]
        if _sha256(apath) != ref["sha256"]:
            raise ValueError(f"{apath}: anchor vocabulary does not match the checkpoint")
        anchors = load_anchor_vocab(apath)
    params = ModelParams(header["scorer"], tables, anchors if ref is not None else None,
                         header["n_entities"], header["n_relations"])
    return Checkpoint(params, header["step"], header.get("config", {}), header.get("valid_mrr"), header)
