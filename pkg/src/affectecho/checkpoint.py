"""Checkpoint files (.aeck).

Layout: ``b"AECK"``, a little-endian uint32 header length, a compact JSON
header with sorted keys, then every tensor as little-endian float32 in
header order.  Header fields: format_version, kind, config, tensors
(name, shape, offset in bytes), norm (mel mean/std), seed, meta.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, VQClassifier
from .features import MelNormalizer
from .generator import Generator, GeneratorConfig

MAGIC = b"AECK"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
KINDS = {"classifier": (VQClassifier, ClassifierConfig), "generator": (Generator, GeneratorConfig)}


class CheckpointError(ValueError):
    pass


def _kind(model) -> str:
    if isinstance(model, VQClassifier):
        return "classifier"
    if isinstance(model, Generator):
        return "generator"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _config(model) -> dict:
    return asdict(model.cfg)


def encode_checkpoint(model, meta: dict | None = None) -> bytes:
    named = model.named_parameters()
    tensors, chunks, offset = [], [], 0
    for name, p in named:
        if not np.all(np.isfinite(p.data)):
            raise CheckpointError(f"parameter {name} has non-finite values")
        buf = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        tensors.append({"name": name, "offset": offset, "shape": list(p.data.shape)})
        chunks.append(buf)
        offset += len(buf)
    meta = dict(meta or {})
    meta.setdefault("trained", bool(getattr(model, "trained", False)))
    header = {
        "config": _config(model),
        "format_version": FORMAT_VERSION,
        "kind": _kind(model),
        "meta": meta,
        "norm": model.norm.to_dict(),
        "payload_bytes": offset,
        "seed": model.cfg.seed,
        "tensors": tensors,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(model, path, meta: dict | None = None) -> Path:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    data = encode_checkpoint(model, meta)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if len(raw) < 8:
        raise CheckpointError("file ends inside the header length field")
    (n,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + n:
        raise CheckpointError("file ends inside the header")
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    version = header.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(f"unsupported format_version {version!r}; "
                              f"supported versions: {list(SUPPORTED_VERSIONS)}")
    return header, raw[8 + n:]


def inspect_checkpoint(path) -> dict:
    """Header only; no model is built."""
    return read_header(path)[0]


def load_checkpoint(path):
    header, payload = read_header(path)
    kind = header.get("kind")
    if kind not in KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    declared = header.get("payload_bytes", 0)
    if len(payload) < declared:
        raise CheckpointError(f"payload shorter than header declares: {len(payload)} < {declared} bytes")
    if len(payload) > declared:
        raise CheckpointError(f"payload longer than header declares: {len(payload)} > {declared} bytes")
    model_cls, cfg_cls = KINDS[kind]
    model = model_cls(cfg_cls(**header["config"]))
    params = dict(model.named_parameters())
    listed = [t["name"] for t in header["tensors"]]
    if len(set(listed)) != len(listed):
        raise CheckpointError("duplicate tensor names in header")
    if set(listed) != set(params):
        missing = sorted(set(params) - set(listed))
        extra = sorted(set(listed) - set(params))
        raise CheckpointError(f"header/model tensor mismatch: missing {missing}, unexpected {extra}")
    for t in header["tensors"]:
        p = params[t["name"]]
        shape = tuple(t["shape"])
        if shape != p.data.shape:
            raise CheckpointError(f"tensor {t['name']}: header shape {shape}, model expects {p.data.shape}")
        count = int(np.prod(shape))
        start = t["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"payload shorter than header declares for tensor {t['name']}")
        p.data = np.frombuffer(payload, dtype="<f4", count=count, offset=start).reshape(shape).astype(np.float32)
    model.norm = MelNormalizer(**header["norm"])
    model.trained = bool(header.get("meta", {}).get("trained", False))
    return model
