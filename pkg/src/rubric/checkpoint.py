"""Binary checkpoint container with bit-exact round-trips.

Layout (all integers little-endian):

    magic     4 bytes  b"RBRC"
    version   u32      currently 1
    hdr_len   u32      length of the UTF-8 JSON header
    header    bytes    {"format_version", "model_spec", "target_order",
                        "vocab_tokens" (id order, ids start at 2) or null}
    n_params  u32
    then per parameter:
      path_len u16, path utf-8,
      ndim     u8,  dims u32 * ndim,
      payload  float64 little-endian, C order

Parameter paths are "enc.*" for the encoder and "head.<name>.*" for the
pooling heads (per-target names in six_metric_attention mode, "shared"
otherwise).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .data import Vocabulary
from .encoder import ModelSpec
from .model import Model

MAGIC = b"RBRC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


def save_checkpoint(path: str, model: Model) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "model_spec": asdict(model.spec),
        "target_order": list(model.bank.target_order),
        "vocab_tokens": list(model.vocab.tokens) if model.vocab is not None else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (hdr_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, hdr_len, "header").decode("utf-8"))

        spec = ModelSpec(**header["model_spec"])
        tokens = header.get("vocab_tokens")
        vocab = Vocabulary(tokens) if tokens is not None else None
        model = Model.build(spec, seed=0, vocab=vocab)
        params = model.named_parameters()

        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        seen = set()
        for _ in range(n_params):
            (path_len,) = struct.unpack("<H", _read_exact(fh, 2, "path length"))
            name = _read_exact(fh, path_len, "path").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "dim"))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, count * 8, f"payload of {name}")
            if name not in params:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            if params[name].data.shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {shape}, "
                    f"model expects {params[name].data.shape}"
                )
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape)
            params[name].data = np.ascontiguousarray(arr, dtype=np.float64)
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:3]}")
    return model
