"""Binary checkpoint format.

Layout::

    b"TLMN3\\0"                      6 bytes magic
    version                         uint32 little-endian
    header length                   uint64 little-endian
    header                          UTF-8 JSON
    parameter data                  little-endian float64, header order

The header carries the model config, feature order, normalization stats and,
for every parameter tensor, its shape and byte offset relative to the start
of the parameter data.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .features import FEATURE_NAMES, FEATURE_ORDER_VERSION, NormStats
from .network import ModelConfig, ModelState, param_shapes

MAGIC = b"TLMN3\x00"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
_PREFIX = struct.Struct("<6sIQ")


def encode_checkpoint(state: ModelState) -> bytes:
    tensors = []
    offset = 0
    blobs = []
    for name, arr in state.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "config": state.config.to_dict(),
        "feature_order": list(FEATURE_NAMES),
        "feature_order_version": FEATURE_ORDER_VERSION,
        "norm_stats": state.norm_stats.to_dict() if state.norm_stats is not None else None,
        "tensors": tensors,
        "data_nbytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blobs)


def save_checkpoint(state: ModelState, path: str | Path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(state))
    os.replace(tmp, path)
    return path


def decode_checkpoint(buf: bytes) -> ModelState:
    if len(buf) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: file shorter than the fixed prefix")
    magic, version, head_len = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError("bad magic: not a TLMN3 checkpoint")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(
            f"unsupported checkpoint version {version}; supported versions: {list(SUPPORTED_VERSIONS)}"
        )
    start = _PREFIX.size
    if len(buf) < start + head_len:
        raise CheckpointError("truncated checkpoint: header extends past end of file")
    try:
        header = json.loads(buf[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    try:
        config = ModelConfig.from_dict(header["config"])
        order = tuple(header["feature_order"])
        tensors = header["tensors"]
        data_nbytes = int(header["data_nbytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"incomplete checkpoint header: {exc}") from None
    if order != FEATURE_NAMES:
        raise CheckpointError("checkpoint feature order differs from this version's feature order")

    data = buf[start + head_len :]
    if len(data) < data_nbytes:
        raise CheckpointError(f"truncated checkpoint: {len(data)} of {data_nbytes} parameter bytes present")
    if len(data) > data_nbytes:
        raise CheckpointError("checkpoint has trailing bytes after the parameter data")

    expected = param_shapes(config)
    if [t.get("name") for t in tensors] != list(expected):
        raise CheckpointError("checkpoint tensor list does not match the model config")
    params = {}
    cursor = 0
    for t in tensors:
        shape = tuple(t["shape"])
        if shape != expected[t["name"]]:
            raise CheckpointError(f"tensor {t['name']} has shape {shape}, config implies {expected[t['name']]}")
        nbytes = 8 * int(np.prod(shape))
        if t["offset"] != cursor or t["nbytes"] != nbytes:
            raise CheckpointError(f"tensor {t['name']} has inconsistent offset or size")
        params[t["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=cursor).reshape(shape).astype(
            np.float64
        )
        cursor += nbytes
    if cursor != data_nbytes:
        raise CheckpointError("declared parameter size does not match the tensor table")
    stats = NormStats.from_dict(header["norm_stats"]) if header.get("norm_stats") else None
    return ModelState(config, params, stats)


def load_checkpoint(path: str | Path) -> ModelState:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(buf)
