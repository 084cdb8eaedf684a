"""Binary checkpoint: magic, version, JSON header, then float32 parameter arrays.

Layout (all integers little-endian)::

    b"RGCKPT1"              7 bytes
    version                 uint32
    header_length           uint64
    header                  UTF-8 JSON: config, fitted transform, parameter index, metadata
    parameters              float32, row-major, in header order
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import config as configmod
from .errors import SchemaViolation
from .preprocess import FittedTransform

MAGIC = b"RGCKPT1"
VERSION = 1


@dataclass
class Checkpoint:
    config: object
    fitted: FittedTransform
    params: dict
    meta: dict


def save_checkpoint(path, run_config, fitted, params, meta):
    index = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    header = {
        "config": run_config.to_dict(),
        "fitted": fitted.to_dict(),
        "params": index,
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise SchemaViolation(f"{path} is not an RGCKPT1 checkpoint")
    off = len(MAGIC)
    version, length = struct.unpack_from("<IQ", data, off)
    if version != VERSION:
        raise SchemaViolation(f"{path}: unsupported checkpoint version {version}")
    off += 12
    header = json.loads(data[off:off + length].decode("utf-8"))
    off += length
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        params[entry["name"]] = arr.astype(np.float64).reshape(shape)
        off += 4 * count
    if off != len(data):
        raise SchemaViolation(f"{path}: {len(data) - off} trailing bytes")
    return Checkpoint(config=configmod.from_dict(header["config"]),
                      fitted=FittedTransform.from_dict(header["fitted"]),
                      params=params, meta=header["meta"])
