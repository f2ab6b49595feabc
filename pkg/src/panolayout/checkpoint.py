"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SSLCKPT1"                 8-byte magic
    uint32  version
    uint64  header length N
    N bytes UTF-8 JSON header
    raw little-endian arrays, in the order listed in header["arrays"]

The header holds the parameter segment map, the training configuration and
its fingerprint, the step counters and, for each stored array, its name,
dtype and length.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .predictor import ParamVector
from .training import Checkpoint, TrainConfig

MAGIC = b"SSLCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_fingerprint(config):
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(ckpt, path):
    arrays = [("theta", ckpt.theta.data), ("adam_m", ckpt.adam.m), ("adam_v", ckpt.adam.v)]
    if ckpt.teacher is not None:
        arrays.append(("teacher", ckpt.teacher.data))
    header = {
        "segments": [[name, off, list(shape)] for name, (off, shape) in ckpt.theta.segments.items()],
        "config": ckpt.config.to_dict(),
        "fingerprint": config_fingerprint(ckpt.config),
        "t": ckpt.t,
        "t_max": ckpt.t_max,
        "adam_t": ckpt.adam.t,
        "best_val_iou3d": None if math.isnan(ckpt.best_val_iou3d) else ckpt.best_val_iou3d,
        "meta": ckpt.meta,
        "arrays": [[name, a.dtype.str.lstrip("<>|="), int(a.size)] for name, a in arrays],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8 + 12
    header = json.loads(raw[pos:pos + n].decode())
    pos += n
    config = TrainConfig.from_dict(header["config"])
    if header["fingerprint"] != config_fingerprint(config):
        raise CheckpointError(f"{path}: configuration fingerprint mismatch")
    data = {}
    for name, dtype, size in header["arrays"]:
        dt = np.dtype(dtype).newbyteorder("<")
        nbytes = dt.itemsize * size
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array {name}")
        data[name] = np.frombuffer(raw, dtype=dt, count=size, offset=pos).astype(dt.newbyteorder("="))
        pos += nbytes
    segments = OrderedDict((name, (off, tuple(shape))) for name, off, shape in header["segments"])
    adam = ad.AdamState(0)
    adam.m, adam.v, adam.t = data["adam_m"], data["adam_v"], header["adam_t"]
    teacher = ParamVector(data["teacher"], segments) if "teacher" in data else None
    best = header["best_val_iou3d"]
    return Checkpoint(
        ParamVector(data["theta"], segments),
        teacher,
        adam,
        header["t"],
        header["t_max"],
        config,
        math.nan if best is None else best,
        meta=header.get("meta", {}),
    )
