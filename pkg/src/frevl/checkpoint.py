"""Parameter checkpoint container.

Layout (little-endian):

    magic   4s   b"FRVP"
    version u16  currently 1
    payload:
        header_len u32, then header JSON (config, flags, extras, sections)
        parameter tensors as raw f32 in param_shapes() order
        optional section b"OPTS": u64 step, then Adam m and v tensors
            (same order, f32) and the moment hyperparameters in the header
    checksum u64: FNV-1a over the payload bytes
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import CorruptCacheError
from .kernel import fnv1a64
from .model import AblationFlags, FusionConfig, param_shapes
from .optim import AdamWState

MAGIC = b"FRVP"
VERSION = 1


def _params_bytes(params: dict, order) -> bytes:
    return b"".join(np.ascontiguousarray(params[n], dtype="<f4").tobytes()
                    for n in order)


def _read_params(buf: bytes, pos: int, shapes):
    params = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape)) * 4
        params[name] = np.frombuffer(
            buf[pos:pos + n], dtype="<f4").reshape(shape).copy()
        pos += n
    return params, pos


def save_checkpoint(path, config: FusionConfig, flags: AblationFlags,
                    params: dict, opt_state: AdamWState | None = None,
                    extra: dict | None = None):
    header = {
        "config": asdict(config),
        "flags": asdict(flags),
        "extra": extra or {},
        "has_optimizer": opt_state is not None,
    }
    if opt_state is not None:
        header["optimizer"] = {
            "beta1": opt_state.beta1, "beta2": opt_state.beta2,
            "eps": opt_state.eps, "weight_decay": opt_state.weight_decay,
        }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    order = list(param_shapes(config, flags))
    payload = struct.pack("<I", len(hdr)) + hdr + _params_bytes(params, order)
    if opt_state is not None:
        payload += b"OPTS" + struct.pack("<Q", opt_state.step)
        payload += _params_bytes(opt_state.m, order)
        payload += _params_bytes(opt_state.v, order)
    blob = MAGIC + struct.pack("<H", VERSION) + payload
    blob += struct.pack("<Q", fnv1a64(payload))
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path):
    """Returns (config, flags, params, opt_state-or-None, extra dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 14:
        raise CorruptCacheError("checkpoint shorter than fixed fields",
                                len(data))
    if data[:4] != MAGIC:
        raise CorruptCacheError(f"bad magic {data[:4]!r}", 0)
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CorruptCacheError(f"unsupported version {version}", 4)
    payload = data[6:-8]
    (stored_sum,) = struct.unpack_from("<Q", data, len(data) - 8)
    if fnv1a64(payload) != stored_sum:
        raise CorruptCacheError("checksum mismatch", len(data) - 8)

    (hdr_len,) = struct.unpack_from("<I", payload, 0)
    header = json.loads(payload[4:4 + hdr_len].decode("utf-8"))
    config = FusionConfig(**header["config"])
    flags = AblationFlags(**header["flags"])
    shapes = param_shapes(config, flags)
    pos = 4 + hdr_len
    params, pos = _read_params(payload, pos, shapes)

    opt_state = None
    if header.get("has_optimizer"):
        if payload[pos:pos + 4] != b"OPTS":
            raise CorruptCacheError("missing optimizer section", 6 + pos)
        (step,) = struct.unpack_from("<Q", payload, pos + 4)
        pos += 12
        m, pos = _read_params(payload, pos, shapes)
        v, pos = _read_params(payload, pos, shapes)
        o = header["optimizer"]
        opt_state = AdamWState(step=step, m=m, v=v, beta1=o["beta1"],
                               beta2=o["beta2"], eps=o["eps"],
                               weight_decay=o["weight_decay"])
    if pos != len(payload):
        raise CorruptCacheError(
            f"trailing bytes in payload: {len(payload) - pos}", 6 + pos)
    return config, flags, params, opt_state, header["extra"]
