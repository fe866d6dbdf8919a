"""Self-describing binary containers: network checkpoints (architecture,
named parameter tensors, noise schedule) and raw tensor dumps.

Layout: magic, u32 format version, u32-length canonical-JSON metadata block,
then length-prefixed named float64 little-endian tensors. Canonical JSON and
fixed parameter order make save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Network
from .schedule import NoiseSchedule

CHECKPOINT_MAGIC = b"SDCK"
TENSORS_MAGIC = b"SDTD"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    """Missing, truncated, or malformed checkpoint/tensor container."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _write_container(path, magic: bytes, meta: dict, tensors: list):
    """tensors: ordered list of (name, float64 array)."""
    blob = bytearray()
    blob += magic
    blob += np.uint32(FORMAT_VERSION).tobytes()
    mb = _canonical_json(meta)
    blob += np.uint32(len(mb)).tobytes()
    blob += mb
    blob += np.uint32(len(tensors)).tobytes()
    for name, arr in tensors:
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob += np.uint16(len(nb)).tobytes()
        blob += nb
        blob += np.uint8(arr.ndim).tobytes()
        blob += np.asarray(arr.shape, dtype="<u4").tobytes()
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def _read_container(path, magic: bytes):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such file: {path}")
    raw = path.read_bytes()
    try:
        if raw[:4] != magic:
            raise CheckpointError(f"{path}: bad magic, not a {magic.decode()} container")
        off = 4
        version = int(np.frombuffer(raw, "<u4", 1, off)[0])
        off += 4
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        mlen = int(np.frombuffer(raw, "<u4", 1, off)[0])
        off += 4
        meta = json.loads(raw[off : off + mlen].decode())
        off += mlen
        count = int(np.frombuffer(raw, "<u4", 1, off)[0])
        off += 4
        tensors = []
        for _ in range(count):
            nlen = int(np.frombuffer(raw, "<u2", 1, off)[0])
            off += 2
            name = raw[off : off + nlen].decode()
            off += nlen
            ndim = int(np.frombuffer(raw, "<u1", 1, off)[0])
            off += 1
            shape = tuple(int(v) for v in np.frombuffer(raw, "<u4", ndim, off))
            off += 4 * ndim
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, "<f8", size, off).reshape(shape).astype(np.float64)
            off += 8 * size
            tensors.append((name, arr))
        return meta, tensors
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt container ({exc})") from exc


def save_checkpoint(path, net: Network, sched: NoiseSchedule, extra_meta: dict | None = None):
    meta = {
        "arch": net.arch_spec(),
        "net_meta": net.meta,
        "schedule": sched.to_dict(),
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = [(name, p.value) for name, p in net.params().items()]
    _write_container(path, CHECKPOINT_MAGIC, meta, tensors)


def load_checkpoint(path):
    """Returns (net, schedule, meta)."""
    meta, tensors = _read_container(path, CHECKPOINT_MAGIC)
    net = Network.from_spec(meta["arch"], meta.get("net_meta"))
    params = net.params()
    loaded = dict(tensors)
    if set(loaded) != set(params):
        raise CheckpointError(f"{path}: parameter names do not match the stored architecture")
    for name, p in params.items():
        if loaded[name].shape != p.value.shape:
            raise CheckpointError(f"{path}: shape mismatch for parameter {name}")
        p.value = loaded[name]
    sched = NoiseSchedule.from_dict(meta["schedule"])
    return net, sched, meta


def save_tensors(path, arrays: dict, meta: dict | None = None):
    _write_container(path, TENSORS_MAGIC, meta or {}, list(arrays.items()))


def load_tensors(path):
    """Returns (meta, {name: array}) preserving insertion order."""
    meta, tensors = _read_container(path, TENSORS_MAGIC)
    return meta, dict(tensors)
