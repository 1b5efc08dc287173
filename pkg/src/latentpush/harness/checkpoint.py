"""Versioned binary checkpoints shared by the world model and the policy.

Layout (little-endian): magic "LPCK", u32 format version, a kind string, the
config echo (model fields plus the experiment serialization that produced the
parameters), and a named parameter table. Round-trips are bit-exact; a wrong
magic or version fails loudly instead of producing a half-loaded model.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LPCK"
VERSION = 1

_FIELD_SEP = "\n---experiment---\n"


def dump_dataclass(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines)


def parse_dataclass(cls, text: str):
    defaults = cls()
    kwargs = {}
    raw = {}
    for line in text.strip().split("\n"):
        k, _, v = line.partition("=")
        raw[k] = v
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        ref = getattr(defaults, f.name)
        if v == "None":
            kwargs[f.name] = None
        elif isinstance(ref, bool):
            kwargs[f.name] = v == "True"
        elif isinstance(ref, int):
            kwargs[f.name] = int(v)
        elif isinstance(ref, float):
            kwargs[f.name] = float(v)
        elif isinstance(ref, tuple):
            kwargs[f.name] = tuple(float(x) for x in v.split(","))
        elif ref is None:
            kwargs[f.name] = int(v)  # optional ints (e.g. sampling overrides)
        else:
            kwargs[f.name] = v
    return cls(**kwargs)


def pack_config_echo(model_cfg, experiment_text: str) -> str:
    return dump_dataclass(model_cfg) + _FIELD_SEP + experiment_text


def unpack_config_echo(cls, text: str):
    model_text, _, experiment_text = text.partition(_FIELD_SEP)
    return parse_dataclass(cls, model_text), experiment_text

_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(RuntimeError):
    pass


def _write_str(fh, s: str) -> None:
    raw = s.encode()
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint (string)")
    return raw.decode()


def save_checkpoint(path: str | Path, kind: str, config_text: str,
                    params: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, kind)
        _write_str(fh, config_text)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = params[name]
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            _write_str(fh, name)
            fh.write(struct.pack("<B", code))
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[str, str, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        kind = _read_str(fh)
        config_text = _read_str(fh)
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = _read_str(fh)
            (code,) = struct.unpack("<B", fh.read(1))
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)]
            dtype = np.dtype(_DTYPES[code])
            nbytes = int(np.prod(dims)) * dtype.itemsize if dims else dtype.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(f"truncated checkpoint at {name}")
            params[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return kind, config_text, params
