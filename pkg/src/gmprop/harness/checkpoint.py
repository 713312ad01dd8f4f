"""Versioned binary checkpoints of parameter stores.

Layout (all integers little-endian):

    magic    8 bytes  b"GMPROPC1"
    version  u32
    entries  u32
    per entry:
        name_len u16, name utf-8
        config_hash 64 ascii hex bytes
        n_stages u32
        per stage: has_params u8; if set, four arrays in order
            (w_mean, w_var, b_mean, b_var), each as
            ndim u8, dims u32*, dtype_code u8 (0: float32, 1: float64),
            raw little-endian data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..inference import ParameterStore
from ..layers import LayerParams

MAGIC = b"GMPROPC1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _write_array(f, arr: np.ndarray) -> None:
    code = _CODES[np.dtype(arr.dtype)]
    f.write(struct.pack("<BB", arr.ndim, code))
    f.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_array(f) -> np.ndarray:
    ndim, code = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPES:
        raise DataError(f"checkpoint: unknown dtype code {code}")
    shape = struct.unpack("<" + "I" * ndim, _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    raw = _read_exact(f, count * _DTYPES[code].itemsize)
    return np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise DataError("checkpoint: truncated file")
    return raw


def save_checkpoint(path: str | Path, entries: dict[str, tuple[str, ParameterStore]]) -> None:
    """Write named parameter stores with their config hashes."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for name, (config_hash, store) in entries.items():
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            if len(config_hash) != 64:
                raise ValueError("config hash must be 64 hex chars")
            f.write(config_hash.encode())
            f.write(struct.pack("<I", len(store)))
            for params in store:
                f.write(struct.pack("<B", 0 if params is None else 1))
                if params is None:
                    continue
                for arr in (params.w_mean, params.w_var,
                            params.b_mean, params.b_var):
                    _write_array(f, arr)


def load_checkpoint(path: str | Path) -> dict[str, tuple[str, ParameterStore]]:
    """Read back every entry written by :func:`save_checkpoint`."""
    path = Path(path)
    entries: dict[str, tuple[str, ParameterStore]] = {}
    with open(path, "rb") as f:
        if _read_exact(f, 8) != MAGIC:
            raise DataError(f"{path.name}: not a checkpoint file")
        version, n_entries = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise DataError(f"{path.name}: unsupported version {version}")
        for _ in range(n_entries):
            name_len = struct.unpack("<H", _read_exact(f, 2))[0]
            name = _read_exact(f, name_len).decode()
            config_hash = _read_exact(f, 64).decode()
            n_stages = struct.unpack("<I", _read_exact(f, 4))[0]
            layers = []
            for _ in range(n_stages):
                has = struct.unpack("<B", _read_exact(f, 1))[0]
                if not has:
                    layers.append(None)
                    continue
                arrays = [_read_array(f) for _ in range(4)]
                layers.append(LayerParams(*arrays))
            entries[name] = (config_hash, ParameterStore(layers))
    return entries
