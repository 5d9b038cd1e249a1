"""Binary tensor and checkpoint files, plus run configuration dumps.

Tensor file (.lpt), little-endian throughout:

    magic   4 bytes  b"LPT1"
    dtype   u8       0 = float32, 1 = uint16 (label maps)
    ndim    u8
    dims    ndim x u32, channels-first
    payload row-major values

Checkpoint file (.lpc):

    magic   4 bytes  b"LPC1"
    count   u32
    entries count x [u16 name length, name utf-8, embedded tensor file]
    config  u32 length, utf-8 "key=value" lines

Round-trips are bit-exact; readers validate magic, dtype codes, payload
sizes, and (for floats) finiteness.
"""

from __future__ import annotations

import struct

import numpy as np

from . import crn
from .errors import DataError
from .fields import SPATIAL_RANKS

TENSOR_MAGIC = b"LPT1"
CKPT_MAGIC = b"LPC1"
DTYPE_F32 = 0
DTYPE_U16 = 1

_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U16: np.dtype("<u2")}


def tensor_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        code = DTYPE_F32
    elif arr.dtype == np.uint16:
        code = DTYPE_U16
    else:
        raise DataError(f"tensor files store float32 or uint16, got {arr.dtype}")
    if arr.ndim > 255:
        raise DataError("tensor rank exceeds format limit")
    head = TENSOR_MAGIC + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes()


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"truncated tensor file while reading {what}")
    return buf


def read_tensor_stream(fh) -> np.ndarray:
    magic = _read_exact(fh, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise DataError(f"bad tensor magic {magic!r}")
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2, "header"))
    if code not in _DTYPES:
        raise DataError(f"unknown tensor dtype code {code}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
    if any(d == 0 for d in dims):
        raise DataError(f"zero extent in dims {dims}")
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(fh, count * dtype.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if code == DTYPE_F32:
        arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise DataError("tensor payload contains NaN or Inf")
    else:
        arr = arr.astype(np.uint16)
    return np.ascontiguousarray(arr)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_tensor_stream(fh)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after tensor payload")
    return arr


def _encode_config(config: dict) -> bytes:
    lines = [f"{k}={config[k]}" for k in sorted(config)]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def _decode_config(blob: bytes) -> dict:
    out = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


def write_checkpoint(path, params: crn.LapirnParams, extra: dict | None = None) -> None:
    entries = list(params.named_tensors())
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise DataError("duplicate parameter names in checkpoint")
    config = {
        "levels": len(params.levels),
        "spatial_rank": params.spatial_rank,
        "channels": params.channels,
        "blocks": params.blocks,
        "vel_scale": repr(params.vel_scale),
        "mode": params.mode,
    }
    if extra:
        for k, v in extra.items():
            config.setdefault(k, v)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, node in entries:
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(tensor_bytes(node.value))
        cfg_blob = _encode_config(config)
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)


def read_checkpoint(path) -> tuple[crn.LapirnParams, dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CKPT_MAGIC:
            raise DataError(f"{path}: bad checkpoint magic")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            if name in tensors:
                raise DataError(f"{path}: duplicate checkpoint entry {name!r}")
            tensors[name] = read_tensor_stream(fh)
        (clen,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config = _decode_config(_read_exact(fh, clen, "config"))
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after checkpoint")
    try:
        levels = int(config["levels"])
        rank = int(config["spatial_rank"])
        channels = int(config["channels"])
        blocks = int(config["blocks"])
        vel_scale = float(config["vel_scale"])
        mode = config["mode"]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: incomplete checkpoint config ({exc})") from exc
    if rank not in SPATIAL_RANKS:
        raise DataError(f"{path}: unsupported spatial rank {rank}")
    # rebuild the parameter tree, then overwrite every tensor from the file
    params = crn.init_lapirn(
        np.random.default_rng(0), rank, levels, channels, blocks, vel_scale, mode
    )
    for name, node in params.named_tensors():
        if name not in tensors:
            raise DataError(f"{path}: missing parameter {name!r}")
        stored = tensors.pop(name)
        if stored.shape != node.value.shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {stored.shape}, expected {node.value.shape}"
            )
        node.value = stored.astype(np.float32)
    if tensors:
        raise DataError(f"{path}: unexpected extra parameters {sorted(tensors)}")
    return params, config


def write_run_cfg(path, config: dict) -> None:
    """Fully resolved run configuration as sorted key=value lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(config):
            fh.write(f"{key}={config[key]}\n")


def write_pgm(path, plane: np.ndarray) -> None:
    """8-bit binary PGM (P5), min-max normalized."""
    if plane.ndim != 2:
        raise DataError(f"PGM export needs a 2-D slice, got shape {plane.shape}")
    data = plane.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi > lo:
        data = (data - lo) / (hi - lo)
    else:
        data = np.zeros_like(data)
    img = np.round(data * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
