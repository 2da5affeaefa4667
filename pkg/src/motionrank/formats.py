"""Binary on-disk formats: DIMG dynamic images and MRNK model checkpoints.

DIMG: ``b"DIMG"`` then little-endian u32 version=1, C, H, W, then C*H*W
little-endian float32 values in channel-major, row-major order.

MRNK: ``b"MRNK"``, u32 version, then tensors until end of file, each as
u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian float64 data.
The model config travels as a rank-1 tensor named ``__config__`` whose
values are the bytes of its JSON encoding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import DecodeError, InvalidShapeError
from .models import ClassifierConfig, GeneratorConfig, ModelParams

DIMG_MAGIC = b"DIMG"
DIMG_VERSION = 1
MRNK_MAGIC = b"MRNK"
MRNK_VERSION = 1
CONFIG_KEY = "__config__"


def encode_dimg(D) -> bytes:
    D = np.asarray(D)
    if D.ndim != 3:
        raise InvalidShapeError(f"a dynamic image must be CxHxW, got {D.shape}")
    header = DIMG_MAGIC + struct.pack("<4I", DIMG_VERSION, *D.shape)
    return header + np.ascontiguousarray(D, dtype="<f4").tobytes()


def decode_dimg(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 20 or buf[:4] != DIMG_MAGIC:
        raise DecodeError(f"{source}: not a DIMG file")
    version, c, h, w = struct.unpack("<4I", buf[4:20])
    if version != DIMG_VERSION:
        raise DecodeError(f"{source}: unsupported DIMG version {version}")
    body = buf[20:]
    if len(body) != 4 * c * h * w:
        raise DecodeError(f"{source}: expected {c * h * w} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float64)


def write_dimg(D, path) -> None:
    Path(path).write_bytes(encode_dimg(D))


def read_dimg(path) -> np.ndarray:
    path = Path(path)
    return decode_dimg(path.read_bytes(), str(path))


def _config_to_json(config) -> str:
    kind = "generator" if isinstance(config, GeneratorConfig) else "classifier"
    return json.dumps({"kind": kind, **asdict(config)}, sort_keys=True)


def _config_from_json(text: str):
    d = json.loads(text)
    kind = d.pop("kind")
    cls = GeneratorConfig if kind == "generator" else ClassifierConfig
    for key, value in d.items():
        if isinstance(value, list):
            d[key] = tuple(value)
    return cls(**d)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    out = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return out + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_params(params: ModelParams, path) -> None:
    chunks = [MRNK_MAGIC, struct.pack("<I", MRNK_VERSION)]
    cfg = np.frombuffer(_config_to_json(params.config).encode("utf-8"), dtype=np.uint8)
    chunks.append(_pack_tensor(CONFIG_KEY, cfg.astype(np.float64)))
    for name in sorted(params.tensors):
        chunks.append(_pack_tensor(name, np.asarray(params.tensors[name])))
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> ModelParams:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != MRNK_MAGIC:
        raise DecodeError(f"{path}: not an MRNK checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != MRNK_VERSION:
        raise DecodeError(f"{path}: unsupported MRNK version {version}")
    pos = 8
    tensors: Dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", buf, pos)
            dims = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise DecodeError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise DecodeError(f"{path}: corrupt checkpoint ({exc})") from exc
    if CONFIG_KEY not in tensors:
        raise DecodeError(f"{path}: checkpoint has no {CONFIG_KEY} entry")
    cfg_bytes = tensors.pop(CONFIG_KEY).astype(np.uint8).tobytes()
    return ModelParams(tensors, _config_from_json(cfg_bytes.decode("utf-8")))
