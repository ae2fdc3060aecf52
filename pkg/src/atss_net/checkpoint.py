"""Binary checkpoint format (all integers little-endian).

::

    b"ATSS"                    magic
    u32                        format version (1)
    u32 + UTF-8                configuration snapshot
    u32                        tensor count
    per tensor:
        u16 + UTF-8            name
        u8                     ndim
        u32 * ndim             dims
        f32 * prod(dims)       row-major data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ATSS"
VERSION = 1


def encode(params, config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    parts.append(struct.pack("<I", len(params)))
    for name, value in params.items():
        data = np.asarray(getattr(value, "data", value), dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, source):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, source: str = "<bytes>"):
    """Returns ``(config_text, {name: float32 array})``."""
    r = _Reader(buf, source)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: not an ATSS checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (n_cfg,) = r.unpack("<I")
    try:
        config_text = r.take(n_cfg).decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError(f"{source}: configuration snapshot is not UTF-8") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n = int(np.prod(dims)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: trailing bytes after last tensor")
    return config_text, params


def save(path, params, config_text: str = ""):
    Path(path).write_bytes(encode(params, config_text))


def load(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return decode(buf, str(path))


def save_model(path, model, config_text: str = ""):
    save(path, model.params, config_text)


def load_model(path):
    """Load either a separator (:class:`AtssNet`) or a :class:`SpeakerEmbedder` checkpoint.

    Returns ``(model, Config)``; the kind is recognised from the tensor names.
    """
    from .autodiff import Tensor
    from .config import Config
    from .embedder import SpeakerEmbedder
    from .errors import ConfigError, ShapeError
    from .model import AtssNet

    config_text, arrays = load(path)
    try:
        cfg = Config.parse(config_text, f"{path}[config]")
    except ConfigError as exc:
        raise CheckpointError(str(exc)) from None
    params = {k: Tensor(v, requires_grad=True, name=k, dtype=np.float32) for k, v in arrays.items()}
    try:
        if params and all(k.startswith("embed.") for k in params):
            return SpeakerEmbedder.from_params(params), cfg
        return AtssNet(cfg.model_config(), params), cfg
    except (KeyError, ShapeError) as exc:
        raise CheckpointError(f"{path}: tensors do not fit the stored configuration ({exc})") from None
