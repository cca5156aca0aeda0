"""Binary checkpoint container.

Layout, little-endian::

    b"MCH1" | u32 d | u32 C | u32 K | u8 collapsed
    W (d*C float64, row-major)
    log_sigma (d*C float64)            -- only when not collapsed
    [u32 n_layers, then per layer: u32 fan_in | u32 fan_out | weight | bias]

The backbone section is optional; a head-only file ends after the head.
"""
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .backbone import MlpParams
from .head import HeadParams

MAGIC = b"MCH1"
_HEAD_HEADER = struct.Struct("<4sIIIB")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    W: np.ndarray
    log_sigma: np.ndarray | None
    K: int
    backbone: MlpParams | None = None

    @property
    def collapsed(self):
        return self.log_sigma is None

    @property
    def head(self):
        if self.log_sigma is None:
            return self.W
        return HeadParams(self.W, self.log_sigma)

    def param_count(self):
        n = self.W.size + (0 if self.log_sigma is None else self.log_sigma.size)
        return n + (self.backbone.param_count() if self.backbone is not None else 0)


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode(ckpt, with_backbone_section=True):
    d, C = ckpt.W.shape
    parts = [_HEAD_HEADER.pack(MAGIC, d, C, ckpt.K, int(ckpt.collapsed)), _f64(ckpt.W)]
    if not ckpt.collapsed:
        parts.append(_f64(ckpt.log_sigma))
    if with_backbone_section:
        layers = [] if ckpt.backbone is None else list(zip(ckpt.backbone.weights, ckpt.backbone.biases))
        parts.append(struct.pack("<I", len(layers)))
        for w, b in layers:
            parts.append(struct.pack("<II", *w.shape))
            parts.append(_f64(w))
            parts.append(_f64(b))
    return b"".join(parts)


class _Reader:
    def __init__(self, raw, source):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"{self.source}: truncated {what} at offset {self.pos} (need {n} bytes, {len(self.raw) - self.pos} left)"
            )
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def matrix(self, rows, cols, what):
        return np.frombuffer(self.take(8 * rows * cols, what), dtype="<f8").astype(np.float64).reshape(rows, cols)


def decode(raw, source="<bytes>"):
    r = _Reader(raw, source)
    if len(raw) >= 4 and raw[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    _, d, C, K, collapsed = _HEAD_HEADER.unpack(r.take(_HEAD_HEADER.size, "header"))
    if collapsed not in (0, 1):
        raise CheckpointError(f"{source}: collapsed flag must be 0 or 1, got {collapsed}")
    W = r.matrix(d, C, "W")
    log_sigma = None if collapsed else r.matrix(d, C, "log_sigma")
    backbone = None
    if r.pos < len(raw):
        (n_layers,) = struct.unpack("<I", r.take(4, "backbone layer count"))
        weights, biases = [], []
        for i in range(n_layers):
            fan_in, fan_out = struct.unpack("<II", r.take(8, f"backbone layer {i} shape"))
            weights.append(r.matrix(fan_in, fan_out, f"backbone layer {i} weight"))
            biases.append(r.matrix(1, fan_out, f"backbone layer {i} bias").reshape(fan_out))
        if n_layers:
            backbone = MlpParams(weights, biases)
        if r.pos != len(raw):
            raise CheckpointError(f"{source}: {len(raw) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(W, log_sigma, K, backbone)


def write_atomic(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".ckpt")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ckpt, with_backbone_section=True):
    write_atomic(path, encode(ckpt, with_backbone_section))


def load(path):
    with open(path, "rb") as f:
        raw = f.read()
    return decode(raw, str(path))


def collapse(ckpt):
    """Same checkpoint with sigma dropped."""
    return Checkpoint(ckpt.W.copy(), None, ckpt.K, ckpt.backbone)
