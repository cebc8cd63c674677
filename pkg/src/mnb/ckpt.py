"""Binary checkpoint files (``.mnbw``).

Layout, all integers little-endian::

    "MNBW" | u16 version=1 | u32 n | n entries
    entry := u16 name_len | utf-8 name | u8 dtype (0=f64) | u8 rank | rank*u32 dims | f64 payload

A bare ParameterSet file stops there. A model file continues with a
classifier block (``u32 count`` then ``count`` u32 class ids) and a BN-stats
block, which is a second ``u32 n | n entries`` run holding the running
statistics plus two bookkeeping entries: ``__bn_momentum__`` (rank 0) and
``__layers__`` ([L, 3] rows of ``kind, a, b`` with kind 1=Dense(a,b),
2=BatchNorm(a), 3=ReLU).
"""

import struct

import numpy as np

from .nn import BatchNorm, Dense, Model, ReLU
from .params import ParameterSet

MAGIC = b"MNBW"
VERSION = 1
DTYPE_F64 = 0


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _encode_entries(params):
    out = [struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", DTYPE_F64, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def _encode_layers(layers):
    rows = []
    for layer in layers:
        if isinstance(layer, Dense):
            rows.append((1, layer.in_dim, layer.out_dim))
        elif isinstance(layer, BatchNorm):
            rows.append((2, layer.dim, 0))
        else:
            rows.append((3, 0, 0))
    return np.array(rows, dtype=np.float64).reshape(len(rows), 3)


def _decode_layers(arr):
    layers = []
    for kind, a, b in arr.astype(np.int64):
        if kind == 1:
            layers.append(Dense(int(a), int(b)))
        elif kind == 2:
            layers.append(BatchNorm(int(a)))
        elif kind == 3:
            layers.append(ReLU())
        else:
            raise ValueError(f"unknown layer code {kind}")
    return layers


def dumps(obj):
    """Encode a ParameterSet or a Model."""
    head = MAGIC + struct.pack("<H", VERSION)
    if isinstance(obj, Model):
        stats = obj.bn_stats.copy()
        stats["__bn_momentum__"] = np.array(obj.bn_momentum)
        stats["__layers__"] = _encode_layers(obj.layers)
        ids = struct.pack("<I", len(obj.class_ids)) + struct.pack(f"<{len(obj.class_ids)}I", *obj.class_ids)
        return head + _encode_entries(obj.params) + ids + _encode_entries(stats)
    if isinstance(obj, ParameterSet):
        return head + _encode_entries(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def entries(self):
        (count,) = self.unpack("<I", "entry count")
        params = ParameterSet()
        for _ in range(count):
            start = self.pos
            (name_len,) = self.unpack("<H", "name length")
            try:
                name = self.take(name_len, "name").decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("entry name is not valid UTF-8", start + 2) from None
            if name in params:
                raise FormatError(f"duplicate entry {name!r}", start)
            dtype_at = self.pos
            dtype, rank = self.unpack("<BB", "dtype/rank")
            if dtype != DTYPE_F64:
                raise FormatError(f"unsupported dtype code {dtype} for {name!r}", dtype_at)
            dims = self.unpack(f"<{rank}I", f"dims of {name!r}")
            n = int(np.prod(dims, dtype=np.int64))
            payload = self.take(8 * n, f"payload of {name!r}")
            params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        return params


def loads(data):
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    params = r.entries()
    if r.pos == len(r.data):
        return params
    (n_ids,) = r.unpack("<I", "class id count")
    class_ids = r.unpack(f"<{n_ids}I", "class ids")
    stats_at = r.pos
    stats = r.entries()
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes", r.pos)
    try:
        momentum = float(stats.pop("__bn_momentum__"))
        layers = _decode_layers(stats.pop("__layers__"))
        return Model(layers, params, class_ids, stats, momentum)
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"inconsistent model block: {e}", stats_at) from None


def save(obj, path):
    with open(path, "wb") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
