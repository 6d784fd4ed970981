"""Config files and the binary weights container.

Config files are JSON objects whose keys mirror ``ModelConfig`` fields;
missing keys take the toy defaults.

Weights container (little-endian)::

    magic "CTXW" | version u16 | seed u64 | config length u32 | config JSON
    | tensor count u32 | tensors | crc32 u32

each tensor being ``name length u16 | name (utf-8) | ndim u8 | dims u32...
| float32 data``. The CRC covers every byte before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .codec import Model
from .entropy import EntropyHeadWeights
from .model import LayerWeights, ModelConfig, ModelWeights
from .tensor import F32, LinearParams

WEIGHTS_MAGIC = b"CTXW"
WEIGHTS_VERSION = 1
_PREFIX = struct.Struct("<4sHQI")


class WeightsFormatError(ValueError):
    pass


def load_config(path) -> ModelConfig:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return ModelConfig.from_dict(data)


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def _linear(prefix, p: LinearParams):
    return [(f"{prefix}.weight", p.weight), (f"{prefix}.bias", p.bias)]


def model_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    """Every parameter tensor with a stable dotted name."""
    w = model.weights
    out = _linear("embedding", w.embedding) + [("pos_table", w.pos_table)]
    for n, lw in enumerate(w.layers):
        p = f"layers.{n}"
        out += [(f"{p}.ln1.gain", lw.ln1_gain), (f"{p}.ln1.shift", lw.ln1_shift)]
        for name in ("q", "k", "v", "o"):
            out += _linear(f"{p}.{name}", getattr(lw, name))
        out += [(f"{p}.ln2.gain", lw.ln2_gain), (f"{p}.ln2.shift", lw.ln2_shift)]
        out += _linear(f"{p}.mlp_in", lw.mlp_in) + _linear(f"{p}.mlp_out", lw.mlp_out)
    out += [("final.gain", w.final_gain), ("final.shift", w.final_shift)]
    for name in ("l1", "l2", "l3"):
        out += _linear(f"head.{name}", getattr(model.head, name))
    return out


def save_weights(model: Model, path) -> None:
    cfg = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    tensors = model_tensors(model)
    parts = [_PREFIX.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, model.seed, len(cfg)), cfg]
    parts.append(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError("weights container is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_weights(path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + 4:
        raise WeightsFormatError("weights container is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    magic, version, seed, cfg_len = _PREFIX.unpack_from(body)
    if magic != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    if zlib.crc32(body) != crc:
        raise WeightsFormatError("weights container checksum mismatch")
    r = _Reader(body)
    r.pos = _PREFIX.size
    cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len)))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64)) * 4
        tensors[name] = np.frombuffer(r.take(size), dtype="<f4").astype(F32).reshape(shape)
    if r.pos != len(body):
        raise WeightsFormatError("trailing bytes after the tensor table")
    try:
        model = _assemble(cfg, seed, tensors)
    except (KeyError, ValueError) as err:
        raise WeightsFormatError(f"tensor table does not match the config: {err}") from None
    expected = {name: t.shape for name, t in model_tensors(Model.from_seed(cfg, seed))}
    got = {name: t.shape for name, t in model_tensors(model)}
    if got != expected or set(tensors) != set(expected):
        raise WeightsFormatError("tensor table does not match the config")
    return model


def _assemble(cfg: ModelConfig, seed: int, t: dict) -> Model:
    def lin(p):
        return LinearParams(t[f"{p}.weight"], t[f"{p}.bias"])

    layers = []
    for n in range(cfg.L):
        p = f"layers.{n}"
        layers.append(
            LayerWeights(
                t[f"{p}.ln1.gain"], t[f"{p}.ln1.shift"],
                lin(f"{p}.q"), lin(f"{p}.k"), lin(f"{p}.v"), lin(f"{p}.o"),
                t[f"{p}.ln2.gain"], t[f"{p}.ln2.shift"],
                lin(f"{p}.mlp_in"), lin(f"{p}.mlp_out"),
            )  # fmt: skip
        )
    weights = ModelWeights(lin("embedding"), t["pos_table"], layers, t["final.gain"], t["final.shift"])
    head = EntropyHeadWeights(lin("head.l1"), lin("head.l2"), lin("head.l3"))
    return Model(cfg, weights, head, seed)


def same_parameters(a: Model, b: Model) -> bool:
    ta, tb = model_tensors(a), model_tensors(b)
    return a.cfg == b.cfg and len(ta) == len(tb) and all(
        na == nb and x.shape == y.shape and x.tobytes() == y.tobytes() for (na, x), (nb, y) in zip(ta, tb)
    )
