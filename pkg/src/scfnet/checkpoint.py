"""Named-tensor checkpoint format.

Layout, all integers little-endian::

    b"SCFN"                       magic
    u32                           format version (1)
    u16 + utf-8 json              model config fingerprint
    u32                           tensor count
    per tensor:
        u16 + utf-8               name
        u8                        dtype (0 = f32)
        u8                        rank
        u32 * rank                dims
        f32 * prod(dims)          payload, row-major
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .core import FormatError, ValidationError
from .model import EXTRACTOR, ModelConfig, ModelParams, init_params

MAGIC = b"SCFN"
VERSION = 1
DTYPE_F32 = 0


def dumps(params: ModelParams) -> bytes:
    fp = json.dumps(params.config.fingerprint(), sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<H", len(fp)), fp]
    out.append(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        out.append(struct.pack("<H", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> ModelParams:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint: bad magic bytes")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (fp_len,) = r.unpack("<H")
    try:
        config = ModelConfig.from_fingerprint(json.loads(r.take(fp_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad config fingerprint: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype, rank = r.unpack("<BB")
        if dtype != DTYPE_F32:
            raise FormatError(f"tensor {name}: unsupported dtype code {dtype}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        payload = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(payload.astype(np.float32))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return ModelParams(config, tensors)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())


def load_extractor_only(path, new_config: ModelConfig, seed: int) -> ModelParams:
    """Reuse a checkpoint's extractor under a fresh, seeded classifier for ``new_config``.

    The returned extractor tensors are marked frozen.
    """
    source = load_checkpoint(path)
    have = source.config.extractor_fingerprint()
    want = new_config.extractor_fingerprint()
    if have != want:
        diff = {k: (have.get(k), want.get(k)) for k in set(have) | set(want) if have.get(k) != want.get(k)}
        raise ValidationError(f"extractor fingerprint mismatch (checkpoint, config): {diff}")
    fresh = init_params(new_config, seed)
    tensors = dict(fresh.tensors)
    for name, t in source.extractor().items():
        if name not in tensors or tensors[name].shape != t.shape:
            raise ValidationError(f"extractor tensor {name} does not fit the new config")
        tensors[name] = t.clone()
    frozen = frozenset(n for n in tensors if n.startswith(EXTRACTOR))
    return ModelParams(new_config, tensors, frozen)
