import hashlib
import struct
from dataclasses import replace

import pytest
import torch

from scfnet.checkpoint import dumps, load_checkpoint, load_extractor_only, loads, save_checkpoint
from scfnet.core import FormatError, ValidationError
from scfnet.model import ModelConfig, init_params

CFG = ModelConfig(n_channels=16, window_samples=64, n_classes=6, feature_width=8)


def test_roundtrip_bitwise(tmp_path):
    p = init_params(CFG, 1)
    save_checkpoint(p, tmp_path / "a.ckpt")
    q = load_checkpoint(tmp_path / "a.ckpt")
    assert q.config == p.config
    assert list(q.tensors) == list(p.tensors)
    for n in p.tensors:
        assert q.tensors[n].numpy().tobytes() == p.tensors[n].numpy().tobytes()


def test_header_layout():
    buf = dumps(init_params(CFG, 1))
    assert buf[:4] == b"SCFN"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    (fp_len,) = struct.unpack("<H", buf[8:10])
    fp = buf[10:10 + fp_len].decode()
    assert '"feature_width":8' in fp
    (count,) = struct.unpack("<I", buf[10 + fp_len:14 + fp_len])
    assert count == len(init_params(CFG, 1).tensors)
    pos = 14 + fp_len
    (nlen,) = struct.unpack("<H", buf[pos:pos + 2])
    name = buf[pos + 2:pos + 2 + nlen].decode()
    dtype, rank = buf[pos + 2 + nlen], buf[pos + 3 + nlen]
    dims = struct.unpack(f"<{rank}I", buf[pos + 4 + nlen:pos + 4 + nlen + 4 * rank])
    assert name == "extractor.inception.branches.0.weight"
    assert dtype == 0 and dims == (2, 1, 3)


def test_corrupt_magic(tmp_path):
    buf = bytearray(dumps(init_params(CFG, 1)))
    buf[0:4] = b"XXXX"
    with pytest.raises(FormatError, match="magic"):
        loads(bytes(buf))


def test_bad_version_and_dtype():
    buf = bytearray(dumps(init_params(CFG, 1)))
    bad = bytearray(buf)
    bad[4:8] = struct.pack("<I", 2)
    with pytest.raises(FormatError, match="version"):
        loads(bytes(bad))
    (fp_len,) = struct.unpack("<H", buf[8:10])
    pos = 14 + fp_len
    (nlen,) = struct.unpack("<H", buf[pos:pos + 2])
    buf[pos + 2 + nlen] = 7
    with pytest.raises(FormatError, match="dtype"):
        loads(bytes(buf))


def test_truncated():
    buf = dumps(init_params(CFG, 1))
    for cut in (3, 12, len(buf) // 2, len(buf) - 1):
        with pytest.raises(FormatError):
            loads(buf[:cut])


def test_stable_hash(tmp_path):
    p = init_params(CFG, 4)
    save_checkpoint(p, tmp_path / "a.ckpt")
    save_checkpoint(p.clone(), tmp_path / "b.ckpt")
    h = [hashlib.sha256((tmp_path / f).read_bytes()).hexdigest() for f in ("a.ckpt", "b.ckpt")]
    assert h[0] == h[1]


def test_extractor_only_into_8_channels(tmp_path):
    src = init_params(CFG, 1)
    for t in src.tensors.values():
        t.add_(0.5)  # make sure nothing is re-initialized by accident
    save_checkpoint(src, tmp_path / "a.ckpt")
    cfg8 = replace(CFG, n_channels=8)
    p = load_extractor_only(tmp_path / "a.ckpt", cfg8, seed=3)
    for n, t in src.extractor().items():
        assert p.tensors[n].numpy().tobytes() == t.numpy().tobytes()
    assert p.tensors["classifier.hidden.weight"].shape == (CFG.classifier_hidden, 8 * 16)
    assert p.frozen == frozenset(src.extractor())


def test_extractor_only_same_channels_differs_only_in_head(tmp_path):
    src = init_params(CFG, 1)
    for t in src.tensors.values():
        t.add_(0.5)
    save_checkpoint(src, tmp_path / "a.ckpt")
    p = load_extractor_only(tmp_path / "a.ckpt", CFG, seed=3)
    full = load_checkpoint(tmp_path / "a.ckpt")
    for n in full.tensors:
        same = torch.equal(full.tensors[n], p.tensors[n])
        assert same == n.startswith("extractor.")


def test_extractor_fingerprint_mismatch(tmp_path):
    save_checkpoint(init_params(CFG, 1), tmp_path / "a.ckpt")
    with pytest.raises(ValidationError, match="fingerprint"):
        load_extractor_only(tmp_path / "a.ckpt", replace(CFG, feature_width=4), seed=0)


def test_end2end_extractor_refuses_new_channel_count(tmp_path):
    e2e = replace(CFG, arch="end2end")
    save_checkpoint(init_params(e2e, 1), tmp_path / "e.ckpt")
    with pytest.raises(ValidationError, match="fingerprint"):
        load_extractor_only(tmp_path / "e.ckpt", replace(e2e, n_channels=8), seed=0)
