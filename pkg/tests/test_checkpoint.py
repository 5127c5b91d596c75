"""Checkpoint binary format: round trips, struct layout, corruption handling."""

import struct

import numpy as np
import pytest

from fcfp.autodiff import Tensor
from fcfp.checkpoint import MAGIC, VERSION, load_checkpoint, load_into, save_checkpoint
from fcfp.rng import Rng


def _sample_named(seed=1):
    rng = Rng(seed)
    return [
        ("enc.w", rng.child(0).normal_array((3, 2, 3, 3), dtype=np.float32).astype(np.float32)),
        ("enc.b", np.zeros(3, dtype=np.float32)),
        ("head.w", rng.child(1).normal_array((4, 2))),          # float64
        ("scalar", np.array(2.5, dtype=np.float64)),            # rank 0
    ]


def test_round_trip_values(tmp_path):
    p = str(tmp_path / "a.ckpt")
    named = _sample_named()
    save_checkpoint(p, named)
    loaded = load_checkpoint(p)
    assert [n for n, _ in loaded] == [n for n, _ in named]
    for (_, want), (_, got) in zip(named, loaded):
        assert got.dtype == want.dtype and got.shape == want.shape
        assert np.array_equal(got, want)


def test_save_load_save_byte_identical(tmp_path):
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    save_checkpoint(p1, _sample_named())
    save_checkpoint(p2, load_checkpoint(p1))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_struct_layout(tmp_path):
    p = str(tmp_path / "c.ckpt")
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_checkpoint(p, [("t", arr)])
    blob = open(p, "rb").read()
    assert blob[:4] == MAGIC == b"FCFP"
    version, count = struct.unpack_from("<II", blob, 4)
    assert version == VERSION == 1 and count == 1
    (name_len,) = struct.unpack_from("<H", blob, 12)
    assert name_len == 1 and blob[14:15] == b"t"
    code, rank = struct.unpack_from("<BB", blob, 15)
    assert code == 0 and rank == 2  # float32, 2-D
    dims = struct.unpack_from("<2I", blob, 17)
    assert dims == (2, 3)
    payload = np.frombuffer(blob[25:], dtype="<f4")
    assert np.array_equal(payload.reshape(2, 3), arr)
    assert len(blob) == 25 + 6 * 4


def test_future_version_rejected(tmp_path):
    p = str(tmp_path / "v2.ckpt")
    save_checkpoint(p, [("t", np.zeros(2, dtype=np.float32))])
    blob = bytearray(open(p, "rb").read())
    blob[4:8] = struct.pack("<I", 2)
    open(p, "wb").write(bytes(blob))
    with pytest.raises(ValueError, match="version 2"):
        load_checkpoint(p)


def test_bad_magic_rejected(tmp_path):
    p = str(tmp_path / "junk.ckpt")
    open(p, "wb").write(b"JUNKxxxxxxxxxxxx")
    with pytest.raises(ValueError, match="bad magic"):
        load_checkpoint(p)


def test_truncated_payload_rejected(tmp_path):
    p = str(tmp_path / "t.ckpt")
    save_checkpoint(p, [("t", np.ones((4, 4), dtype=np.float64))])
    blob = open(p, "rb").read()
    open(p, "wb").write(blob[:-9])
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_trailing_garbage_rejected(tmp_path):
    p = str(tmp_path / "g.ckpt")
    save_checkpoint(p, [("t", np.ones(3, dtype=np.float32))])
    with open(p, "ab") as f:
        f.write(b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(p)


def test_load_into_matches_by_name(tmp_path):
    p = str(tmp_path / "m.ckpt")
    w = Rng(3).normal_array((2, 2))
    save_checkpoint(p, [("a", w)])
    t = Tensor(np.zeros((2, 2)), requires_grad=True)
    load_into(p, [("a", t)])
    assert np.array_equal(t.data, w)


def test_load_into_missing_name(tmp_path):
    p = str(tmp_path / "m2.ckpt")
    save_checkpoint(p, [("a", np.zeros(2))])
    with pytest.raises(KeyError, match="missing parameter"):
        load_into(p, [("b", Tensor(np.zeros(2)))])


def test_load_into_extra_tensor(tmp_path):
    p = str(tmp_path / "m3.ckpt")
    save_checkpoint(p, [("a", np.zeros(2)), ("stale", np.zeros(1))])
    with pytest.raises(ValueError, match="unmatched"):
        load_into(p, [("a", Tensor(np.zeros(2)))])


def test_load_into_shape_mismatch(tmp_path):
    p = str(tmp_path / "m4.ckpt")
    save_checkpoint(p, [("a", np.zeros((2, 3)))])
    with pytest.raises(ValueError, match="shape mismatch"):
        load_into(p, [("a", Tensor(np.zeros((3, 2))))])


def test_unsupported_dtype_on_save(tmp_path):
    with pytest.raises(ValueError, match="unsupported checkpoint dtype"):
        save_checkpoint(str(tmp_path / "x.ckpt"), [("a", np.zeros(2, dtype=np.int32))])
