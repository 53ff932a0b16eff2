import numpy as np
import pytest

from hecnn import ckks
from hecnn.errors import FrameError
from hecnn.fileio import read_public_key, read_secret_key, read_tensor, write_public_key, write_secret_key, write_tensor
from hecnn.ring import RingParams


def test_tensor_roundtrip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(2, 3, 4))
    write_tensor(tmp_path / "t.bin", arr)
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:4] == (3).to_bytes(4, "little") and len(raw) == 4 + 24 + 8 * 24
    assert np.array_equal(read_tensor(tmp_path / "t.bin"), arr)


def test_tensor_truncated(tmp_path):
    write_tensor(tmp_path / "t.bin", np.zeros(5))
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-3])
    with pytest.raises(FrameError):
        read_tensor(tmp_path / "t.bin")


def test_key_roundtrip(tmp_path):
    p = RingParams.desk()
    sk, pk = ckks.keygen(p, np.random.default_rng(1))
    write_secret_key(tmp_path / "s.key", sk)
    write_public_key(tmp_path / "p.key", pk)
    sk2, pk2 = read_secret_key(tmp_path / "s.key"), read_public_key(tmp_path / "p.key")
    assert sk2.s == sk.s and pk2.a == pk.a and pk2.b == pk.b
    assert pk2.params == p
    with pytest.raises(FrameError):
        read_secret_key(tmp_path / "p.key")
