import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerwlab.lattice import NEIGHBOR_OFFSETS, BallDomain
from lerwlab.loop_erasure import SelfAvoidingPath, lerw_sample
from lerwlab.pathio import PathFormatError, decode_steps, dumps, encode_steps, loads, read_path, write_path
from lerwlab.rng import SeedSpec
from lerwlab.walks import LatticePath


def test_header_layout():
    p = LatticePath(np.array([[1, 2, 3], [2, 2, 3], [2, 1, 3]]), 16.0)
    buf = dumps(p)
    assert buf[:4] == b"LRWP"
    assert int.from_bytes(buf[4:6], "little") == 1
    assert int.from_bytes(buf[16:24], "little") == 2
    # +x is code 0, -y is code 3: bits 000 then 110 -> 0b00011000
    assert buf[48:] == bytes([0b00011000])
    q = loads(buf)
    assert type(q) is LatticePath and q.m == 16.0 and (q.points == p.points).all()


def test_loop_erased_flag_roundtrip(tmp_path):
    eta = lerw_sample(BallDomain(12), SeedSpec(1, 2))
    write_path(tmp_path / "p.bin", eta)
    back = read_path(tmp_path / "p.bin")
    assert isinstance(back, SelfAvoidingPath) and (back.points == eta.points).all() and back.m == eta.m


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5), max_size=100), st.tuples(*[st.integers(-1000, 1000)] * 3))
def test_roundtrip(codes, start):
    pts = np.zeros((len(codes) + 1, 3), dtype=np.int64)
    pts[0] = start
    if codes:
        pts[1:] = np.asarray(start) + np.cumsum(NEIGHBOR_OFFSETS[codes], axis=0)
    data = encode_steps(pts)
    assert len(data) == (3 * len(codes) + 7) // 8
    assert (decode_steps(data, len(codes), start) == pts).all()
    assert (loads(dumps(LatticePath(pts, 3.0))).points == pts).all()


def test_errors():
    with pytest.raises(PathFormatError):
        encode_steps(np.array([[0, 0, 0], [2, 0, 0]]))
    good = dumps(LatticePath(np.array([[0, 0, 0], [1, 0, 0]]), 1.0))
    with pytest.raises(PathFormatError, match="magic"):
        loads(b"XXXX" + good[4:])
    with pytest.raises(PathFormatError, match="version"):
        loads(good[:4] + (9).to_bytes(2, "little") + good[6:])
    with pytest.raises(PathFormatError, match="header"):
        loads(good[:10])
    with pytest.raises(PathFormatError, match="truncated"):
        loads(good[:48] if len(good) > 48 else good[:-1])
    with pytest.raises(PathFormatError, match="invalid"):
        loads(good[:48] + bytes([0b111]))
