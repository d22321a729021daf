import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fabloop.pgm import PGMError, decode_pgm, encode_pgm, read_pgm, write_pgm


def test_known_bytes():
    img = np.array([[0, 255, 7]], dtype=np.uint8)
    assert encode_pgm(img) == b"P5\n3 1\n255\n\x00\xff\x07"


def test_header_comments():
    data = b"P5\n# made by hand\n2 2 # size\n255\n\x01\x02\x03\x04"
    np.testing.assert_array_equal(decode_pgm(data), [[1, 2], [3, 4]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20))))
def test_round_trip(img):
    out = decode_pgm(encode_pgm(img))
    assert out.dtype == np.uint8 and out.tobytes() == img.tobytes() and out.shape == img.shape


def test_file_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (31, 17), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


@pytest.mark.parametrize("data", [
    b"P2\n1 1\n255\n0",
    b"P5\n1 1\n65535\n\x00\x00",
    b"P5\n2 2\n255\n\x00",
    b"P5\n2",
    b"P5\n0 1\n255\n",
])
def test_rejects_bad_files(data):
    with pytest.raises(PGMError):
        decode_pgm(data)


def test_rejects_wrong_dtype():
    with pytest.raises(PGMError):
        encode_pgm(np.zeros((2, 2), dtype=np.uint16))
