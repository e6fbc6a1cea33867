import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binattn.bitops import pack_signs
from binattn.errors import FormatError, IoError, ValidationError
from binattn.quantize import quantize_coeffs, quantize_values
from binattn.tensor_io import (
    BitMatrix,
    DenseMatrix,
    QuantizedValues,
    from_bytes,
    read_tensor,
    to_bytes,
    write_tensor,
)


def test_identity_real32_layout(tmp_path):
    m = DenseMatrix(np.eye(2, dtype=np.float32))
    path = tmp_path / "eye.batf"
    write_tensor(path, m)
    raw = path.read_bytes()
    assert raw[:4] == b"BATF"
    assert struct.unpack_from("<IBB", raw, 4) == (1, 0, 2)
    assert struct.unpack_from("<2Q", raw, 10) == (2, 2)
    assert len(raw) == 4 + 4 + 1 + 1 + 16 + 16
    back = read_tensor(path)
    assert back == m and back.data.dtype == np.float32


def test_positive_zero_survives(tmp_path):
    path = tmp_path / "z.batf"
    write_tensor(path, DenseMatrix(np.array([[0.0]])))
    back = read_tensor(path)
    assert not np.signbit(back.data[0, 0])
    assert back.data.tobytes() == np.float64(0.0).tobytes()


def test_serialize_twice_is_byte_identical(rng):
    m = DenseMatrix(rng.standard_normal((7, 65)).astype(np.float32))
    first = to_bytes(m)
    again = to_bytes(from_bytes(first))
    assert first == again


def test_real64_round_trip(tmp_path, rng):
    m = DenseMatrix(rng.standard_normal((3, 5)))
    write_tensor(tmp_path / "a", m)
    assert read_tensor(tmp_path / "a") == m


def test_bad_magic():
    buf = bytearray(to_bytes(DenseMatrix(np.ones((1, 1)))))
    buf[:4] = b"XXXX"
    with pytest.raises(FormatError):
        from_bytes(bytes(buf))


@pytest.mark.parametrize("offset,value", [(4, 9), (8, 7)])
def test_bad_version_or_dtype(offset, value):
    buf = bytearray(to_bytes(DenseMatrix(np.ones((1, 1)))))
    buf[offset] = value
    with pytest.raises(FormatError):
        from_bytes(bytes(buf))


def test_truncated_payload():
    buf = to_bytes(DenseMatrix(np.ones((3, 3))))
    with pytest.raises(FormatError):
        from_bytes(buf[:-1])


def test_nonzero_pad_bit_rejected(rng):
    bits = pack_signs(rng.standard_normal((2, 70)))
    buf = bytearray(to_bytes(bits))
    # last byte is the top of row 1's second word: bits 56..63 of it, all padding
    buf[-1] |= 0x80
    with pytest.raises(FormatError):
        from_bytes(bytes(buf))


def test_non_finite_rejected():
    with pytest.raises(ValidationError):
        DenseMatrix(np.array([[np.nan]]))
    with pytest.raises(ValidationError):
        to_bytes(np.array([[1.0, np.inf]]))


def test_io_error(tmp_path):
    with pytest.raises(IoError):
        read_tensor(tmp_path / "missing.batf")
    with pytest.raises(IoError):
        write_tensor(tmp_path / "no" / "such" / "dir.batf", DenseMatrix(np.ones((1, 1))))


def test_containers_are_immutable(rng):
    m = DenseMatrix(rng.standard_normal((2, 2)))
    with pytest.raises(ValueError):
        m.data[0, 0] = 1.0


def test_quantized_kinds_round_trip(rng):
    qv = quantize_values(rng.standard_normal((5, 3)))
    assert from_bytes(to_bytes(qv)) == qv
    qc = quantize_coeffs(rng.random((4, 4)))
    assert from_bytes(to_bytes(qc)) == qc


def test_quantized_values_reject_minus_128():
    with pytest.raises(ValidationError):
        QuantizedValues(np.array([[-128]], dtype=np.int8), np.ones(1))


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 9), cols=st.integers(1, 257), seed=st.integers(0, 2**32 - 1))
def test_round_trip_all_kinds(rows, cols, seed):
    r = np.random.default_rng(seed)
    m = r.standard_normal((rows, cols))
    for t in (DenseMatrix(m), DenseMatrix(m.astype(np.float32)), pack_signs(m), quantize_values(m)):
        back = from_bytes(to_bytes(t))
        assert back == t
        assert to_bytes(back) == to_bytes(t)


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 257), seed=st.integers(0, 2**32 - 1))
def test_unpack_of_pack_is_sign(rows, cols, seed):
    r = np.random.default_rng(seed)
    m = r.standard_normal((rows, cols))
    m[r.random(m.shape) < 0.1] = 0.0
    expected = np.where(m >= 0, 1, -1)
    assert np.array_equal(pack_signs(m).signs(), expected)
    assert isinstance(pack_signs(m), BitMatrix)
