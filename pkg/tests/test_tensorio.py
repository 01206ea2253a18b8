import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pegeo.tensorio import MAGIC, TensorFormatError, decode, encode, read_tensor, write_tensor


def test_layout_is_magic_header_newline_payload():
    blob = encode(np.array([[1.0, 2.0, 3.0]]), "f32")
    assert blob[:4] == b"PGT1"
    head, body = blob[4:].split(b"\n", 1)
    assert json.loads(head) == {"dims": [1, 3], "dtype": "f32", "byte_order": "little"}
    assert body == b"\x00\x00\x80?\x00\x00\x00@\x00\x00@@"


def test_f64_payload_is_little_endian_row_major():
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    body = encode(arr)[4:].split(b"\n", 1)[1]
    assert body == arr.astype("<f8").tobytes()
    assert np.frombuffer(body, "<f8")[3] == 3.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.lists(st.integers(0, 5), min_size=0, max_size=4).map(tuple),
              elements=st.floats(allow_nan=False, width=64)))
def test_f64_roundtrip_is_exact(arr):
    out = decode(encode(arr, "f64"))
    assert out.shape == arr.shape
    assert np.array_equal(out, arr)


def test_file_roundtrip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(2, 3, 4))
    path = write_tensor(tmp_path / "t.pgt", arr)
    assert np.array_equal(read_tensor(path), arr)


@pytest.mark.parametrize("blob", [b"XXXX{}\n", MAGIC + b'{"dims":[2]', MAGIC + b"nope\n",
                                  MAGIC + b'{"dims":[2],"dtype":"f64","byte_order":"little"}\n\x00',
                                  MAGIC + b'{"dims":[1],"dtype":"i8","byte_order":"little"}\n' + bytes(8),
                                  MAGIC + b'{"dims":[1],"dtype":"f64","byte_order":"big"}\n' + bytes(8)])
def test_malformed_inputs_raise(blob):
    with pytest.raises(TensorFormatError):
        decode(blob)


def test_unknown_dtype_rejected_on_encode():
    with pytest.raises(TensorFormatError):
        encode(np.zeros(2), "f16")
