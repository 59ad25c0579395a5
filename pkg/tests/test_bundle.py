import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nibkit.bundle import MAGIC, read_bundle, write_bundle
from nibkit.errors import (
    BadMagicError,
    DuplicateNameError,
    TrailingBytesError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    VersionMismatchError,
)


def roundtrip(entries):
    return read_bundle(write_bundle(entries))


class TestRoundtrip:
    def test_empty_bundle(self):
        assert roundtrip({}) == {}

    def test_single_tensor_bitwise(self):
        arr = np.array([[1.5, -2.25], [0.125, 4.0]], dtype=np.float32)
        out = roundtrip({"w": arr})
        assert list(out) == ["w"]
        assert out["w"].dtype == np.float32
        assert out["w"].tobytes() == arr.tobytes()

    def test_f64_input_stored_as_f32(self):
        arr = np.array([1.0 / 3.0], dtype=np.float64)
        out = roundtrip({"x": arr})
        assert out["x"].dtype == np.float32
        assert out["x"][0] == np.float32(1.0 / 3.0)

    def test_order_preserved(self):
        entries = {"b": np.zeros(1, np.float32), "a": np.ones(2, np.float32)}
        assert list(roundtrip(entries)) == ["b", "a"]

    def test_scalar_and_empty_shapes(self):
        out = roundtrip({"s": np.float32(7.0), "e": np.zeros((0, 3), np.float32)})
        assert out["s"].shape == ()
        assert out["e"].shape == (0, 3)


class TestErrors:
    def test_bad_magic(self):
        data = write_bundle({"x": np.ones(2, np.float32)})
        with pytest.raises(BadMagicError):
            read_bundle(b"XXXX" + data[4:])

    def test_version_mismatch(self):
        data = bytearray(write_bundle({}))
        data[4] = 9
        with pytest.raises(VersionMismatchError):
            read_bundle(bytes(data))

    def test_duplicate_name_on_write(self):
        with pytest.raises(DuplicateNameError):
            write_bundle([("x", np.ones(1, np.float32)), ("x", np.ones(1, np.float32))])

    def test_duplicate_name_on_read(self):
        one = write_bundle({"x": np.ones(1, np.float32)})
        entry = one[12:]
        doubled = MAGIC + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + entry + entry
        with pytest.raises(DuplicateNameError):
            read_bundle(doubled)

    def test_truncated_payload(self):
        data = write_bundle({"x": np.ones(4, np.float32)})
        with pytest.raises(TruncatedPayloadError):
            read_bundle(data[:-3])

    def test_trailing_bytes(self):
        data = write_bundle({"x": np.ones(1, np.float32)})
        with pytest.raises(TrailingBytesError):
            read_bundle(data + b"\x00")

    def test_unsupported_dtype(self):
        data = bytearray(write_bundle({"x": np.ones(1, np.float32)}))
        # dtype byte sits right after the 4-byte name length and 1-byte name
        dtype_offset = 4 + 4 + 4 + 4 + 1
        data[dtype_offset] = 7
        with pytest.raises(UnsupportedDtypeError):
            read_bundle(bytes(data))

    def test_distinct_error_codes(self):
        codes = {
            BadMagicError.code, VersionMismatchError.code, DuplicateNameError.code,
            TruncatedPayloadError.code, TrailingBytesError.code, UnsupportedDtypeError.code,
        }
        assert len(codes) == 6


names = st.text(
    alphabet=st.characters(whitelist_categories=("L", "Nd"), whitelist_characters="._-/"),
    min_size=1, max_size=24,
)
shapes = st.lists(st.integers(min_value=0, max_value=5), min_size=0, max_size=3)


@st.composite
def bundles(draw):
    count = draw(st.integers(min_value=0, max_value=5))
    entries = {}
    for i in range(count):
        name = f"{draw(names)}#{i}"  # suffix keeps names unique
        shape = tuple(draw(shapes))
        seed = draw(st.integers(min_value=0, max_value=2**31))
        entries[name] = np.random.default_rng(seed).normal(0, 1, shape).astype(np.float32)
    return entries


@given(bundles())
@settings(max_examples=60, deadline=None)
def test_roundtrip_identity_property(entries):
    out = roundtrip(entries)
    assert list(out) == list(entries)
    for name, arr in entries.items():
        assert out[name].shape == arr.shape
        assert out[name].tobytes() == arr.tobytes()
