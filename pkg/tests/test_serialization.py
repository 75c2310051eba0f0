import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.cli import load_model
from artifact.cnn import CnnClassifier
from artifact.exceptions import ChecksumMismatch, IoError, VersionMismatch
from artifact.generator import CharLSTM
from artifact.serialization import BlockWriter, frame, read_bytes, unframe
from artifact.svm import SvmClassifier


def test_block_round_trip():
    w = BlockWriter()
    w.u64(7)
    w.string("héllo")
    w.json({"a": [1, 2]})
    w.array("m", np.arange(6.0).reshape(2, 3))
    w.array("s", np.float64(2.5))
    r = unframe(b"TEST", frame(b"TEST", w.getvalue()))
    assert r.u64() == 7 and r.string() == "héllo" and r.json() == {"a": [1, 2]}
    name, arr = r.array()
    assert name == "m" and arr.shape == (2, 3) and arr[1, 2] == 5.0
    assert r.array()[1] == 2.5


def test_framing_errors():
    data = frame(b"TEST", b"payload")
    with pytest.raises(VersionMismatch):
        unframe(b"XXXX", data)
    with pytest.raises(ChecksumMismatch):
        unframe(b"TEST", data[:10])
    bumped = bytearray(frame(b"TEST", b"payload"))
    bumped[4] = 9
    head = bytes(bumped[:-8])
    import struct
    import zlib
    with pytest.raises(VersionMismatch):
        unframe(b"TEST", head + struct.pack("<Q", zlib.crc32(head)))


@settings(max_examples=100)
@given(st.data())
def test_any_flipped_bit_is_detected(data):
    blob = frame(b"TEST", bytes(range(200)))
    pos = data.draw(st.integers(4, len(blob) - 1))
    bit = data.draw(st.integers(0, 7))
    bad = bytearray(blob)
    bad[pos] ^= 1 << bit
    with pytest.raises((ChecksumMismatch, VersionMismatch)):
        unframe(b"TEST", bytes(bad))


@pytest.fixture(scope="module")
def model_blobs(syscall_cnn, syscall_svm, small_lm):
    return {CnnClassifier: syscall_cnn.to_bytes(), SvmClassifier: syscall_svm.to_bytes(),
            CharLSTM: small_lm.to_bytes()}


@settings(max_examples=40)
@given(st.sampled_from([CnnClassifier, SvmClassifier, CharLSTM]), st.data())
def test_models_reject_corruption(model_blobs, cls, data):
    blob = model_blobs[cls]
    pos = data.draw(st.integers(12, len(blob) - 1))
    bad = bytearray(blob)
    bad[pos] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        cls.from_bytes(bytes(bad))


def test_load_dispatch_by_magic(tmp_path, model_blobs):
    for cls, blob in model_blobs.items():
        path = tmp_path / cls.__name__
        path.write_bytes(blob)
        assert type(load_model(path)) is cls
    with pytest.raises(IoError):
        read_bytes(tmp_path / "absent")
