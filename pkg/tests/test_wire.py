import pytest
from hypothesis import given, strategies as st

from epochrep.coordinator import EpochBatch, Update
from epochrep.core import Csn, OpKind, TxnMeta, WriteRecord
from epochrep.wire import (MsgKind, WireError, batch_size_bytes, decode_batch, decode_message, encode_batch,
                           encode_message)

records = st.builds(WriteRecord, st.binary(min_size=1, max_size=12), st.sampled_from(list(OpKind)),
                    st.binary(max_size=20))


@st.composite
def batches(draw):
    cen = draw(st.integers(1, 2**40))
    ups = []
    for t in draw(st.lists(st.integers(0, 2**50), max_size=6, unique=True)):
        sen = draw(st.integers(0, cen))
        ws = tuple(draw(st.lists(records, max_size=4)))
        ups.append(Update(TxnMeta(sen, 0, Csn(t, draw(st.integers(0, 2**31))), cen), ws))
    return EpochBatch(draw(st.integers(0, 2**31)), cen, tuple(ups), draw(st.integers(0, 1000)), draw(st.booleans()))


@given(batches())
def test_round_trip(b):
    buf = encode_batch(b)
    assert len(buf) == batch_size_bytes(b)
    assert decode_batch(buf) == b


def test_truncation_detected():
    b = EpochBatch(1, 2, (Update(TxnMeta(2, 0, Csn(1, 1), 2), (WriteRecord(b"k", OpKind.UPDATE, b"v"),)),))
    buf = encode_batch(b)
    for cut in (3, len(buf) - 1):
        with pytest.raises(WireError):
            decode_batch(buf[:cut])
    with pytest.raises(WireError):
        decode_batch(buf + b"\x00")


def test_envelope():
    kind, payload = decode_message(encode_message(MsgKind.ACK, b"abc"))
    assert kind is MsgKind.ACK and payload == b"abc"
    with pytest.raises(WireError):
        decode_message(b"\x63")
    with pytest.raises(WireError):
        decode_message(b"")
