import asyncio
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msggen import random_message
from weakmvc import wire
from weakmvc.types import Batch, BinValue, Message, MsgKind, Request, RequestId, VoteValue


def vote(phase=1):
    return Message(MsgKind.VOTE, 7, 2, 1, phase, 2, VoteValue.QUESTION)


def test_header_layout():
    frame = wire.encode(Message(MsgKind.STATE, 5, 3, 2, 4, 1, BinValue.ONE))
    assert len(frame) == wire.HEADER.size + 1
    length, version, kind, epoch, slot, phase, rnd, sender, body_len = wire.HEADER.unpack_from(frame)
    assert (version, kind, epoch, slot, phase, rnd, sender, body_len) == (1, 2, 2, 5, 4, 1, 3, 1)
    assert length == len(frame) - 4


@settings(max_examples=300)
@given(st.integers(0, 2**63))
def test_roundtrip_every_kind(seed):
    m = random_message(random.Random(seed))
    assert wire.decode(wire.encode(m)) == m


@given(st.lists(st.integers(0, 2**32), min_size=1, max_size=6), st.integers(1, 50))
def test_stream_decoder_handles_any_chunking(seeds, chunk):
    msgs = [random_message(random.Random(s)) for s in seeds]
    data = b"".join(wire.encode(m) for m in msgs)
    dec = wire.FrameDecoder()
    out = []
    for i in range(0, len(data), chunk):
        out.extend(dec.feed(data[i : i + chunk]))
    assert out == msgs


def test_rejects_bad_version():
    frame = bytearray(wire.encode(vote()))
    frame[4] = 9
    with pytest.raises(wire.WireError, match="version"):
        wire.decode(bytes(frame))


def test_rejects_unknown_kind():
    frame = bytearray(wire.encode(vote()))
    frame[5] = 200
    with pytest.raises(wire.WireError, match="kind"):
        wire.decode(bytes(frame))


def test_rejects_length_mismatch_and_truncation():
    frame = wire.encode(Message(MsgKind.PROPOSAL, 1, 1, body=Batch.of(Request(RequestId(1, 1), 1, b"abc"))))
    with pytest.raises(wire.WireError):
        wire.decode(frame[:-1])
    with pytest.raises(wire.WireError):
        wire.decode(frame[:10])


def test_rejects_bad_bodies():
    head = lambda kind, body: wire.HEADER.pack(wire.FIXED + len(body), 1, kind, 0, 1, 1, 1, 1, len(body)) + body  # noqa: E731
    with pytest.raises(wire.WireError):
        wire.decode(head(MsgKind.VOTE, b"\x05"))
    with pytest.raises(wire.WireError):
        wire.decode(head(MsgKind.STATE, b"\x00\x01"))
    with pytest.raises(wire.WireError):
        wire.decode(head(MsgKind.CATCHUP_REQ, b"\x00"))
    with pytest.raises(wire.WireError):
        wire.decode(head(MsgKind.CLIENT_RESPONSE, struct.pack(">I", 3)))
    # a proposal at a non-zero phase is structurally valid but semantically not
    body = wire.encode_body(Message(MsgKind.PROPOSAL, 1, 1, body=Batch.of(Request(RequestId(1, 1), 1))))
    with pytest.raises(wire.WireError):
        wire.decode(head(MsgKind.PROPOSAL, body))


def test_rejects_oversized_frame():
    with pytest.raises(wire.WireError, match="exceeds"):
        wire.FrameDecoder().feed(struct.pack(">I", wire.MAX_FRAME + 1))


def test_read_frame_from_stream():
    async def go():
        reader = asyncio.StreamReader()
        m = vote(3)
        reader.feed_data(wire.encode(m) + wire.encode(m))
        reader.feed_eof()
        return await wire.read_frame(reader), await wire.read_frame(reader)

    a, b = asyncio.run(go())
    assert a == b == vote(3)
