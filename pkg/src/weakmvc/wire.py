"""Length-prefixed binary frames.

Layout, all integers big-endian::

    u32 length   bytes that follow this field
    u8  version  always 1
    u8  kind
    u32 epoch
    u64 slot
    u32 phase
    u8  round
    u16 sender
    u32 body_len
    ...  body

Body by kind: a batch (PROPOSAL, FORWARD, CATCHUP_RESP), one byte (STATE,
VOTE), an optional batch where empty means NULL (DECIDED), nothing
(CATCHUP_REQ), a request list (CLIENT_REQUEST) or a reply list
(CLIENT_RESPONSE).
"""

from __future__ import annotations

import struct
from typing import Iterator, List, Tuple

from .types import (
    NULL,
    Batch,
    BinValue,
    ClientReply,
    Decision,
    Message,
    MsgKind,
    Request,
    RequestId,
    VoteValue,
)

VERSION = 1
HEADER = struct.Struct(">IBBIQIBHI")
LENGTH = struct.Struct(">I")
FIXED = HEADER.size - LENGTH.size  # 25 bytes counted by the length field before the body
MAX_FRAME = 64 << 20

_REQ = struct.Struct(">IQQI")
_REPLY = struct.Struct(">IQI")
_U32 = struct.Struct(">I")


class WireError(ValueError):
    pass


def _requests_bytes(reqs) -> bytes:
    parts = [_U32.pack(len(reqs))]
    for r in reqs:
        parts.append(_REQ.pack(r.id.client_id, r.id.seq_no, r.timestamp, len(r.payload)))
        parts.append(r.payload)
    return b"".join(parts)


def _read_requests(buf: bytes) -> Tuple[Request, ...]:
    if len(buf) < 4:
        raise WireError("truncated request list")
    (count,) = _U32.unpack_from(buf, 0)
    off = 4
    out = []
    for _ in range(count):
        if off + _REQ.size > len(buf):
            raise WireError("truncated request header")
        cid, seq, ts, plen = _REQ.unpack_from(buf, off)
        off += _REQ.size
        if off + plen > len(buf):
            raise WireError("truncated request payload")
        out.append(Request(RequestId(cid, seq), ts, bytes(buf[off : off + plen])))
        off += plen
    if off != len(buf):
        raise WireError("trailing bytes after request list")
    return tuple(out)


def encode_body(m: Message) -> bytes:
    k, body = m.kind, m.body
    if k in (MsgKind.PROPOSAL, MsgKind.FORWARD, MsgKind.CATCHUP_RESP):
        return _requests_bytes(body.requests)
    if k is MsgKind.STATE or k is MsgKind.VOTE:
        return bytes((int(body),))
    if k is MsgKind.DECIDED:
        return b"" if body.batch is None else _requests_bytes(body.batch.requests)
    if k is MsgKind.CATCHUP_REQ:
        return b""
    if k is MsgKind.CLIENT_REQUEST:
        return _requests_bytes(body)
    if k is MsgKind.CLIENT_RESPONSE:
        parts = [_U32.pack(len(body))]
        for rep in body:
            parts.append(_REPLY.pack(rep.request_id.client_id, rep.request_id.seq_no, len(rep.result)))
            parts.append(rep.result)
        return b"".join(parts)
    raise WireError(f"no body encoding for {k!r}")


def decode_body(kind: MsgKind, buf: bytes):
    if kind in (MsgKind.PROPOSAL, MsgKind.FORWARD, MsgKind.CATCHUP_RESP):
        return Batch(_read_requests(buf))
    if kind is MsgKind.STATE or kind is MsgKind.VOTE:
        if len(buf) != 1:
            raise WireError(f"{kind.name} body must be one byte")
        try:
            return BinValue(buf[0]) if kind is MsgKind.STATE else VoteValue(buf[0])
        except ValueError as e:
            raise WireError(str(e)) from None
    if kind is MsgKind.DECIDED:
        return NULL if not buf else Decision.agreed(Batch(_read_requests(buf)))
    if kind is MsgKind.CATCHUP_REQ:
        if buf:
            raise WireError("CATCHUP_REQ has no body")
        return None
    if kind is MsgKind.CLIENT_REQUEST:
        return _read_requests(buf)
    if kind is MsgKind.CLIENT_RESPONSE:
        (count,) = _U32.unpack_from(buf, 0)
        off, out = 4, []
        for _ in range(count):
            cid, seq, rlen = _REPLY.unpack_from(buf, off)
            off += _REPLY.size
            out.append(ClientReply(RequestId(cid, seq), bytes(buf[off : off + rlen])))
            off += rlen
        if off != len(buf):
            raise WireError("trailing bytes after reply list")
        return tuple(out)
    raise WireError(f"no body decoding for {kind!r}")


def encode(m: Message) -> bytes:
    body = encode_body(m)
    return (
        HEADER.pack(FIXED + len(body), VERSION, m.kind, m.epoch, m.slot, m.phase, m.round, m.sender, len(body))
        + body
    )


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(frame) < HEADER.size:
        raise WireError("frame shorter than header")
    length, version, kind, epoch, slot, phase, rnd, sender, body_len = HEADER.unpack_from(frame, 0)
    if version != VERSION:
        raise WireError(f"unsupported wire version {version}")
    if length != FIXED + body_len or len(frame) != LENGTH.size + length:
        raise WireError("length fields disagree with frame size")
    try:
        mk = MsgKind(kind)
    except ValueError:
        raise WireError(f"unknown message kind {kind}") from None
    try:
        body = decode_body(mk, frame[HEADER.size :])
    except WireError:
        raise
    except (struct.error, ValueError) as e:
        raise WireError(f"malformed {mk.name} body: {e}") from None
    try:
        return Message(mk, slot, sender, epoch, phase, rnd, body)
    except (TypeError, ValueError) as e:
        raise WireError(str(e)) from None


class FrameDecoder:
    """Incremental decoder for a byte stream carrying back-to-back frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> List[Message]:
        self._buf += data
        return list(self._drain())

    def _drain(self) -> Iterator[Message]:
        while len(self._buf) >= LENGTH.size:
            (length,) = LENGTH.unpack_from(self._buf, 0)
            if length > MAX_FRAME:
                raise WireError(f"frame of {length} bytes exceeds limit")
            end = LENGTH.size + length
            if len(self._buf) < end:
                return
            frame = bytes(self._buf[:end])
            del self._buf[:end]
            yield decode(frame)


async def read_frame(reader) -> Message:
    """Read one frame from an asyncio StreamReader."""
    head = await reader.readexactly(LENGTH.size)
    (length,) = LENGTH.unpack(head)
    if length > MAX_FRAME:
        raise WireError(f"frame of {length} bytes exceeds limit")
    rest = await reader.readexactly(length)
    return decode(head + rest)
