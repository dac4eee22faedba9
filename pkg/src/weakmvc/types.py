"""Domain vocabulary shared by every layer: requests, batches, protocol values, messages."""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple, Union


class ProtocolError(Exception):
    """Raised when a caller drives a consensus instance or engine outside its contract."""


class InvariantViolation(AssertionError):
    """A safety property was observed to be broken. Never expected in a correct run."""


@dataclass(frozen=True, order=True)
class RequestId:
    client_id: int
    seq_no: int

    def __str__(self) -> str:
        return f"{self.client_id}.{self.seq_no}"


@dataclass(frozen=True)
class Request:
    id: RequestId
    timestamp: int  # microseconds; only relative order matters
    payload: bytes = b""


def request_key(r: Request) -> Tuple[int, int, int]:
    """Priority-queue key: oldest timestamp first, ties broken by (client_id, seq_no)."""
    return (r.timestamp, r.id.client_id, r.id.seq_no)


def _encode_request(r: Request) -> bytes:
    return struct.pack(">IQQI", r.id.client_id, r.id.seq_no, r.timestamp, len(r.payload)) + r.payload


@dataclass(frozen=True)
class Batch:
    """Unit of agreement for one slot. A single request travels as a batch of one."""

    requests: Tuple[Request, ...]

    def __post_init__(self) -> None:
        if not self.requests:
            raise ValueError("a batch holds at least one request")
        ids = [r.id for r in self.requests]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate request id inside a batch")

    @classmethod
    def of(cls, *requests: Request) -> "Batch":
        return cls(tuple(requests))

    @property
    def batch_ts(self) -> int:
        return min(r.timestamp for r in self.requests)

    @cached_property
    def oldest(self) -> Request:
        return min(self.requests, key=request_key)

    @cached_property
    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=8)
        for r in self.requests:
            h.update(_encode_request(r))
        return h.digest()

    @cached_property
    def batch_id(self) -> Tuple[RequestId, bytes]:
        # first request id plus a content hash: two batches with the same
        # leading request but different contents stay distinct
        return (self.requests[0].id, self.digest)

    @cached_property
    def key(self) -> Tuple[int, int, int, bytes]:
        return request_key(self.oldest) + (self.digest,)

    def request_ids(self) -> Tuple[RequestId, ...]:
        return tuple(r.id for r in self.requests)

    def __hash__(self) -> int:
        return hash(self.batch_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Batch):
            return NotImplemented
        return self is other or self.requests == other.requests


class BinValue(enum.IntEnum):
    ZERO = 0
    ONE = 1


class VoteValue(enum.IntEnum):
    ZERO = 0
    ONE = 1
    QUESTION = 2  # abstain

    def as_bin(self) -> BinValue:
        if self is VoteValue.QUESTION:
            raise ValueError("? carries no binary value")
        return BinValue(int(self))


@dataclass(frozen=True)
class Decision:
    """Output of one consensus instance: an agreed batch, or NULL (batch is None)."""

    batch: Optional[Batch] = None

    @property
    def is_null(self) -> bool:
        return self.batch is None

    @classmethod
    def agreed(cls, batch: Batch) -> "Decision":
        return cls(batch)

    def __repr__(self) -> str:
        if self.batch is None:
            return "Decision(NULL)"
        return f"Decision(agreed {self.batch.requests[0].id}+{len(self.batch.requests) - 1})"


NULL = Decision(None)


class MsgKind(enum.IntEnum):
    PROPOSAL = 1
    STATE = 2
    VOTE = 3
    DECIDED = 4
    CATCHUP_REQ = 5
    CATCHUP_RESP = 6
    # client-facing and dissemination traffic; no slot semantics
    FORWARD = 7
    CLIENT_REQUEST = 8
    CLIENT_RESPONSE = 9


CONSENSUS_KINDS = frozenset(
    {MsgKind.PROPOSAL, MsgKind.STATE, MsgKind.VOTE, MsgKind.DECIDED, MsgKind.CATCHUP_REQ, MsgKind.CATCHUP_RESP}
)


@dataclass(frozen=True)
class ClientReply:
    request_id: RequestId
    result: bytes


Body = Union[None, Batch, BinValue, VoteValue, Decision, Tuple[Request, ...], Tuple[ClientReply, ...]]

_BODY_TYPES = {
    MsgKind.PROPOSAL: Batch,
    MsgKind.STATE: BinValue,
    MsgKind.VOTE: VoteValue,
    MsgKind.DECIDED: Decision,
    MsgKind.CATCHUP_REQ: type(None),
    MsgKind.CATCHUP_RESP: Batch,
    MsgKind.FORWARD: Batch,
    MsgKind.CLIENT_REQUEST: tuple,
    MsgKind.CLIENT_RESPONSE: tuple,
}


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    slot: int
    sender: int
    epoch: int = 0
    phase: int = 0
    round: int = 0
    body: Body = None
    # causal hop count; simulator bookkeeping only, never on the wire
    hops: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        expected = _BODY_TYPES[self.kind]
        if not isinstance(self.body, expected):
            raise TypeError(f"{self.kind.name} carries {expected.__name__}, got {type(self.body).__name__}")
        if self.kind is MsgKind.PROPOSAL and self.phase != 0:
            raise ValueError("PROPOSAL messages live in phase 0")
