"""Replicated key-value store: command encoding and the deterministic state machine."""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .types import Batch, ClientReply, Request

_U32 = struct.Struct(">I")

OK = b"\x01"


class KvOp(enum.IntEnum):
    GET = 1
    PUT = 2
    MGET = 3
    MPUT = 4


@dataclass(frozen=True)
class KvCommand:
    op: KvOp
    keys: Tuple[bytes, ...]
    values: Tuple[bytes, ...] = ()

    def __post_init__(self) -> None:
        if not self.keys:
            raise ValueError("a command names at least one key")
        if self.op in (KvOp.GET, KvOp.PUT) and len(self.keys) != 1:
            raise ValueError(f"{self.op.name} takes exactly one key")
        if self.op in (KvOp.PUT, KvOp.MPUT):
            if len(self.values) != len(self.keys):
                raise ValueError("one value per key")
        elif self.values:
            raise ValueError(f"{self.op.name} carries no values")

    @classmethod
    def get(cls, key: bytes) -> "KvCommand":
        return cls(KvOp.GET, (key,))

    @classmethod
    def put(cls, key: bytes, value: bytes) -> "KvCommand":
        return cls(KvOp.PUT, (key,), (value,))

    @classmethod
    def mget(cls, keys: Sequence[bytes]) -> "KvCommand":
        return cls(KvOp.MGET, tuple(keys))

    @classmethod
    def mput(cls, items: Sequence[Tuple[bytes, bytes]]) -> "KvCommand":
        return cls(KvOp.MPUT, tuple(k for k, _ in items), tuple(v for _, v in items))

    @property
    def is_write(self) -> bool:
        return self.op in (KvOp.PUT, KvOp.MPUT)

    def encode(self) -> bytes:
        parts = [bytes((self.op,)), _U32.pack(len(self.keys))]
        for blob in self.keys + self.values:
            parts.append(_U32.pack(len(blob)))
            parts.append(blob)
        return b"".join(parts)

    @classmethod
    def decode(cls, payload: bytes) -> "KvCommand":
        if len(payload) < 5:
            raise ValueError("truncated KV command")
        op = KvOp(payload[0])
        (count,) = _U32.unpack_from(payload, 1)
        nblobs = count * 2 if op in (KvOp.PUT, KvOp.MPUT) else count
        off, blobs = 5, []
        for _ in range(nblobs):
            if off + 4 > len(payload):
                raise ValueError("truncated KV command")
            (ln,) = _U32.unpack_from(payload, off)
            off += 4
            blobs.append(bytes(payload[off : off + ln]))
            off += ln
        if off != len(payload):
            raise ValueError("trailing bytes in KV command")
        return cls(op, tuple(blobs[:count]), tuple(blobs[count:]))


def _lookup(store: Mapping[bytes, bytes], key: bytes) -> bytes:
    v = store.get(key)
    if v is None:
        return b"\x00"
    return b"\x01" + _U32.pack(len(v)) + v


def execute(store: Dict[bytes, bytes], cmd: KvCommand) -> bytes:
    """Run one command against a mutable store and return its encoded result."""
    if cmd.op is KvOp.GET:
        return _lookup(store, cmd.keys[0])
    if cmd.op is KvOp.MGET:
        return _U32.pack(len(cmd.keys)) + b"".join(_lookup(store, k) for k in cmd.keys)
    for k, v in zip(cmd.keys, cmd.values):
        store[k] = v
    return OK


def decode_result(cmd: KvCommand, result: bytes):
    """GET -> value or None (not found); MGET -> list of those; writes -> True."""

    def one(off: int) -> Tuple[Optional[bytes], int]:
        if result[off] == 0:
            return None, off + 1
        (ln,) = _U32.unpack_from(result, off + 1)
        return bytes(result[off + 5 : off + 5 + ln]), off + 5 + ln

    if cmd.op is KvOp.GET:
        return one(0)[0]
    if cmd.op is KvOp.MGET:
        (count,) = _U32.unpack_from(result, 0)
        off, vals = 4, []
        for _ in range(count):
            v, off = one(off)
            vals.append(v)
        return vals
    return result == OK


def apply_kv(state: Mapping[bytes, bytes], batch: Batch) -> Tuple[Dict[bytes, bytes], List[ClientReply]]:
    """Pure application of a decided, already de-duplicated batch."""
    store = dict(state)
    replies = [ClientReply(r.id, execute(store, KvCommand.decode(r.payload))) for r in batch.requests]
    return store, replies


class KvStateMachine:
    """Mutable wrapper the replica engine drives one request at a time."""

    def __init__(self) -> None:
        self.store: Dict[bytes, bytes] = {}

    def apply(self, request: Request) -> bytes:
        return execute(self.store, KvCommand.decode(request.payload))

    def snapshot(self) -> Dict[bytes, bytes]:
        return dict(self.store)

    def restore(self, snap: Mapping[bytes, bytes]) -> None:
        self.store = dict(snap)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.store):
            v = self.store[k]
            h.update(_U32.pack(len(k)) + k + _U32.pack(len(v)) + v)
        return h.hexdigest()
