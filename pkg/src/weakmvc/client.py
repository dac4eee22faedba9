"""Client session: client-side batching, proxy selection and timeout failover.

Sans-IO like the engine. A driver calls :meth:`ClientSession.call`, sends
the returned requests to ``session.proxy``, feeds replies back through
:meth:`ClientSession.on_reply`, and calls :meth:`ClientSession.on_timeout`
when a call has waited ``timeout_us`` without completing. A retry resends
the same request ids to a randomly chosen different replica, so a request
that was already decided is answered from the new proxy's result table
instead of being executed again.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .kv import KvCommand, decode_result
from .types import ClientReply, Request, RequestId


class Unavailable(Exception):
    """Every retry of a call timed out."""


@dataclass
class Call:
    call_id: int
    commands: Tuple[KvCommand, ...]
    requests: Tuple[Request, ...]
    invoked_at: float
    results: Dict[RequestId, bytes] = field(default_factory=dict)
    attempts: int = 1
    proxy: int = -1


@dataclass
class CompletedCall:
    call_id: int
    commands: Tuple[KvCommand, ...]
    results: List[object]  # decoded per command, in submission order
    invoked_at: float
    completed_at: float


class ClientSession:
    def __init__(
        self,
        client_id: int,
        replicas: Sequence[int],
        *,
        proxy: Optional[int] = None,
        timeout_us: float = 50_000,
        retry_budget: int = 8,
        rng: Optional[random.Random] = None,
    ) -> None:
        if not replicas:
            raise ValueError("no replicas to talk to")
        self.client_id = client_id
        self.replicas = list(replicas)
        self.rng = rng if rng is not None else random.Random(client_id)
        self.proxy = proxy if proxy is not None else self.replicas[client_id % len(self.replicas)]
        self.timeout_us = timeout_us
        self.retry_budget = retry_budget
        self.next_seq = 1
        self._next_call = 1
        self.outstanding: Dict[int, Call] = {}
        self._owner: Dict[RequestId, int] = {}
        self.failovers = 0

    def call(self, commands: Sequence[KvCommand], now: float) -> Call:
        """Wrap commands into requests, one per command, sent together in one message."""
        reqs = []
        for cmd in commands:
            reqs.append(Request(RequestId(self.client_id, self.next_seq), int(now), cmd.encode()))
            self.next_seq += 1
        c = Call(self._next_call, tuple(commands), tuple(reqs), now, proxy=self.proxy)
        self._next_call += 1
        self.outstanding[c.call_id] = c
        for r in reqs:
            self._owner[r.id] = c.call_id
        return c

    def on_reply(self, reply: ClientReply, now: float) -> Optional[CompletedCall]:
        cid = self._owner.get(reply.request_id)
        if cid is None:
            return None  # late duplicate
        c = self.outstanding[cid]
        c.results.setdefault(reply.request_id, reply.result)
        if len(c.results) < len(c.requests):
            return None
        del self.outstanding[cid]
        for r in c.requests:
            del self._owner[r.id]
        decoded = [decode_result(cmd, c.results[r.id]) for cmd, r in zip(c.commands, c.requests)]
        return CompletedCall(cid, c.commands, decoded, c.invoked_at, now)

    def abandon(self, call_id: int) -> Optional[Call]:
        """Stop waiting for a call; late replies to it are ignored."""
        c = self.outstanding.pop(call_id, None)
        if c is not None:
            for r in c.requests:
                self._owner.pop(r.id, None)
        return c

    def on_timeout(self, call_id: int, now: float) -> Optional[Call]:
        """Fail over to another replica; returns the call to resend, or None if already complete."""
        c = self.outstanding.get(call_id)
        if c is None:
            return None
        if c.attempts > self.retry_budget:
            raise Unavailable(f"client {self.client_id}: call {call_id} timed out {c.attempts} times")
        others = [r for r in self.replicas if r != c.proxy] or self.replicas
        self.proxy = self.rng.choice(others)
        c.proxy = self.proxy
        c.attempts += 1
        self.failovers += 1
        return c
