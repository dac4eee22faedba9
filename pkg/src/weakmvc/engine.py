"""Replica engine: the slot loop around the per-slot consensus instances.

The engine is sans-IO. Drivers (the simulator, the TCP node) hand it client
requests, peer messages and timer firings, each stamped with the current
time in microseconds, and carry out the returned :class:`Effects`.

One consensus instance runs at a time. The engine keeps the pending-batch
priority queue, the dedup dictionary of batches decided elsewhere, the log,
and the applied-request table that makes re-submitted requests harmless.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Set, Tuple

from .config import (
    AddReplica,
    ClusterConfig,
    ConfigError,
    Settings,
    apply_reconfig,
    decode_reconfig,
)
from .consensus import StepOutput, WeakMvcInstance
from .kv import KvStateMachine
from .types import (
    Batch,
    BinValue,
    ClientReply,
    Decision,
    InvariantViolation,
    Message,
    MsgKind,
    Request,
    RequestId,
)

log = logging.getLogger(__name__)

ACCEPTED = b"\x01"
REJECTED = b"\x00"

# hook(event, replica, slot, phase, value)
EventHook = Callable[[str, int, int, int, object], None]


class StateMachine(Protocol):
    def apply(self, request: Request) -> bytes: ...

    def snapshot(self) -> object: ...

    def restore(self, snap: object) -> None: ...


@dataclass
class Effects:
    sends: List[Tuple[Tuple[int, ...], Message]] = field(default_factory=list)
    replies: List[Tuple[int, ClientReply]] = field(default_factory=list)  # (client_id, reply)
    timers: List[Tuple[float, str]] = field(default_factory=list)  # (delay_us, name)
    transfers: List[Tuple[int, "EngineSnapshot"]] = field(default_factory=list)


@dataclass
class EngineSnapshot:
    """State handed to a joining replica: everything up to and including `applied_upto`."""

    configs: List[Tuple[int, ClusterConfig]]
    next_slot: int
    applied_upto: int
    machine: object
    applied: Set[RequestId]
    results: Dict[RequestId, bytes]
    digests: Dict[int, Decision]


class ReplicaEngine:
    def __init__(
        self,
        replica_id: int,
        cluster: ClusterConfig,
        machine: Optional[StateMachine] = None,
        settings: Settings = Settings(),
        *,
        on_event: Optional[EventHook] = None,
        joining: bool = False,
    ) -> None:
        self.id = replica_id
        self.settings = settings
        self.machine = machine if machine is not None else KvStateMachine()
        self.on_event = on_event
        # (first slot, config) pairs, ascending
        self.configs: List[Tuple[int, ClusterConfig]] = [(1, cluster)]
        self.status = "joining" if joining else "member"

        self.pq: List[Tuple[tuple, Batch]] = []
        self._queued: Set[tuple] = set()
        self._seen: Set[tuple] = set()
        self.dedup: Dict[RequestId, int] = {}

        self.log: Dict[int, Decision] = {}
        self.digests: Dict[int, Decision] = {}
        self.seq = 1
        self.applied_upto = 0
        self.applied: Set[RequestId] = set()
        self.results: Dict[RequestId, bytes] = {}

        self.active: Optional[WeakMvcInstance] = None
        self.my_proposal: Optional[Batch] = None
        self.buffered: Dict[int, List[Message]] = {}
        self.acks: Dict[int, Set[int]] = {}

        self.clients: Dict[RequestId, int] = {}  # requests this replica proxies
        self._batch: List[Request] = []
        self._batch_ids: Set[RequestId] = set()
        self._batch_timer = False
        self._freeze_armed = False

        self.slots_decided = 0
        self.null_slots = 0

    # -- configuration ----------------------------------------------------------

    def config_for(self, slot: int) -> ClusterConfig:
        for first, cfg in reversed(self.configs):
            if slot >= first:
                return cfg
        return self.configs[0][1]

    @property
    def config(self) -> ClusterConfig:
        return self.configs[-1][1]

    # -- entry points -------------------------------------------------------------

    def boot(self, now: float) -> Effects:
        eff = Effects()
        if self.settings.compaction_interval_ms > 0:
            eff.timers.append((self.settings.compaction_interval_ms * 1000, "compact"))
        return eff

    def submit(self, requests: Sequence[Request], client_id: int, now: float) -> Effects:
        """A client handed these requests to this replica (its proxy)."""
        eff = Effects()
        if self.status != "member":
            return eff
        for r in requests:
            if r.id in self.applied:
                eff.replies.append((client_id, ClientReply(r.id, self.results.get(r.id, REJECTED))))
                continue
            if r.id in self.clients:
                continue  # duplicate submission, already in flight here
            cmd = decode_reconfig(r.payload)
            if cmd is not None:
                try:
                    apply_reconfig(self.config, cmd)
                except ConfigError as e:
                    log.info("replica %d rejects %s: %s", self.id, cmd, e)
                    eff.replies.append((client_id, ClientReply(r.id, REJECTED)))
                    continue
            self.clients[r.id] = client_id
            if r.id not in self._batch_ids:
                self._batch.append(r)
                self._batch_ids.add(r.id)
        if len(self._batch) >= self.settings.proxy_batch_size:
            self._close_batch(eff)
        elif self._batch and not self._batch_timer:
            self._batch_timer = True
            eff.timers.append((self.settings.batch_timeout_ms * 1000, "batch"))
        self._advance(now, eff)
        return eff

    def receive(self, m: Message, now: float) -> Effects:
        eff = Effects()
        if self.status == "left":
            return eff
        kind = m.kind
        if kind is MsgKind.FORWARD:
            self._enqueue(m.body)
            self._advance(now, eff)
            return eff
        if kind is MsgKind.PROPOSAL:
            self._enqueue(m.body)
        elif kind is MsgKind.DECIDED:
            self.acks.setdefault(m.slot, set()).add(m.sender)

        if m.slot < self.seq:
            if kind is MsgKind.CATCHUP_REQ:
                self._answer_catchup(m, eff)
            return eff
        if m.slot == self.seq and self.active is not None:
            self._feed(m, eff, now)
        else:
            self.buffered.setdefault(m.slot, []).append(m)
        self._advance(now, eff)
        return eff

    def tick(self, name: str, now: float) -> Effects:
        eff = Effects()
        if name == "batch":
            self._batch_timer = False
            if self._batch:
                self._close_batch(eff)
        elif name == "compact":
            self.compact_log()
            eff.timers.append((self.settings.compaction_interval_ms * 1000, "compact"))
        elif name == "freeze":
            self._freeze_armed = False
        self._advance(now, eff)
        return eff

    # -- proposals ------------------------------------------------------------------

    def _close_batch(self, eff: Effects) -> None:
        batch = Batch(tuple(self._batch))
        self._batch.clear()
        self._batch_ids.clear()
        self._enqueue(batch)
        others = tuple(r for r in self.config.members if r != self.id)
        if others:
            eff.sends.append((others, Message(MsgKind.FORWARD, 0, self.id, self.config.epoch, body=batch)))

    def _enqueue(self, batch: Batch) -> None:
        bid = batch.batch_id
        if bid in self._seen:
            return
        self._seen.add(bid)
        if all(rid in self.applied for rid in batch.request_ids()):
            self._clear_dedup(batch)
            return
        self._push(batch)

    def _push(self, batch: Batch) -> None:
        bid = batch.batch_id
        if bid not in self._queued:
            self._queued.add(bid)
            heapq.heappush(self.pq, (batch.key, batch))

    def _clear_dedup(self, batch: Batch) -> None:
        for rid in batch.request_ids():
            self.dedup.pop(rid, None)

    def next_proposal(self) -> Optional[Batch]:
        """Pop batches until one holds a request not yet in the log; None if the queue runs dry."""
        while self.pq:
            _, batch = heapq.heappop(self.pq)
            self._queued.discard(batch.batch_id)
            if all(rid in self.dedup or rid in self.applied for rid in batch.request_ids()):
                self._clear_dedup(batch)
                continue
            return batch
        return None

    # -- the slot loop ------------------------------------------------------------------

    def _advance(self, now: float, eff: Effects) -> None:
        while self.active is None and self.status == "member":
            slot = self.seq
            if slot in self.log:  # adopted earlier, e.g. delivered with a snapshot
                self._finish_slot(self.log[slot], eff)
                continue
            pending = self.buffered.get(slot, ())
            announced = next((m for m in pending if m.kind is MsgKind.DECIDED), None)
            if announced is not None:
                # a peer already finished this slot; take its outcome without running an instance
                self._emit("adopt", slot, announced.phase, BinValue.ZERO if announced.body.is_null else BinValue.ONE)
                self._emit("output", slot, announced.phase, announced.body)
                self.buffered.pop(slot, None)
                self.my_proposal = None
                self._finish_slot(announced.body, eff, hops=announced.hops)
                continue
            fs = self.settings.freeze_time_us
            if fs > 0 and not pending and self.pq:
                head = self.pq[0][1]
                age = now - head.batch_ts
                if age < fs:
                    if not self._freeze_armed:
                        self._freeze_armed = True
                        eff.timers.append((fs - age, "freeze"))
                    return
            proposal = self.next_proposal()
            if proposal is None:
                joined = [m.body for m in pending if m.kind is MsgKind.PROPOSAL]
                if not joined:
                    return
                # peers are running this slot and every batch we hold is logged:
                # join with the oldest proposal we have seen for it
                proposal = min(joined, key=lambda b: b.key)
            self._start(slot, proposal, eff, now)

    def _start(self, slot: int, proposal: Batch, eff: Effects, now: float) -> None:
        cfg = self.config_for(slot)
        listener = None
        if self.on_event is not None:
            hook, rid = self.on_event, self.id
            listener = lambda ev, p, v: hook(ev, rid, slot, p, v)  # noqa: E731
        inst = WeakMvcInstance(
            slot, self.id, cfg.n, cfg.f, epoch=cfg.epoch, shared_seed=cfg.shared_seed, listener=listener
        )
        self.active = inst
        self.my_proposal = proposal
        eff.sends.extend((cfg.members, m) for m in inst.start(proposal))
        for m in self.buffered.pop(slot, ()):
            if self.active is inst:
                self._feed(m, eff, now)
            elif m.kind is MsgKind.CATCHUP_REQ:
                self._answer_catchup(m, eff)

    def _feed(self, m: Message, eff: Effects, now: float) -> None:
        inst = self.active
        if m.epoch != inst.epoch:
            log.warning("replica %d drops %s for slot %d: epoch %d != %d", self.id, m.kind.name, m.slot, m.epoch, inst.epoch)
            return
        out = inst.on_message(m)
        self._ship(out, eff)
        if out.decision is not None:
            self._finish_slot(out.decision, eff, hops=inst.depth)

    def _ship(self, out: StepOutput, eff: Effects) -> None:
        members = self.config_for(self.active.slot).members
        for m in out.outbound:
            if m.kind is MsgKind.DECIDED:
                self.acks.setdefault(m.slot, set()).add(self.id)
                eff.sends.append((tuple(r for r in members if r != self.id), m))
            else:
                eff.sends.append((members, m))
        for to, m in out.replies:
            eff.sends.append(((to,), m))

    def _finish_slot(self, d: Decision, eff: Effects, *, hops: int = 0) -> None:
        slot = self.seq
        prior = self.log.get(slot)
        if prior is not None and prior != d:
            raise InvariantViolation(f"replica {self.id}: slot {slot} rewritten from {prior} to {d}")
        self.log[slot] = d
        self.acks.setdefault(slot, set()).add(self.id)
        self._emit("log", slot, 0, (d, hops))
        mine = self.my_proposal
        if d.batch is None or d.batch != mine:
            if mine is not None:
                self._push(mine)  # forfeited, retry in a later slot
            if d.batch is not None:
                bid = d.batch.batch_id
                if bid in self._queued or bid not in self._seen:
                    for rid in d.batch.request_ids():
                        if rid not in self.applied:
                            self.dedup[rid] = slot
        self.slots_decided += 1
        if d.batch is None:
            self.null_slots += 1
        self.active = None
        self.my_proposal = None
        self.seq = slot + 1
        self.apply_and_respond(eff)
        if self.id not in self.config_for(self.seq).members:
            self.status = "left"
            log.info("replica %d leaves the group after slot %d", self.id, slot)

    # -- execution ------------------------------------------------------------------------

    def apply_and_respond(self, eff: Optional[Effects] = None) -> List[Tuple[int, ClientReply]]:
        """Execute contiguous decided slots in order; returns replies owed to this replica's clients."""
        eff = eff if eff is not None else Effects()
        start = len(eff.replies)
        while self.applied_upto + 1 in self.log:
            slot = self.applied_upto + 1
            d = self.log[slot]
            if d.batch is not None:
                for r in d.batch.requests:
                    if r.id in self.applied:
                        result = self.results.get(r.id)
                    else:
                        result = self._execute(slot, r, eff)
                        self.applied.add(r.id)
                        self.results[r.id] = result
                        self._emit("apply", slot, 0, r.id)
                    client = self.clients.pop(r.id, None)
                    if client is not None:
                        eff.replies.append((client, ClientReply(r.id, result)))
            self.applied_upto = slot
        return eff.replies[start:]

    def _execute(self, slot: int, r: Request, eff: Effects) -> bytes:
        cmd = decode_reconfig(r.payload)
        if cmd is None:
            return self.machine.apply(r)
        try:
            new = apply_reconfig(self.config, cmd)
        except ConfigError as e:
            log.info("replica %d skips %s at slot %d: %s", self.id, cmd, slot, e)
            return REJECTED
        self.configs.append((slot + 1, new))
        self._emit("reconfig", slot, new.epoch, new.members)
        if isinstance(cmd, AddReplica):
            eff.transfers.append((cmd.replica_id, self.export_snapshot(through=slot)))
        return ACCEPTED

    # -- catch-up, compaction, state transfer ----------------------------------------

    def decision_at(self, slot: int) -> Optional[Decision]:
        d = self.log.get(slot)
        return d if d is not None else self.digests.get(slot)

    def _answer_catchup(self, m: Message, eff: Effects) -> None:
        d = self.decision_at(m.slot)
        if d is None:
            log.warning("replica %d cannot serve catch-up for slot %d beyond the digest horizon", self.id, m.slot)
            return
        if d.batch is None:
            raise InvariantViolation(f"catch-up requested for NULL slot {m.slot}")
        epoch = self.config_for(m.slot).epoch
        resp = Message(MsgKind.CATCHUP_RESP, m.slot, self.id, epoch, m.phase, 0, d.batch, m.hops + 1)
        eff.sends.append(((m.sender,), resp))

    def compact_log(self) -> int:
        """Move executed slots out of the log into the bounded digest table."""
        truncated = 0
        for slot in sorted(s for s in self.log if s <= self.applied_upto):
            if self.settings.conservative_compaction:
                cfg = self.config_for(slot)
                if len(self.acks.get(slot, ())) < cfg.n // 2 + 1:
                    break
            self.digests[slot] = self.log.pop(slot)
            self.acks.pop(slot, None)
            truncated += 1
        horizon = self.applied_upto - self.settings.digest_horizon
        for slot in [s for s in self.digests if s <= horizon]:
            del self.digests[slot]
        return truncated

    def export_snapshot(self, through: int) -> EngineSnapshot:
        digests = dict(self.digests)
        digests.update({s: d for s, d in self.log.items() if s <= through})
        return EngineSnapshot(
            configs=list(self.configs),
            next_slot=through + 1,
            applied_upto=through,
            machine=self.machine.snapshot(),
            applied=set(self.applied),
            results=dict(self.results),
            digests=digests,
        )

    def install_snapshot(self, snap: EngineSnapshot, now: float) -> Effects:
        eff = Effects()
        if self.status != "joining":
            return eff
        self.configs = list(snap.configs)
        self.seq = snap.next_slot
        self.applied_upto = snap.applied_upto
        self.machine.restore(snap.machine)
        self.applied = set(snap.applied)
        self.results = dict(snap.results)
        self.digests = dict(snap.digests)
        for slot in [s for s in self.buffered if s < self.seq]:
            del self.buffered[slot]
        self.status = "member"
        self._emit("joined", self.seq, 0, self.config.epoch)
        self._advance(now, eff)
        return eff

    def _emit(self, event: str, slot: int, phase: int, value: object) -> None:
        if self.on_event is not None:
            self.on_event(event, self.id, slot, phase, value)
