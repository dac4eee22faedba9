"""Deterministic discrete-event simulation of a replica group and its clients.

Everything random (message delays, workload, failover choices, which
in-flight messages of a crashed sender survive) is drawn from streams
derived from one 64-bit seed, and simultaneous events are ordered by
insertion sequence. The same (config, workload, seed) therefore always
yields the same trace.
"""

from __future__ import annotations

import heapq
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..client import ClientSession, CompletedCall, Unavailable
from ..coin import mix64
from ..config import ClusterConfig, ReconfigCommand, Settings, encode_reconfig
from ..engine import Effects, ReplicaEngine
from ..kv import KvCommand, KvStateMachine
from ..linearizability import Operation
from ..types import ClientReply, Message, ProtocolError, Request, RequestId
from .checker import Report, check_invariants
from .stats import RunStats, SlotStats, summarize

log = logging.getLogger(__name__)

DELIVER, SUBMIT, REPLY, TIMER, CLIENT_TIMEOUT, CLIENT_WAKE, CRASH, TRANSFER, ADMIN = range(9)
_PERIODIC_TIMERS = frozenset({"compact"})
ADMIN_CLIENT = 65000


class SafetyViolation(AssertionError):
    def __init__(self, report: Report, result: "ScenarioResult") -> None:
        super().__init__(str(report))
        self.report = report
        self.result = result


def stream(seed: int, name: str) -> random.Random:
    """An independent RNG stream for one purpose."""
    h = seed
    for ch in name.encode():
        h = mix64(h ^ ch)
    return random.Random(h)


@dataclass(frozen=True)
class NetworkModel:
    """Per-message delay = base + Exp(mean); per-pair FIFO by clamping delivery times."""

    base_us: float = 100.0
    jitter_mean_us: float = 50.0
    client_base_us: float = 100.0
    client_jitter_mean_us: float = 50.0
    self_delay_us: float = 0.0
    keep_after_crash: float = 0.5  # chance an in-flight message from a crashed sender still arrives
    loss: float = 0.0  # lossy mode between live replicas; off by default


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 3
    f: int = 1
    shared_seed: int = 0
    settings: Settings = Settings()
    network: NetworkModel = NetworkModel()
    crashes: Tuple[Tuple[int, float], ...] = ()  # (replica, time_us)
    standby: Tuple[int, ...] = ()  # replicas that exist but join only through reconfiguration
    max_time_us: float = 600e6
    max_events: int = 20_000_000
    record_deliveries: bool = False
    check: bool = True

    def cluster(self) -> ClusterConfig:
        return ClusterConfig(tuple(range(1, self.n + 1)), self.f, shared_seed=self.shared_seed)


@dataclass(frozen=True)
class Workload:
    clients: int = 1
    requests: int = 100  # KV commands per client
    mode: str = "closed"  # "closed" loop or "open" loop
    interval_us: float = 0.0  # closed: think time; open: mean gap between calls
    client_batch: int = 1  # commands per client message
    keys: int = 8
    write_ratio: float = 0.5
    mput_keys: int = 0  # >0: writes are MPUTs touching this many keys
    start_us: float = 0.0
    proxies: Tuple[int, ...] = ()  # initial proxy per client; default round robin
    admin: Tuple[Tuple[float, int, ReconfigCommand], ...] = ()  # (time_us, proxy, command)


@dataclass
class Trace:
    events: List[tuple] = field(default_factory=list)  # (time, event, replica, slot, phase, value)
    deliveries: List[Tuple[float, int, Message]] = field(default_factory=list)


@dataclass
class ScenarioResult:
    seed: int
    trace: Trace
    stats: RunStats
    history: List[Operation]
    replicas: Dict[int, ReplicaEngine]
    crashed: Dict[int, float]
    report: Optional[Report]
    admin_results: Dict[RequestId, bytes]

    @property
    def live(self) -> List[ReplicaEngine]:
        return [e for r, e in sorted(self.replicas.items()) if r not in self.crashed and e.status == "member"]


class _SimClient:
    def __init__(self, world: "SimWorld", cid: int, session: ClientSession, workload: Workload, rng: random.Random):
        self.world = world
        self.cid = cid
        self.session = session
        self.w = workload
        self.rng = rng
        self.remaining = workload.requests
        self.done = False
        self.gave_up = 0

    def _commands(self) -> List[KvCommand]:
        n = min(self.w.client_batch, self.remaining)
        self.remaining -= n
        cmds = []
        for _ in range(n):
            key = b"k%d" % self.rng.randrange(self.w.keys)
            if self.rng.random() < self.w.write_ratio:
                value = b"c%d-%d" % (self.cid, self.session.next_seq + len(cmds))
                if self.w.mput_keys > 0:
                    ks = [b"k%d" % ((int(key[1:]) + i) % self.w.keys) for i in range(self.w.mput_keys)]
                    cmds.append(KvCommand.mput([(k, value) for k in dict.fromkeys(ks)]))
                else:
                    cmds.append(KvCommand.put(key, value))
            else:
                cmds.append(KvCommand.get(key))
        return cmds

    def wake(self, now: float) -> None:
        if self.remaining <= 0:
            return
        call = self.session.call(self._commands(), now)
        self.world._client_send(self.cid, call.proxy, call.requests)
        self.world._schedule(now + self.session.timeout_us, CLIENT_TIMEOUT, self.cid, call.call_id, call.attempts)
        if self.w.mode == "open" and self.remaining > 0:
            gap = self.rng.expovariate(1.0 / self.w.interval_us) if self.w.interval_us > 0 else 0.0
            self.world._schedule(now + gap, CLIENT_WAKE, self.cid, None, None)

    def on_reply(self, reply: ClientReply, now: float) -> None:
        done = self.session.on_reply(reply, now)
        if done is None:
            return
        self._record(done)
        if self.w.mode == "closed":
            if self.remaining > 0:
                self.world._schedule(now + self.w.interval_us, CLIENT_WAKE, self.cid, None, None)
        self._check_done()

    def on_timeout(self, call_id: int, attempt: int, now: float) -> None:
        call = self.session.outstanding.get(call_id)
        if call is None or call.attempts != attempt:
            return
        try:
            call = self.session.on_timeout(call_id, now)
        except Unavailable:
            self.gave_up += 1
            c = self.session.abandon(call_id)
            for cmd in c.commands:
                self.world.history.append(Operation(self.cid, cmd, c.invoked_at, None))
            if self.w.mode == "closed" and self.remaining > 0:
                self.world._schedule(now, CLIENT_WAKE, self.cid, None, None)
            self._check_done()
            return
        self.world._client_send(self.cid, call.proxy, call.requests)
        self.world._schedule(now + self.session.timeout_us, CLIENT_TIMEOUT, self.cid, call.call_id, call.attempts)

    def _record(self, done: CompletedCall) -> None:
        for cmd, res in zip(done.commands, done.results):
            self.world.history.append(Operation(self.cid, cmd, done.invoked_at, done.completed_at, res))

    def _check_done(self) -> None:
        if self.remaining <= 0 and not self.session.outstanding:
            self.done = True


class SimWorld:
    def __init__(self, config: ScenarioConfig, workload: Workload, seed: int) -> None:
        self.config = config
        self.workload = workload
        self.seed = seed
        self.net = config.network
        self.delay_rng = stream(seed, "delay")
        self.crash_rng = stream(seed, "crash")
        self.loss_rng = stream(seed, "loss")
        self.now = 0.0
        self.heap: List[tuple] = []
        self._seq = 0
        self._work = 0
        self.events_processed = 0
        self.messages_sent = 0
        self.trace = Trace()
        self.history: List[Operation] = []
        self.crashed: Dict[int, float] = {}
        self._fifo: Dict[tuple, float] = {}
        self.admin_results: Dict[RequestId, bytes] = {}
        self.slot_hops: Dict[int, Dict[int, int]] = defaultdict(dict)
        self.slot_phase: Dict[int, int] = {}
        self.slot_null: Dict[int, bool] = {}

        cluster = config.cluster()
        hook = self._on_event
        self.replicas: Dict[int, ReplicaEngine] = {}
        for rid in cluster.members:
            self.replicas[rid] = ReplicaEngine(rid, cluster, KvStateMachine(), config.settings, on_event=hook)
        for rid in config.standby:
            self.replicas[rid] = ReplicaEngine(rid, cluster, KvStateMachine(), config.settings, on_event=hook, joining=True)
        for rid, eng in self.replicas.items():
            self._effects(rid, eng.boot(0.0))

        if len(config.crashes) > config.f:
            raise ValueError(f"{len(config.crashes)} crashes scheduled but f={config.f}")
        for rid, t in config.crashes:
            self._schedule(t, CRASH, rid, None, None)

        self.clients: Dict[int, _SimClient] = {}
        wrng = stream(seed, "workload")
        members = list(cluster.members)
        for i in range(workload.clients):
            cid = i + 1
            proxy = workload.proxies[i] if i < len(workload.proxies) else members[i % len(members)]
            session = ClientSession(
                cid,
                members,
                proxy=proxy,
                timeout_us=config.settings.client_timeout_ms * 1000,
                rng=stream(seed, f"failover{cid}"),
            )
            c = self.clients[cid] = _SimClient(self, cid, session, workload, random.Random(wrng.getrandbits(64)))
            c.done = workload.requests <= 0
            self._schedule(workload.start_us + i, CLIENT_WAKE, cid, None, None)
        for k, (t, proxy, cmd) in enumerate(workload.admin):
            req = Request(RequestId(ADMIN_CLIENT, k + 1), int(t), encode_reconfig(cmd))
            self._schedule(t, ADMIN, proxy, req, None)

    # -- scheduling ------------------------------------------------------------------

    def _schedule(self, t: float, etype: int, a, b, c, periodic: bool = False) -> None:
        self._seq += 1
        if not periodic:
            self._work += 1
        heapq.heappush(self.heap, (t, self._seq, etype, a, b, c, periodic))

    def _delay(self, base: float, mean: float) -> float:
        if mean <= 0:
            return base
        return base + self.delay_rng.expovariate(1.0 / mean)

    def _fifo_time(self, key: tuple, t: float) -> float:
        last = self._fifo.get(key)
        if last is not None and last > t:
            t = last
        self._fifo[key] = t
        return t

    def _send(self, src: int, dst: int, m: Message) -> None:
        if dst not in self.replicas:
            raise ProtocolError(f"replica {src} sends to unknown replica {dst}")
        self.messages_sent += 1
        if dst == src:
            t = self.now + self.net.self_delay_us
        else:
            t = self.now + self._delay(self.net.base_us, self.net.jitter_mean_us)
        self._schedule(self._fifo_time((src, dst), t), DELIVER, dst, src, m)

    def _client_send(self, cid: int, replica: int, requests: Sequence[Request]) -> None:
        t = self.now + self._delay(self.net.client_base_us, self.net.client_jitter_mean_us)
        self._schedule(self._fifo_time((-cid, replica), t), SUBMIT, replica, cid, tuple(requests))

    def _effects(self, rid: int, eff: Effects) -> None:
        for dests, m in eff.sends:
            for d in dests:
                self._send(rid, d, m)
        for cid, reply in eff.replies:
            t = self.now + self._delay(self.net.client_base_us, self.net.client_jitter_mean_us)
            self._schedule(self._fifo_time((rid, -cid), t), REPLY, cid, rid, reply)
        for delay, name in eff.timers:
            self._schedule(self.now + delay, TIMER, rid, name, None, periodic=name in _PERIODIC_TIMERS)
        for dest, snap in eff.transfers:
            t = self.now + self._delay(self.net.base_us, self.net.jitter_mean_us)
            self._schedule(self._fifo_time((rid, dest), t), TRANSFER, dest, rid, snap)

    def _on_event(self, event: str, replica: int, slot: int, phase: int, value: object) -> None:
        self.trace.events.append((self.now, event, replica, slot, phase, value))
        if event == "log":
            d, hops = value
            self.slot_hops[slot][replica] = hops
            self.slot_null[slot] = d.is_null
        elif event == "decide":
            if phase > self.slot_phase.get(slot, 0):
                self.slot_phase[slot] = phase

    # -- main loop -------------------------------------------------------------------

    def run(self) -> "ScenarioResult":
        heap = self.heap
        pop = heapq.heappop
        replicas = self.replicas
        crashed = self.crashed
        cfg = self.config
        record = cfg.record_deliveries
        net = self.net
        while heap and self._work > 0:
            t, _, etype, a, b, c, periodic = pop(heap)
            if not periodic:
                self._work -= 1
            if t > cfg.max_time_us or self.events_processed >= cfg.max_events:
                log.warning("seed %d: stopped at t=%.0f after %d events", self.seed, t, self.events_processed)
                break
            self.now = t
            self.events_processed += 1
            if etype == DELIVER:
                if a in crashed:
                    continue
                if b in crashed and self.crash_rng.random() >= net.keep_after_crash:
                    continue
                if net.loss > 0 and a != b and b not in crashed and self.loss_rng.random() < net.loss:
                    continue
                if record:
                    self.trace.deliveries.append((t, a, c))
                self._effects(a, replicas[a].receive(c, t))
            elif etype == SUBMIT:
                if a in crashed:
                    continue
                self._effects(a, replicas[a].submit(c, b, t))
            elif etype == REPLY:
                if b in crashed and self.crash_rng.random() >= net.keep_after_crash:
                    continue
                if a == ADMIN_CLIENT:
                    self.admin_results[c.request_id] = c.result
                else:
                    self.clients[a].on_reply(c, t)
            elif etype == TIMER:
                if a in crashed:
                    continue
                self._effects(a, replicas[a].tick(b, t))
            elif etype == CLIENT_TIMEOUT:
                self.clients[a].on_timeout(b, c, t)
            elif etype == CLIENT_WAKE:
                self.clients[a].wake(t)
            elif etype == CRASH:
                if a not in crashed:
                    crashed[a] = t
                    self._on_event("crash", a, 0, 0, None)
            elif etype == TRANSFER:
                if a in crashed:
                    continue
                self._effects(a, replicas[a].install_snapshot(c, t))
            elif etype == ADMIN:
                if a not in crashed:
                    self._effects(a, replicas[a].submit((b,), ADMIN_CLIENT, t))
        return self._result()

    def _result(self) -> "ScenarioResult":
        slots = []
        for slot in sorted(self.slot_hops):
            hops = self.slot_hops[slot]
            live = [h for r, h in hops.items() if r not in self.crashed] or list(hops.values())
            delays = max(live)
            slots.append(
                SlotStats(
                    slot=slot,
                    message_delays=delays,
                    phases_used=self.slot_phase.get(slot, 0),
                    decision_kind="Null" if self.slot_null[slot] else "Agreed",
                    fast_path=delays == 3,
                )
            )
        live = [e for r, e in self.replicas.items() if r not in self.crashed and e.status == "member"]
        stalled = any(not c.done for c in self.clients.values()) or any(e.active is not None for e in live)
        stats = summarize(
            slots,
            events=self.events_processed,
            messages=self.messages_sent,
            end_time_us=self.now,
            failovers=sum(c.session.failovers for c in self.clients.values()),
            gave_up=sum(c.gave_up for c in self.clients.values()),
            stalled=stalled,
            dedup_size=max((len(e.dedup) for e in live), default=0),
            pq_size=max((len(e.pq) for e in live), default=0),
        )
        report = None
        result = ScenarioResult(
            self.seed, self.trace, stats, self.history, self.replicas, dict(self.crashed), None, self.admin_results
        )
        if self.config.check:
            report = check_invariants(self.trace.events, self.config.cluster().members)
            result.report = report
            if not report.ok:
                raise SafetyViolation(report, result)
        return result


def run_scenario(config: ScenarioConfig, workload: Workload, seed: int) -> ScenarioResult:
    """Drive clients, replicas and the network to quiescence; check safety on the full trace."""
    return SimWorld(config, workload, seed).run()
