"""asyncio TCP transport: replica nodes and a client.

Every replica listens on its configured address and keeps one outbound
connection per peer, redialled with exponential backoff. Frames for a peer
wait in a bounded queue while the link is down. Clients connect to a
replica, send CLIENT_REQUEST frames and read CLIENT_RESPONSE frames on the
same connection. Messages a replica addresses to itself never touch a
socket.
"""

from __future__ import annotations

import asyncio
import logging
import random
import signal
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import wire
from .client import ClientSession, CompletedCall, Unavailable
from .config import Address, ClusterConfig, Settings
from .engine import Effects, ReplicaEngine
from .kv import KvCommand, KvStateMachine
from .types import ClientReply, Message, MsgKind

log = logging.getLogger(__name__)

QUEUE_LIMIT = 100_000
BACKOFF_MIN = 0.02
BACKOFF_MAX = 2.0


def _now_us() -> float:
    return time.monotonic() * 1e6


@dataclass
class NodeStats:
    sent: int = 0
    received: int = 0
    dropped: int = 0
    reconnects: int = 0
    client_requests: int = 0
    decided: int = 0
    null: int = 0
    started_at: float = field(default_factory=time.monotonic)


class _PeerLink:
    def __init__(self, node: "ReplicaNode", peer: int, addr: Address) -> None:
        self.node = node
        self.peer = peer
        self.addr = addr
        self.queue: asyncio.Queue = asyncio.Queue(QUEUE_LIMIT)
        self.task: Optional[asyncio.Task] = None

    def send(self, frame: bytes) -> None:
        try:
            self.queue.put_nowait(frame)
        except asyncio.QueueFull:
            self.node.stats.dropped += 1
            log.error("replica %d: queue to %d full, dropping frame", self.node.id, self.peer)

    async def run(self) -> None:
        delay = BACKOFF_MIN
        pending: Optional[bytes] = None
        while True:
            try:
                _, writer = await asyncio.open_connection(*self.addr)
            except OSError:
                await asyncio.sleep(delay)
                delay = min(delay * 2, BACKOFF_MAX)
                continue
            delay = BACKOFF_MIN
            log.debug("replica %d: connected to %d", self.node.id, self.peer)
            try:
                while True:
                    if pending is None:
                        pending = await self.queue.get()
                    batch = [pending]
                    while not self.queue.empty() and len(batch) < 256:
                        batch.append(self.queue.get_nowait())
                    writer.write(b"".join(batch))
                    await writer.drain()
                    self.node.stats.sent += len(batch)
                    pending = None
            except (ConnectionError, OSError):
                self.node.stats.reconnects += 1
                log.info("replica %d: link to %d lost, redialling", self.node.id, self.peer)
            finally:
                writer.close()


class ReplicaNode:
    """One replica: an engine plus its sockets and timers."""

    def __init__(
        self,
        replica_id: int,
        cluster: ClusterConfig,
        settings: Settings = Settings(),
        *,
        stats_path: Optional[Union[str, Path]] = None,
    ) -> None:
        if replica_id not in cluster.addresses:
            raise ValueError(f"no address configured for replica {replica_id}")
        self.id = replica_id
        self.cluster = cluster
        self.stats = NodeStats()
        self.stats_path = stats_path
        self.engine = ReplicaEngine(replica_id, cluster, KvStateMachine(), settings, on_event=self._on_event)
        self.links: Dict[int, _PeerLink] = {
            r: _PeerLink(self, r, cluster.addresses[r]) for r in cluster.members if r != replica_id
        }
        self.clients: Dict[int, asyncio.StreamWriter] = {}
        self.server: Optional[asyncio.AbstractServer] = None
        self._conns: List[asyncio.Task] = []
        self._timers: List[asyncio.TimerHandle] = []
        self.loop: Optional[asyncio.AbstractEventLoop] = None

    def _on_event(self, event: str, replica: int, slot: int, phase: int, value) -> None:
        if event == "log":
            self.stats.decided += 1
            if value[0].is_null:
                self.stats.null += 1

    async def start(self) -> None:
        self.loop = asyncio.get_running_loop()
        host, port = self.cluster.addresses[self.id]
        self.server = await asyncio.start_server(self._serve, host, port)
        for link in self.links.values():
            link.task = asyncio.create_task(link.run())
        self._handle(self.engine.boot(_now_us()))
        log.info("replica %d listening on %s:%d", self.id, host, port)

    async def stop(self) -> None:
        for h in self._timers:
            h.cancel()
        if self.server is not None:
            self.server.close()
        tasks = [l.task for l in self.links.values() if l.task is not None] + self._conns
        for t in tasks:
            t.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        for w in list(self.clients.values()):
            w.close()
        if self.server is not None:
            await self.server.wait_closed()
        if self.stats_path is not None:
            self.write_stats(self.stats_path)

    def write_stats(self, path: Union[str, Path]) -> None:
        st = self.stats
        e = self.engine
        lines = [
            f"replica={self.id}",
            f"uptime_s={time.monotonic() - st.started_at:.3f}",
            f"decided={st.decided}",
            f"null={st.null}",
            f"applied_upto={e.applied_upto}",
            f"frames_sent={st.sent}",
            f"frames_received={st.received}",
            f"frames_dropped={st.dropped}",
            f"reconnects={st.reconnects}",
            f"client_requests={st.client_requests}",
            f"state_digest={e.machine.digest()}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._conns.append(asyncio.current_task())
        client_ids: set = set()
        try:
            while True:
                m = await wire.read_frame(reader)
                self.stats.received += 1
                if m.kind is MsgKind.CLIENT_REQUEST:
                    cid = m.body[0].id.client_id if m.body else m.sender
                    client_ids.add(cid)
                    self.clients[cid] = writer
                    self.stats.client_requests += len(m.body)
                    self._handle(self.engine.submit(m.body, cid, _now_us()))
                else:
                    self._handle(self.engine.receive(m, _now_us()))
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except wire.WireError as e:
            log.warning("replica %d: bad frame, closing connection: %s", self.id, e)
        finally:
            for cid in client_ids:
                if self.clients.get(cid) is writer:
                    del self.clients[cid]
            self._conns.remove(asyncio.current_task())
            writer.close()

    def _handle(self, eff: Effects) -> None:
        for dests, m in eff.sends:
            frame = None
            for d in dests:
                if d == self.id:
                    self.loop.call_soon(self._self_deliver, m)
                    continue
                link = self.links.get(d)
                if link is None:
                    log.warning("replica %d: no link to %d", self.id, d)
                    continue
                if frame is None:
                    frame = wire.encode(m)
                link.send(frame)
        by_client: Dict[int, List[ClientReply]] = {}
        for cid, reply in eff.replies:
            by_client.setdefault(cid, []).append(reply)
        for cid, replies in by_client.items():
            w = self.clients.get(cid)
            if w is None or w.is_closing():
                continue
            w.write(wire.encode(Message(MsgKind.CLIENT_RESPONSE, 0, self.id, body=tuple(replies))))
        for delay_us, name in eff.timers:
            self._timers.append(self.loop.call_later(delay_us / 1e6, self._tick, name))
        for dest, _snap in eff.transfers:
            log.warning("replica %d: state transfer to %d is not supported over TCP", self.id, dest)
        if len(self._timers) > 1024:
            self._timers = [h for h in self._timers if not h.cancelled() and h.when() > self.loop.time()]

    def _self_deliver(self, m: Message) -> None:
        self._handle(self.engine.receive(m, _now_us()))

    def _tick(self, name: str) -> None:
        self._handle(self.engine.tick(name, _now_us()))


async def run_replica(
    replica_id: int, cluster: ClusterConfig, settings: Settings, *, stats_path=None, stop: Optional[asyncio.Event] = None
) -> ReplicaNode:
    """Serve until ``stop`` is set, or until SIGINT/SIGTERM when no event is given."""
    if stop is None:
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
    node = ReplicaNode(replica_id, cluster, settings, stats_path=stats_path)
    await node.start()
    try:
        await stop.wait()
    finally:
        await node.stop()
    return node


class TcpClient:
    """Sends KV commands to a proxy replica and fails over on timeout."""

    def __init__(
        self,
        client_id: int,
        peers: Dict[int, Address],
        *,
        timeout_s: float = 1.0,
        retry_budget: int = 8,
        proxy: Optional[int] = None,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.peers = dict(peers)
        self.session = ClientSession(
            client_id, sorted(peers), proxy=proxy, timeout_us=timeout_s * 1e6, retry_budget=retry_budget, rng=rng
        )
        self.timeout_s = timeout_s
        self._conn: Optional[Tuple[int, asyncio.StreamReader, asyncio.StreamWriter]] = None

    async def _connect(self) -> Tuple[asyncio.StreamReader, asyncio.StreamWriter]:
        proxy = self.session.proxy
        if self._conn is not None and self._conn[0] == proxy and not self._conn[2].is_closing():
            return self._conn[1], self._conn[2]
        await self.close()
        reader, writer = await asyncio.wait_for(asyncio.open_connection(*self.peers[proxy]), self.timeout_s)
        self._conn = (proxy, reader, writer)
        return reader, writer

    async def close(self) -> None:
        if self._conn is not None:
            self._conn[2].close()
            self._conn = None

    async def execute(self, commands: Sequence[KvCommand]) -> List[object]:
        """Run commands as one client batch; returns decoded results in order."""
        call = self.session.call(commands, _now_us())
        while True:
            try:
                reader, writer = await self._connect()
                writer.write(wire.encode(Message(MsgKind.CLIENT_REQUEST, 0, 0, body=call.requests)))
                await writer.drain()
                done = await asyncio.wait_for(self._await(reader, call.call_id), self.timeout_s)
                return done.results
            except (asyncio.TimeoutError, OSError, asyncio.IncompleteReadError, wire.WireError):
                await self.close()
                try:
                    self.session.on_timeout(call.call_id, _now_us())
                except Unavailable:
                    self.session.abandon(call.call_id)
                    raise

    async def _await(self, reader: asyncio.StreamReader, call_id: int) -> CompletedCall:
        while True:
            m = await wire.read_frame(reader)
            if m.kind is not MsgKind.CLIENT_RESPONSE:
                continue
            for reply in m.body:
                done = self.session.on_reply(reply, _now_us())
                if done is not None and done.call_id == call_id:
                    return done
