"""Bounded exhaustive exploration of one consensus slot.

Every reachable interleaving of message deliveries over per-pair FIFO
channels is enumerated breadth-first (a replica's messages to itself are
delivered immediately, as in the simulator), with both outcomes of every common
coin flip branched and optionally one replica crash injected at any point
(after which each of its in-flight messages may or may not arrive). States
are merged by hashing the instances' behaviour-relevant state, the channel
contents, the coin assignment and the set of protocol events so far; every
newly reached state is checked against the slot safety properties.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple, Type

from ..consensus import Stage, WeakMvcInstance
from ..types import Batch, BinValue, Decision, InvariantViolation, Message, MsgKind
from .checker import SlotHistory, Violation
from .single import proposal_inputs

log = logging.getLogger(__name__)

SLOT = 1


class _NeedCoin(Exception):
    def __init__(self, phase: int) -> None:
        self.phase = phase


class _BranchCoin:
    """A common coin whose flips are chosen by the explorer."""

    def __init__(self, assigned: Dict[int, BinValue]) -> None:
        self.assigned = assigned

    def flip(self, phase: int) -> BinValue:
        v = self.assigned.get(phase)
        if v is None:
            raise _NeedCoin(phase)
        return v


class _State:
    __slots__ = ("insts", "chans", "coins", "events", "crashed")

    def __init__(self, insts, chans, coins, events, crashed) -> None:
        self.insts: List[WeakMvcInstance] = insts
        self.chans: Dict[Tuple[int, int], Tuple[Message, ...]] = chans
        self.coins: Dict[int, BinValue] = coins
        self.events: List[tuple] = events
        self.crashed: Optional[int] = crashed

    def copy(self) -> "_State":
        st = _State([i.clone() for i in self.insts], dict(self.chans), dict(self.coins), list(self.events), self.crashed)
        coin = _BranchCoin(st.coins)
        for inst in st.insts:
            inst.coin = coin
            inst.listener = _listener(st.events, inst.my_id)
        return st

    def key(self) -> tuple:
        return (
            tuple(i.fingerprint() for i in self.insts),
            tuple(sorted((k, v) for k, v in self.chans.items() if v)),
            tuple(sorted(self.coins.items())),
            self.history_summary(),
            self.crashed,
        )

    def history_summary(self) -> frozenset:
        """The part of the event history that a future event can still be checked against.

        Per-phase checks relate phase p only to phases p-1 and p+1, and a
        live undecided replica only produces events at or after its current
        phase, so older entries and votes can be forgotten. Outcomes are
        kept whole for the agreement checks.
        """
        active = [i.phase for i in self.insts if i.decision is None and i.my_id != self.crashed and i.binary is None]
        floor = min(active) - 1 if active else 1 << 30
        return frozenset(
            e for e in self.events if e[0] in ("decide", "adopt", "output", "crash") or e[2] >= floor
        )


def _listener(sink: list, replica: int):
    def on(event: str, phase: int, value) -> None:
        sink.append((event, replica, phase, value))

    return on


@dataclass
class Verdict:
    pattern: str
    n: int
    max_phases: int
    states: int = 0
    transitions: int = 0
    terminal: int = 0
    truncated: int = 0  # paths cut because a replica entered a phase beyond max_phases
    stuck: int = 0  # terminal states with a live replica that never output
    outcomes: Set[Decision] = field(default_factory=set)
    decide_phases: Set[int] = field(default_factory=set)
    violations: List[Violation] = field(default_factory=list)
    bounded: bool = False  # state cap hit; the verdict covers only part of the space

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        outs = sorted("Null" if d.is_null else f"Agreed({_label(d.batch)})" for d in self.outcomes)
        return (
            f"pattern={self.pattern} states={self.states} transitions={self.transitions} terminal={self.terminal} "
            f"truncated={self.truncated} stuck={self.stuck} outcomes={outs} decide_phases={sorted(self.decide_phases)} "
            f"violations={len(self.violations)} bounded={self.bounded}"
        )


def _label(b: Batch) -> str:
    return chr(b.oldest.id.client_id) if 65 <= b.oldest.id.client_id < 91 else str(b.oldest.id.client_id)


class _MutantInstance(WeakMvcInstance):
    """Decides on f matching votes instead of f+1."""

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.decide_quorum = self.f


def _is_noop(inst: WeakMvcInstance, m: Message) -> bool:
    stage = inst.stage
    if stage is Stage.DECIDED:
        return m.kind is not MsgKind.CATCHUP_REQ or m.sender == inst.my_id
    if m.kind is MsgKind.STATE:
        # a current-phase STATE arriving after the vote was cast is never read
        return stage is Stage.PENDING or m.phase < max(inst.phase, 1) or (m.phase == inst.phase and inst.round == 2)
    if m.kind is MsgKind.VOTE:
        return stage is Stage.PENDING or m.phase < max(inst.phase, 1)
    if m.kind is MsgKind.PROPOSAL:
        # once the exchange is over, a known majority batch cannot change
        return m.sender in inst.proposals or (stage is not Stage.EXCHANGE and inst.majority_proposal() is not None)
    return False


def explore_small(
    n: int = 3,
    f: int = 1,
    max_phases: int = 4,
    pattern: str = "unanimous",
    *,
    crashes: bool = False,
    max_states: int = 2_000_000,
    instance_cls: Type[WeakMvcInstance] = WeakMvcInstance,
    stop_at_first: bool = False,
) -> Verdict:
    """Enumerate every schedule of one slot; see the module docstring for the scope."""
    if max_phases < 1:
        raise ValueError("max_phases must be at least 1")
    verdict = Verdict(pattern, n, max_phases)
    ids = list(range(1, n + 1))
    inputs = proposal_inputs(pattern, n, SLOT)

    init = _State([], {(a, b): () for a in ids for b in ids if a != b}, {}, [], None)
    coin = _BranchCoin(init.coins)
    for r in ids:
        init.insts.append(instance_cls(SLOT, r, n, f, coin=coin, listener=_listener(init.events, r)))
    for r, batch in zip(ids, inputs):
        for m in init.insts[r - 1].start(batch):
            _broadcast(init, r, m, ids)
            _apply(init, r, m, ids)

    seen = {init.key()}
    queue = deque([init])
    verdict.states = 1
    reported: Set[str] = set()
    _check(init, verdict, reported)

    while queue:
        st = queue.popleft()
        if any(i.phase > max_phases for i in st.insts):
            verdict.truncated += 1
            continue
        succs = _successors(st, ids, crashes, verdict, reported)
        if not succs:
            verdict.terminal += 1
            for i in st.insts:
                if i.my_id == st.crashed:
                    continue
                if i.decision is None:
                    verdict.stuck += 1
                    break
                verdict.outcomes.add(i.decision)
            continue
        for nxt in succs:
            verdict.transitions += 1
            k = nxt.key()
            if k in seen:
                continue
            seen.add(k)
            verdict.states += 1
            _check(nxt, verdict, reported)
            if stop_at_first and verdict.violations:
                return verdict
            if verdict.states >= max_states:
                verdict.bounded = True
                log.warning("explorer hit the %d state cap", max_states)
                return verdict
            queue.append(nxt)
    return verdict


def _broadcast(st: _State, src: int, m: Message, ids: Sequence[int]) -> None:
    for d in ids:
        if d != src:
            _push(st, src, d, m)


def _push(st: _State, src: int, dst: int, m: Message) -> None:
    if dst == st.crashed or _is_noop(st.insts[dst - 1], m):
        return
    st.chans[(src, dst)] = st.chans[(src, dst)] + (m,)


def _prune(st: _State) -> None:
    for (src, dst), q in st.chans.items():
        if q:
            inst = st.insts[dst - 1]
            kept = tuple(m for m in q if not _is_noop(inst, m))
            if len(kept) != len(q):
                st.chans[(src, dst)] = kept


def _deliver(st: _State, src: int, dst: int, ids: Sequence[int], assign: Dict[int, BinValue]) -> _State:
    """Deliver the head of channel (src, dst) in a copy of ``st``; raises _NeedCoin on an unassigned flip."""
    nxt = st.copy()
    nxt.coins.update(assign)
    q = nxt.chans[(src, dst)]
    m, nxt.chans[(src, dst)] = q[0], q[1:]
    _apply(nxt, dst, m, ids)
    _prune(nxt)
    return nxt


def _apply(st: _State, dst: int, m: Message, ids: Sequence[int]) -> None:
    """Feed one message to ``dst``; its messages to itself are handled at once, in send order."""
    inst = st.insts[dst - 1]
    local = deque([m])
    while local:
        step = inst.on_message(local.popleft())
        for om in step.outbound:
            _broadcast(st, dst, om, ids)
            local.append(om)
        for to, om in step.replies:
            if to == dst:
                local.append(om)
            else:
                _push(st, dst, to, om)


def _successors(st: _State, ids, crashes: bool, verdict: Verdict, reported: Set[str]) -> List[_State]:
    out: List[_State] = []
    for (src, dst), q in st.chans.items():
        if not q:
            continue
        if src == st.crashed:
            dropped = st.copy()
            dropped.chans[(src, dst)] = q[1:]
            out.append(dropped)
        _try(st, src, dst, ids, {}, out, verdict, reported)
    if crashes and st.crashed is None:
        for r in ids:
            if st.insts[r - 1].decision is not None:
                continue
            c = st.copy()
            c.crashed = r
            c.events.append(("crash", r, 0, None))
            for s in ids:
                if s != r:
                    c.chans[(s, r)] = ()
            out.append(c)
    return out


def _try(st: _State, src: int, dst: int, ids, assign: Dict[int, BinValue], out, verdict, reported) -> None:
    try:
        out.append(_deliver(st, src, dst, ids, assign))
    except _NeedCoin as nc:
        for v in (BinValue.ZERO, BinValue.ONE):
            _try(st, src, dst, ids, {**assign, nc.phase: v}, out, verdict, reported)
    except InvariantViolation as e:
        _report(verdict, reported, Violation("instance-assertion", SLOT, str(e)))


def _check(st: _State, verdict: Verdict, reported: Set[str]) -> None:
    h = SlotHistory(SLOT, range(1, len(st.insts) + 1))
    for event, r, phase, value in st.events:
        h.record(event, r, phase, value)
        if event == "decide":
            verdict.decide_phases.add(phase)
    for v in h.violations():
        _report(verdict, reported, v)


def _report(verdict: Verdict, reported: Set[str], v: Violation) -> None:
    if v.check not in reported:
        reported.add(v.check)
        verdict.violations.append(v)


def explore_mutant(pattern: str = "unanimous", max_phases: int = 4, **kw) -> Verdict:
    """Explore an instance whose decide threshold is lowered to f; a sound checker must flag it."""
    return explore_small(3, 1, max_phases, pattern, instance_cls=_MutantInstance, **kw)
