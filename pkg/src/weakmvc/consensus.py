"""Per-slot weak multi-valued consensus.

A sans-IO state machine. The caller feeds delivered messages to
:meth:`WeakMvcInstance.on_message` and ships whatever it returns; the
instance never touches a clock, a socket or a random source other than the
common coin.

Every wait of the protocol ("wait until >= n-f messages of some kind") is
evaluated over exactly the first n-f qualifying messages in arrival order.
Later arrivals of the same kind and phase are stored but never re-open a
branch that was already taken. The phase-0 proposal tally is the one tally
that keeps growing, since recovering the agreed batch reads it after the fact.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from itertools import islice
from typing import Callable, Dict, List, Optional, Set, Tuple

from .coin import CommonCoin
from .types import (
    NULL,
    Batch,
    BinValue,
    Decision,
    InvariantViolation,
    Message,
    MsgKind,
    ProtocolError,
    VoteValue,
)

# listener(event, phase, value); events: start, enter, vote, decide, adopt, output, pending
Listener = Callable[[str, int, object], None]


class Stage(enum.Enum):
    EXCHANGE = "exchange"
    CONSENSUS = "consensus"
    PENDING = "pending"  # decided ONE, agreed batch not yet known locally
    DECIDED = "decided"


@dataclass
class StepOutput:
    outbound: List[Message] = field(default_factory=list)  # to every member, self included
    replies: List[Tuple[int, Message]] = field(default_factory=list)  # unicast
    decision: Optional[Decision] = None


class WeakMvcInstance:
    def __init__(
        self,
        slot: int,
        my_id: int,
        n: int,
        f: int,
        *,
        epoch: int = 0,
        coin: Optional[CommonCoin] = None,
        shared_seed: int = 0,
        listener: Optional[Listener] = None,
    ) -> None:
        if f < 0 or n < 2 * f + 1:
            raise ValueError(f"need n >= 2f+1, got n={n} f={f}")
        self.slot = slot
        self.my_id = my_id
        self.n = n
        self.f = f
        self.epoch = epoch
        self.coin = coin if coin is not None else CommonCoin.for_slot(slot, epoch, shared_seed)
        self.listener = listener

        self.quorum = n - f
        self.majority = n // 2 + 1
        self.decide_quorum = f + 1

        self.stage = Stage.EXCHANGE
        self.started = False
        self.input: Optional[Batch] = None
        self.phase = 0
        self.round = 0
        self.state: Optional[BinValue] = None
        self.vote: Optional[VoteValue] = None

        self.proposals: Dict[int, Batch] = {}
        self._proposal_hops: Dict[int, int] = {}
        self.states: Dict[int, Dict[int, Tuple[BinValue, int]]] = {}
        self.votes: Dict[int, Dict[int, Tuple[VoteValue, int]]] = {}

        self.binary: Optional[BinValue] = None
        self.decided_phase = 0
        self.adopted = False
        self.decision: Optional[Decision] = None
        self.depth = 0  # longest causal hop chain behind the latest transition
        self._waiters: Set[int] = set()

    # -- driving ---------------------------------------------------------

    def start(self, proposal: Batch) -> List[Message]:
        """Enter the exchange stage with this replica's proposal."""
        if self.started or self.stage is not Stage.EXCHANGE:
            raise ProtocolError(f"slot {self.slot}: start() on an instance already {self.stage.value}")
        self.started = True
        self.input = proposal
        self._emit("start", 0, proposal)
        out = StepOutput(outbound=[self._msg(MsgKind.PROPOSAL, 0, 0, proposal)])
        self._progress(out)
        return out.outbound

    def start_binary(self, state: BinValue) -> List[Message]:
        """Skip the exchange stage and enter phase 1 with a given binary state.

        Used to study the binary stage on its own; an instance started this
        way has no proposals and resolves a ONE outcome only through peers.
        """
        if self.started:
            raise ProtocolError(f"slot {self.slot}: already started")
        self.started = True
        out = StepOutput()
        self._enter_phase(1, BinValue(state), out)
        self._progress(out)
        return out.outbound

    def on_message(self, m: Message) -> StepOutput:
        if m.slot != self.slot or m.epoch != self.epoch:
            raise ProtocolError(
                f"message for slot {m.slot}/epoch {m.epoch} routed to slot {self.slot}/epoch {self.epoch}"
            )
        out = StepOutput()
        kind = m.kind
        if kind is MsgKind.PROPOSAL:
            if m.sender not in self.proposals:
                self.proposals[m.sender] = m.body
                self._proposal_hops[m.sender] = m.hops
                if self.stage is Stage.PENDING:
                    self._try_resolve(m.hops, out)
        elif kind is MsgKind.STATE:
            if self.stage is Stage.CONSENSUS or self.stage is Stage.EXCHANGE:
                if m.phase >= max(self.phase, 1):
                    tally = self.states.setdefault(m.phase, {})
                    if m.sender not in tally:
                        tally[m.sender] = (m.body, m.hops)
        elif kind is MsgKind.VOTE:
            if self.stage is Stage.CONSENSUS or self.stage is Stage.EXCHANGE:
                if m.phase >= max(self.phase, 1):
                    tally = self.votes.setdefault(m.phase, {})
                    if m.sender not in tally:
                        tally[m.sender] = (m.body, m.hops)
        elif kind is MsgKind.DECIDED:
            self._on_decided(m, out)
        elif kind is MsgKind.CATCHUP_REQ:
            self._on_catchup_req(m, out)
        elif kind is MsgKind.CATCHUP_RESP:
            if self.stage is Stage.PENDING:
                self._output(Decision.agreed(m.body), max(self.depth, m.hops), out)
        else:
            raise ProtocolError(f"{kind.name} is not a consensus message")
        self._progress(out)
        return out

    # -- the transition system ----------------------------------------------

    def _progress(self, out: StepOutput) -> None:
        if not self.started:
            return
        q = self.quorum
        while True:
            stage = self.stage
            if stage is Stage.EXCHANGE:
                if len(self.proposals) < q:
                    return
                senders = list(islice(self.proposals, q))
                snapshot = [self.proposals[s] for s in senders]
                self.depth = max(self._proposal_hops[s] for s in senders)
                count = sum(1 for b in snapshot if b == self.input)
                self._enter_phase(1, BinValue.ONE if count >= self.majority else BinValue.ZERO, out)
            elif stage is Stage.CONSENSUS:
                p = self.phase
                if self.round == 1:
                    tally = self.states.get(p)
                    if tally is None or len(tally) < q:
                        return
                    snap = list(islice(tally.values(), q))
                    self.depth = max(h for _, h in snap)
                    ones = sum(1 for v, _ in snap if v is BinValue.ONE)
                    if ones >= self.majority:
                        vote = VoteValue.ONE
                    elif q - ones >= self.majority:
                        vote = VoteValue.ZERO
                    else:
                        vote = VoteValue.QUESTION
                    self.vote = vote
                    self.round = 2
                    self._emit("vote", p, vote)
                    out.outbound.append(self._msg(MsgKind.VOTE, p, 2, vote))
                else:
                    tally = self.votes.get(p)
                    if tally is None or len(tally) < q:
                        return
                    snap = list(islice(tally.values(), q))
                    self.depth = max(h for _, h in snap)
                    counts = Counter(v for v, _ in snap)
                    non_q = [v for v in (VoteValue.ZERO, VoteValue.ONE) if counts[v]]
                    if len(non_q) > 1:
                        raise InvariantViolation(f"slot {self.slot} phase {p}: both 0 and 1 votes observed")
                    if non_q and counts[non_q[0]] >= self.decide_quorum:
                        v = non_q[0].as_bin()
                        self.binary = v
                        self.decided_phase = p
                        self._emit("decide", p, v)
                        self._finish(v, out)
                    else:
                        state = non_q[0].as_bin() if non_q else self.coin.flip(p)
                        self.states.pop(p, None)
                        self.votes.pop(p, None)
                        self._enter_phase(p + 1, state, out)
            else:
                return

    def _enter_phase(self, p: int, state: BinValue, out: StepOutput) -> None:
        self.stage = Stage.CONSENSUS
        self.phase = p
        self.round = 1
        self.state = state
        self.vote = None
        self._emit("enter", p, state)
        out.outbound.append(self._msg(MsgKind.STATE, p, 1, state))

    def _finish(self, v: BinValue, out: StepOutput) -> None:
        decision = self.find_return_value(v)
        if decision is None:
            self.stage = Stage.PENDING
            self._emit("pending", self.decided_phase, v)
            out.outbound.append(self._msg(MsgKind.CATCHUP_REQ, self.decided_phase, 0, None))
        else:
            self._output(decision, self.depth, out)

    def find_return_value(self, v: BinValue) -> Optional[Decision]:
        """Map a binary outcome to the slot's value; None while the majority batch is unknown."""
        if v is BinValue.ZERO:
            return NULL
        m = self.majority_proposal()
        return None if m is None else Decision.agreed(m)

    def majority_proposal(self) -> Optional[Batch]:
        counts = Counter(self.proposals.values())
        winners = [b for b, c in counts.items() if c >= self.majority]
        if len(winners) > 1:
            raise InvariantViolation(f"slot {self.slot}: two distinct majority proposals")
        return winners[0] if winners else None

    def _try_resolve(self, hops: int, out: StepOutput) -> None:
        m = self.majority_proposal()
        if m is not None:
            self._output(Decision.agreed(m), max(self.depth, hops), out)

    def _output(self, decision: Decision, depth: int, out: StepOutput) -> None:
        self.stage = Stage.DECIDED
        self.decision = decision
        self.depth = depth
        self._emit("output", self.decided_phase, decision)
        out.decision = decision
        out.outbound.append(self._msg(MsgKind.DECIDED, self.decided_phase, 0, decision))
        if decision.batch is not None:
            for r in sorted(self._waiters):
                out.replies.append((r, self._msg(MsgKind.CATCHUP_RESP, self.decided_phase, 0, decision.batch)))
        self._waiters.clear()

    def _adopt(self, v: BinValue, hops: int) -> None:
        self.binary = v
        self.adopted = True
        self.decided_phase = max(self.phase, 1)
        self.depth = max(self.depth, hops)
        # reported with the phase this replica was in; 0 means still exchanging
        self._emit("adopt", self.phase, v)

    def _on_decided(self, m: Message, out: StepOutput) -> None:
        d: Decision = m.body
        if self.stage is Stage.DECIDED:
            return
        v = BinValue.ZERO if d.is_null else BinValue.ONE
        if self.stage is Stage.PENDING:
            if d.is_null:
                raise InvariantViolation(f"slot {self.slot}: NULL announced after deciding ONE")
            self._output(d, max(self.depth, m.hops), out)
            return
        if self.binary is None:
            known = self.majority_proposal()
            if d.batch is not None and known is not None and known != d.batch:
                raise InvariantViolation(f"slot {self.slot}: announced batch differs from local majority")
            self._adopt(v, m.hops)
        self._output(d, max(self.depth, m.hops), out)

    def _on_catchup_req(self, m: Message, out: StepOutput) -> None:
        # only a replica that decided ONE asks, so the binary outcome is ONE
        if self.stage is Stage.DECIDED:
            if m.sender == self.my_id:
                return
            if self.decision.batch is None:
                raise InvariantViolation(f"slot {self.slot}: catch-up request against a NULL decision")
            out.replies.append((m.sender, self._msg(MsgKind.CATCHUP_RESP, self.decided_phase, 0, self.decision.batch)))
            return
        known = self.majority_proposal()
        if known is not None and m.sender != self.my_id:
            out.replies.append((m.sender, self._msg(MsgKind.CATCHUP_RESP, self.decided_phase, 0, known)))
        elif m.sender != self.my_id:
            self._waiters.add(m.sender)
        if self.stage is not Stage.PENDING and self.binary is None and self.started:
            self._adopt(BinValue.ONE, m.hops)
            self._finish(BinValue.ONE, out)

    # -- helpers --------------------------------------------------------------

    def _msg(self, kind: MsgKind, phase: int, rnd: int, body) -> Message:
        return Message(kind, self.slot, self.my_id, self.epoch, phase, rnd, body, self.depth + 1)

    def _emit(self, event: str, phase: int, value: object) -> None:
        if self.listener is not None:
            self.listener(event, phase, value)

    @property
    def done(self) -> bool:
        return self.stage is Stage.DECIDED

    def clone(self) -> "WeakMvcInstance":
        c = object.__new__(type(self))
        c.__dict__.update(self.__dict__)
        c.proposals = dict(self.proposals)
        c._proposal_hops = dict(self._proposal_hops)
        c.states = {p: dict(t) for p, t in self.states.items()}
        c.votes = {p: dict(t) for p, t in self.votes.items()}
        c._waiters = set(self._waiters)
        return c

    def fingerprint(self) -> tuple:
        """Behaviour-relevant state, for state hashing in the schedule explorer.

        Tallies that can no longer be consulted are left out, and arrival
        order is kept only where the first-n-f snapshot still depends on it.
        """
        if self.stage is Stage.DECIDED:
            return (self.stage, self.decision, self.decided_phase)
        props = self.proposals.items()
        props = tuple(props) if self.stage is Stage.EXCHANGE else tuple(sorted(props, key=lambda kv: kv[0]))
        if self.stage is Stage.PENDING:
            return (self.stage, self.binary, self.decided_phase, props, tuple(sorted(self._waiters)))
        p, rnd = self.phase, self.round

        def live(t: Dict[int, Dict[int, tuple]], consumed) -> tuple:
            return tuple(
                (ph, tuple((s, v) for s, (v, _) in d.items())) for ph, d in sorted(t.items()) if not consumed(ph)
            )

        return (
            self.stage,
            self.started,
            p,
            rnd,
            self.state,
            self.vote,
            self.binary,
            self.decided_phase,
            props,
            live(self.states, lambda ph: ph < p or (ph == p and rnd == 2)),
            live(self.votes, lambda ph: ph < p),
            tuple(sorted(self._waiters)),
        )
