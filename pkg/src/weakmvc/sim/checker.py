"""Safety checks over recorded protocol events.

:class:`SlotHistory` holds what happened to one slot across all replicas and
evaluates the per-slot properties: vote exclusivity, the four value-locking
invariants, agreement and weak validity. :func:`check_invariants` runs it for
every slot of a trace and adds the log-level checks (write-once log entries,
identical logs, at-most-once application).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..types import Batch, BinValue, Decision, VoteValue

# (time, event, replica, slot, phase, value)
Event = Tuple[float, str, int, int, int, object]


@dataclass(frozen=True)
class Violation:
    check: str
    slot: int
    detail: str

    def __str__(self) -> str:
        return f"[{self.check}] slot {self.slot}: {self.detail}"


@dataclass
class Report:
    violations: List[Violation] = field(default_factory=list)
    slots_checked: int = 0
    decisions_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first(self) -> Optional[Violation]:
        return self.violations[0] if self.violations else None

    def __str__(self) -> str:
        head = f"{self.slots_checked} slots, {self.decisions_checked} decisions"
        if self.ok:
            return f"ok: {head}"
        return f"FAILED: {head}; first: {self.first}"


class SlotHistory:
    def __init__(self, slot: int, replicas: Iterable[int]) -> None:
        self.slot = slot
        self.replicas: Set[int] = set(replicas)
        self.inputs: Dict[int, Batch] = {}
        self.entries: Dict[int, Dict[int, BinValue]] = defaultdict(dict)
        self.votes: Dict[int, Dict[int, VoteValue]] = defaultdict(dict)
        self.decisions: Dict[int, Dict[int, BinValue]] = defaultdict(dict)
        self.adoptions: Dict[int, BinValue] = {}
        self.finished: Dict[int, int] = {}  # replica -> phase it stopped in
        self.outputs: Dict[int, Decision] = {}
        self.crashed: Set[int] = set()

    def record(self, event: str, replica: int, phase: int, value: object) -> None:
        if event == "start":
            self.inputs[replica] = value
        elif event == "enter":
            self.entries[phase][replica] = value
        elif event == "vote":
            self.votes[phase][replica] = value
        elif event == "decide":
            self.decisions[phase][replica] = value
            self.finished.setdefault(replica, phase)
        elif event == "adopt":
            self.adoptions[replica] = value
            self.finished.setdefault(replica, phase)
        elif event == "output":
            self.outputs[replica] = value
        elif event == "crash":
            self.crashed.add(replica)

    def locked_on(self, p: int) -> Optional[BinValue]:
        """The value phase p is locked on, if every live undecided replica has entered it with one value."""
        entered = self.entries.get(p)
        if not entered:
            return None
        values = set(entered.values())
        if len(values) != 1:
            return None
        for r in self.replicas:
            if r in entered or r in self.crashed:
                continue
            if r in self.finished and self.finished[r] < p:
                continue
            return None
        return values.pop()

    def violations(self) -> List[Violation]:
        out: List[Violation] = []
        s = self.slot

        def bad(check: str, detail: str) -> None:
            out.append(Violation(check, s, detail))

        for p, vs in sorted(self.votes.items()):
            non_q = {v for v in vs.values() if v is not VoteValue.QUESTION}
            if len(non_q) > 1:
                bad("vote-exclusivity", f"phase {p} has votes {sorted(non_q)}")
        for p, ds in sorted(self.decisions.items()):
            vals = set(ds.values())
            if len(vals) > 1:
                bad("inv1-same-phase", f"phase {p} decisions {ds}")
            for v in vals:
                for r, st in self.entries.get(p + 1, {}).items():
                    if st != v:
                        bad("inv2-decision-locks-next", f"decided {v.name} in phase {p}, replica {r} entered {p + 1} with {st.name}")
        for p in sorted(self.entries):
            v = self.locked_on(p)
            if v is None:
                continue
            for r, d in self.decisions.get(p, {}).items():
                if d != v:
                    bad("inv3-locked-decision", f"phase {p} locked on {v.name}, replica {r} decided {d.name}")
            for r, st in self.entries.get(p + 1, {}).items():
                if st != v:
                    bad("inv4-lock-propagates", f"phase {p} locked on {v.name}, replica {r} entered {p + 1} with {st.name}")
        binary = {v for ds in self.decisions.values() for v in ds.values()} | set(self.adoptions.values())
        if len(binary) > 1:
            bad("agreement", f"binary outcomes {sorted(binary)}")
        outs = set(self.outputs.values())
        if len(outs) > 1:
            bad("agreement", f"replicas output {sorted(map(repr, outs))}")
        proposed = set(self.inputs.values())
        for r, d in self.outputs.items():
            if d.batch is not None and self.inputs and d.batch not in proposed:
                bad("weak-validity", f"replica {r} output a batch nobody proposed")
        return out


def check_invariants(events: Sequence[Event], replicas: Iterable[int]) -> Report:
    """Evaluate every safety property on a (possibly partial) event trace."""
    replicas = set(replicas)
    report = Report()
    slots: Dict[int, SlotHistory] = {}
    crashed: Set[int] = set()
    members: Dict[int, Set[int]] = {}
    logs: Dict[int, Dict[int, Decision]] = defaultdict(dict)
    applied: Dict[int, Set] = defaultdict(set)

    for _, ev, r, slot, phase, value in events:
        if ev == "crash":
            crashed.add(r)
            for h in slots.values():
                h.crashed.add(r)
            continue
        if ev == "reconfig":
            members[slot + 1] = set(value)
            continue
        if ev == "log":
            d, _hops = value
            prior = logs[r].get(slot)
            if prior is not None:
                report.violations.append(Violation("write-once-log", slot, f"replica {r} logged twice"))
            logs[r][slot] = d
            report.decisions_checked += 1
            continue
        if ev == "apply":
            if value in applied[r]:
                report.violations.append(Violation("at-most-once", slot, f"replica {r} applied {value} again"))
            applied[r].add(value)
            continue
        if ev in ("joined", "pending"):
            continue
        h = slots.get(slot)
        if h is None:
            group = replicas
            for first in sorted(members):
                if first <= slot:
                    group = members[first]
            h = slots[slot] = SlotHistory(slot, group)
            h.crashed |= crashed
        h.record(ev, r, phase, value)

    for slot in sorted(slots):
        report.violations.extend(slots[slot].violations())
    report.slots_checked = len(slots)

    by_slot: Dict[int, Set[Decision]] = defaultdict(set)
    for r, entries in logs.items():
        for slot, d in entries.items():
            by_slot[slot].add(d)
    for slot, ds in sorted(by_slot.items()):
        if len(ds) > 1:
            report.violations.append(Violation("log-agreement", slot, f"logs disagree: {sorted(map(repr, ds))}"))
    report.violations.sort(key=lambda v: v.slot)
    return report
