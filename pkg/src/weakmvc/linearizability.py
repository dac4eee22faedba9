"""Brute-force linearizability check for key-value histories.

Wing & Gong style depth-first search over linearization orders, memoised on
(set of linearized operations, store contents). Exponential in the worst
case; meant for desk-scale histories of a few hundred operations from a
handful of clients.

Operations that were never answered may or may not have taken effect. Two
kinds of them are dropped before the search without changing the verdict: pending
reads, which cannot affect the store, and pending writes none of whose
written values was ever returned by a completed read. Removing such a write
from a valid order leaves it valid, since every read still sees the same last
write for each key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .kv import KvCommand, KvOp

@dataclass(frozen=True)
class Operation:
    client: int
    command: KvCommand
    invoked_at: float
    completed_at: Optional[float]  # None: never answered, may or may not have taken effect
    result: object = None


def _run(store: Dict[bytes, bytes], cmd: KvCommand):
    if cmd.op is KvOp.GET:
        return store.get(cmd.keys[0]), store
    if cmd.op is KvOp.MGET:
        return [store.get(k) for k in cmd.keys], store
    new = dict(store)
    new.update(zip(cmd.keys, cmd.values))
    return True, new


def check_linearizable(history: Sequence[Operation], initial: Optional[Dict[bytes, bytes]] = None) -> Tuple[bool, List[int]]:
    """Returns (ok, order) where order lists history indices of one witness linearization."""
    if not _values_explained(history, initial or {}):
        return False, []
    keep = _relevant(history)
    ops = [history[i] for i in keep]
    n = len(ops)
    completed_mask = 0
    for i, op in enumerate(ops):
        if op.completed_at is not None:
            completed_mask |= 1 << i
    seen = set()
    order: List[int] = []

    def key(store):
        return tuple(sorted(store.items()))

    def dfs(done: int, store: Dict[bytes, bytes]) -> bool:
        if done & completed_mask == completed_mask:
            return True
        memo = (done, key(store))
        if memo in seen:
            return False
        seen.add(memo)
        horizon = min(
            ops[i].completed_at for i in range(n) if not done >> i & 1 and ops[i].completed_at is not None
        )
        for i in range(n):
            if done >> i & 1:
                continue
            op = ops[i]
            if op.invoked_at > horizon:
                continue
            out, nxt = _run(store, op.command)
            if op.completed_at is not None and out != op.result:
                continue
            order.append(i)
            if dfs(done | 1 << i, nxt):
                return True
            order.pop()
        return False

    ok = dfs(0, dict(initial or {}))
    return ok, ([keep[i] for i in order] if ok else [])


def _relevant(history: Sequence[Operation]) -> List[int]:
    observed = set()
    for op in history:
        if op.completed_at is None:
            continue
        if op.command.op is KvOp.GET:
            observed.add((op.command.keys[0], op.result))
        elif op.command.op is KvOp.MGET:
            observed.update(zip(op.command.keys, op.result))
    keep = []
    for i, op in enumerate(history):
        if op.completed_at is None:
            if not op.command.is_write:
                continue
            if not any(kv in observed for kv in zip(op.command.keys, op.command.values)):
                continue
        keep.append(i)
    return keep


def _values_explained(history: Sequence[Operation], initial: Dict[bytes, bytes]) -> bool:
    """Every value a completed read returned was written by some operation or present initially."""
    written = set(initial.items())
    for op in history:
        if op.command.is_write:
            written.update(zip(op.command.keys, op.command.values))
    for op in history:
        if op.completed_at is None or op.command.is_write:
            continue
        results = [op.result] if op.command.op is KvOp.GET else op.result
        for k, v in zip(op.command.keys, results):
            if v is not None and (k, v) not in written:
                return False
    return True
