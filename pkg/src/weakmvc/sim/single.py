"""Lean runs of independent single-slot instances.

No engine, no clients: just ``n`` consensus instances exchanging messages
over a randomly delayed FIFO network. Used for fast-path latency checks and
for measuring how many phases the binary stage needs to terminate.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Union

from ..consensus import WeakMvcInstance
from ..types import Batch, BinValue, Decision, Request, RequestId
from .stats import SlotStats
from .world import NetworkModel

PHASE_CAP = 64


@dataclass
class InstanceRun:
    outputs: Dict[int, Decision]
    depth: Dict[int, int]  # hops behind each replica's output
    decide_phase: Dict[int, int]  # phase of the decision each replica holds, own or adopted
    capped: bool = False

    @property
    def message_delays(self) -> int:
        return max(self.depth.values())

    @property
    def phases(self) -> int:
        return max(self.decide_phase.values())


def run_instance(
    n: int,
    f: int,
    inputs: Sequence[Union[Batch, BinValue]],
    rng: random.Random,
    *,
    slot: int = 1,
    shared_seed: int = 0,
    base_us: float = 100.0,
    jitter_mean_us: float = 50.0,
    instance_cls=WeakMvcInstance,
) -> InstanceRun:
    """Run one slot to quiescence. Inputs are batches, or binary states to skip the exchange stage."""
    if len(inputs) != n:
        raise ValueError(f"{len(inputs)} inputs for {n} replicas")
    ids = list(range(1, n + 1))
    outputs: Dict[int, Decision] = {}
    depth: Dict[int, int] = {}
    phase: Dict[int, int] = {}
    insts: Dict[int, WeakMvcInstance] = {}
    capped = False

    def listener_for(r: int):
        def on(event: str, p: int, value) -> None:
            nonlocal capped
            if event == "output":
                outputs[r] = value
                depth[r] = insts[r].depth
            elif event == "decide":
                phase[r] = p
            elif event == "enter" and p > PHASE_CAP:
                capped = True

        return on

    for r in ids:
        insts[r] = instance_cls(slot, r, n, f, shared_seed=shared_seed, listener=listener_for(r))

    heap: list = []
    fifo: Dict[tuple, float] = {}
    seq = 0
    expo = rng.expovariate
    rate = 1.0 / jitter_mean_us if jitter_mean_us > 0 else 0.0
    now = 0.0

    def send(src: int, dst: int, m) -> None:
        nonlocal seq
        if src == dst:
            t = now
        else:
            t = now + base_us + (expo(rate) if rate else 0.0)
        key = (src, dst)
        last = fifo.get(key, 0.0)
        if last > t:
            t = last
        fifo[key] = t
        seq += 1
        heapq.heappush(heap, (t, seq, dst, m))

    for r, x in zip(ids, inputs):
        out = insts[r].start(x) if isinstance(x, Batch) else insts[r].start_binary(x)
        for m in out:
            for d in ids:
                send(r, d, m)

    while heap and not capped:
        now, _, dst, m = heapq.heappop(heap)
        inst = insts[dst]
        undecided = inst.binary is None
        step = inst.on_message(m)
        if undecided and inst.adopted:
            # an adopted outcome belongs to the phase the announcing replica decided in
            phase[dst] = m.phase
        for om in step.outbound:
            for d in ids:
                send(dst, d, om)
        for to, om in step.replies:
            send(dst, to, om)
    return InstanceRun(outputs, depth, phase, capped)


def _batch(tag: int, slot: int) -> Batch:
    return Batch.of(Request(RequestId(tag, slot), slot, b"op%d" % tag))


def proposal_inputs(pattern: str, n: int, slot: int) -> List[Batch]:
    """Batches for a named proposal pattern: unanimous, distinct, or a letter string like 'BBC'."""
    if pattern == "unanimous":
        return [_batch(1, slot)] * n
    if pattern == "distinct":
        return [_batch(r, slot) for r in range(1, n + 1)]
    if len(pattern) == n and pattern.isalpha():
        return [_batch(ord(ch), slot) for ch in pattern.upper()]
    raise ValueError(f"unknown proposal pattern {pattern!r}")


def binary_inputs(split: str, n: int, rng: random.Random) -> List[BinValue]:
    """Initial binary states: 'worst' (as even a ZERO/ONE split as n allows), 'unanimous', 'random' or digits."""
    if split in ("worst", "half"):
        zeros = n // 2
        vals = [BinValue.ZERO] * zeros + [BinValue.ONE] * (n - zeros)
        rng.shuffle(vals)
        return vals
    if split == "unanimous":
        return [BinValue.ONE] * n
    if split == "random":
        return [BinValue(rng.getrandbits(1)) for _ in range(n)]
    digits = split.replace(",", "")
    if len(digits) == n and set(digits) <= {"0", "1"}:
        return [BinValue(int(ch)) for ch in digits]
    raise ValueError(f"unknown split {split!r}")


def run_slots(
    n: int,
    f: int,
    pattern: str,
    slots: int,
    seed: int,
    *,
    base_us: float = 100.0,
    jitter_mean_us: float = 50.0,
) -> List[SlotStats]:
    """Independent slots with a fixed proposal pattern; one SlotStats per slot."""
    rng = random.Random(seed)
    out = []
    for s in range(1, slots + 1):
        run = run_instance(
            n, f, proposal_inputs(pattern, n, s), rng, slot=s, shared_seed=seed, base_us=base_us, jitter_mean_us=jitter_mean_us
        )
        kinds = {d.is_null for d in run.outputs.values()}
        if len(run.outputs) != n or len(kinds) != 1:
            raise AssertionError(f"slot {s}: outputs {run.outputs}")
        delays = run.message_delays
        out.append(SlotStats(s, delays, run.phases, "Null" if kinds.pop() else "Agreed", delays == 3))
    return out


@dataclass
class TerminationResult:
    trials: int
    split: str
    cdf: List[float]  # cdf[t-1] = fraction terminated by phase t, t = 1..PHASE_CAP
    mean_rounds: float
    std_rounds: float
    capped: int
    phase_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def sigma_of_mean(self) -> float:
        return self.std_rounds / math.sqrt(self.trials)


def measure_termination(
    trials: int, split: str, seed: int, *, n: int = 3, f: int = 1, network: NetworkModel = NetworkModel()
) -> TerminationResult:
    """Phase CDF of the binary stage over independent randomly scheduled instances.

    Each trial gets its own coin seed, initial states per ``split`` and
    message delays drawn from ``network``. A trial terminates in the largest phase of
    any decision a replica holds (a replica that adopted an announced
    decision counts the announcer's phase); rounds = 2 * phases + 1 for the
    exchange round before the binary stage.
    """
    rng = random.Random(seed)
    hist: Dict[int, int] = {}
    capped = 0
    rounds: List[int] = []
    for t in range(trials):
        inputs = binary_inputs(split, n, rng)
        coin_seed = rng.getrandbits(64)
        run = run_instance(
            n, f, inputs, rng, slot=t + 1, shared_seed=coin_seed, base_us=network.base_us, jitter_mean_us=network.jitter_mean_us
        )
        if run.capped or len(run.decide_phase) < n - f:
            capped += 1
            continue
        p = run.phases
        hist[p] = hist.get(p, 0) + 1
        rounds.append(2 * p + 1)
    cdf = []
    acc = 0
    for p in range(1, PHASE_CAP + 1):
        acc += hist.get(p, 0)
        cdf.append(acc / trials)
    mean = sum(rounds) / len(rounds) if rounds else math.inf
    var = sum((r - mean) ** 2 for r in rounds) / max(1, len(rounds) - 1) if rounds else 0.0
    return TerminationResult(trials, split, cdf, mean, math.sqrt(var), capped, dict(sorted(hist.items())))
