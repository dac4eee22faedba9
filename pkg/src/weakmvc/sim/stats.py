"""Per-slot statistics, run aggregates, and the stats / trace file formats.

Stats file: ``key=value`` lines followed by a CSV block with the
message-delay histogram. Trace file: a sequence of records, each
``u64 delivery time in ns | u16 receiver | frame`` where frame is the
length-prefixed wire encoding of the delivered message.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

from .. import wire
from ..types import Message

_REC = struct.Struct(">QH")


@dataclass(frozen=True)
class SlotStats:
    slot: int
    message_delays: int
    phases_used: int
    decision_kind: str  # "Agreed" or "Null"
    fast_path: bool

    def __post_init__(self) -> None:
        if self.message_delays < 3:
            raise ValueError(f"slot {self.slot}: {self.message_delays} delays is below the 3-delay minimum")
        if self.fast_path != (self.message_delays == 3):
            raise ValueError(f"slot {self.slot}: fast_path flag disagrees with delay count")


@dataclass
class RunStats:
    slots: List[SlotStats] = field(default_factory=list)
    decided: int = 0
    agreed: int = 0
    null: int = 0
    fast_path_pct: float = 0.0
    slow_path_pct: float = 0.0
    null_pct: float = 0.0
    mean_delays: float = 0.0
    delay_histogram: Dict[int, int] = field(default_factory=dict)
    phase_histogram: Dict[int, int] = field(default_factory=dict)
    events: int = 0
    messages: int = 0
    end_time_us: float = 0.0
    failovers: int = 0
    gave_up: int = 0
    stalled: bool = False
    dedup_size: int = 0
    pq_size: int = 0


def summarize(slots: Sequence[SlotStats], **extra) -> RunStats:
    st = RunStats(slots=list(slots), **extra)
    st.decided = len(slots)
    st.null = sum(1 for s in slots if s.decision_kind == "Null")
    st.agreed = st.decided - st.null
    st.delay_histogram = dict(sorted(Counter(s.message_delays for s in slots).items()))
    st.phase_histogram = dict(sorted(Counter(s.phases_used for s in slots).items()))
    if slots:
        fast = sum(1 for s in slots if s.fast_path)
        st.fast_path_pct = 100.0 * fast / st.decided
        st.slow_path_pct = 100.0 - st.fast_path_pct
        st.null_pct = 100.0 * st.null / st.decided
        st.mean_delays = sum(s.message_delays for s in slots) / st.decided
    return st


_KEYS = (
    "decided",
    "agreed",
    "null",
    "fast_path_pct",
    "slow_path_pct",
    "null_pct",
    "mean_delays",
    "events",
    "messages",
    "end_time_us",
    "failovers",
    "gave_up",
    "stalled",
    "dedup_size",
    "pq_size",
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def render_stats(stats: RunStats, header: Dict[str, object] = None) -> str:
    lines = [f"{k}={_fmt(v)}" for k, v in (header or {}).items()]
    lines += [f"{k}={_fmt(getattr(stats, k))}" for k in _KEYS]
    lines.append("")
    lines.append("message_delays,slots")
    lines += [f"{d},{c}" for d, c in stats.delay_histogram.items()]
    return "\n".join(lines) + "\n"


def write_stats(path: Union[str, Path], stats: RunStats, header: Dict[str, object] = None) -> None:
    Path(path).write_text(render_stats(stats, header))


def encode_trace(deliveries: Sequence[Tuple[float, int, Message]]) -> bytes:
    out = bytearray()
    for t, receiver, m in deliveries:
        out += _REC.pack(round(t * 1000), receiver)
        out += wire.encode(m)
    return bytes(out)


def write_trace(path: Union[str, Path], deliveries: Sequence[Tuple[float, int, Message]]) -> None:
    Path(path).write_bytes(encode_trace(deliveries))


def read_trace(path: Union[str, Path]) -> Iterator[Tuple[int, int, Message]]:
    """Yields (time_ns, receiver, message)."""
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        t, receiver = _REC.unpack_from(data, pos)
        pos += _REC.size
        (length,) = struct.unpack_from(">I", data, pos)
        end = pos + 4 + length
        yield t, receiver, wire.decode(data[pos:end])
        pos = end
