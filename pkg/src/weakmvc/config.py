"""Cluster membership, engine settings and the key=value configuration file."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

Address = Tuple[str, int]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    members: Tuple[int, ...]
    f: int
    epoch: int = 0
    shared_seed: int = 0
    addresses: Dict[int, Address] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted(self.members)))
        if len(set(self.members)) != len(self.members):
            raise ConfigError("duplicate replica id")
        if self.n < 2 * self.f + 1:
            raise ConfigError(f"{self.n} replicas cannot tolerate f={self.f} crashes (need n >= 2f+1)")

    @property
    def n(self) -> int:
        return len(self.members)

    def with_added(self, rid: int, addr: Optional[Address] = None) -> "ClusterConfig":
        if rid in self.members:
            raise ConfigError(f"replica {rid} is already a member")
        addrs = dict(self.addresses)
        if addr is not None:
            addrs[rid] = addr
        return replace(self, members=self.members + (rid,), epoch=self.epoch + 1, addresses=addrs)

    def with_removed(self, rid: int) -> "ClusterConfig":
        if rid not in self.members:
            raise ConfigError(f"replica {rid} is not a member")
        addrs = {k: v for k, v in self.addresses.items() if k != rid}
        return replace(self, members=tuple(m for m in self.members if m != rid), epoch=self.epoch + 1, addresses=addrs)


@dataclass(frozen=True)
class Settings:
    proxy_batch_size: int = 1
    client_batch_size: int = 1
    batch_timeout_ms: float = 5.0
    compaction_interval_ms: float = 100.0
    conservative_compaction: bool = False
    freeze_time_us: int = 0
    digest_horizon: int = 10_000  # compacted slots whose decision is still served to laggards
    client_timeout_ms: float = 50.0


def parse_config(text: str) -> Tuple[ClusterConfig, Settings]:
    """Parse ``key = value`` lines; ``replica.<id> = host:port`` declares members."""
    members: Dict[int, Address] = {}
    kv: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("replica."):
            rid = int(key.split(".", 1)[1])
            host, _, port = value.rpartition(":")
            members[rid] = (host or "127.0.0.1", int(port))
        else:
            kv[key] = value
    if not members:
        raise ConfigError("no replica.<id> entries")
    f = int(kv.pop("f", (len(members) - 1) // 2))
    if "n" in kv and int(kv.pop("n")) != len(members):
        raise ConfigError("n does not match the number of replica entries")
    cluster = ClusterConfig(
        members=tuple(members),
        f=f,
        epoch=int(kv.pop("epoch", 0)),
        shared_seed=int(kv.pop("shared_seed", 0)),
        addresses=members,
    )
    casts = {
        "proxy_batch_size": int,
        "client_batch_size": int,
        "batch_timeout_ms": float,
        "compaction_interval": float,
        "compaction_interval_ms": float,
        "conservative_compaction": lambda s: s.lower() in ("1", "true", "yes", "on"),
        "freeze_time_us": int,
        "digest_horizon": int,
        "client_timeout_ms": float,
    }
    opts = {}
    for key, value in kv.items():
        if key not in casts:
            raise ConfigError(f"unknown setting {key!r}")
        name = "compaction_interval_ms" if key == "compaction_interval" else key
        opts[name] = casts[key](value)
    return cluster, Settings(**opts)


def load_config(path: Union[str, Path]) -> Tuple[ClusterConfig, Settings]:
    return parse_config(Path(path).read_text())


def render_config(cluster: ClusterConfig, settings: Settings = Settings()) -> str:
    lines = [f"replica.{rid} = {h}:{p}" for rid, (h, p) in sorted(cluster.addresses.items())]
    lines += [f"n = {cluster.n}", f"f = {cluster.f}", f"shared_seed = {cluster.shared_seed}"]
    for name in Settings.__dataclass_fields__:
        v = getattr(settings, name)
        lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# -- membership commands travel through the log as ordinary requests ---------

_RECONF_MAGIC = b"\xffRECONF"
_ADD, _REMOVE = 1, 2


@dataclass(frozen=True)
class AddReplica:
    replica_id: int
    address: Optional[Address] = None


@dataclass(frozen=True)
class RemoveReplica:
    replica_id: int


ReconfigCommand = Union[AddReplica, RemoveReplica]


def encode_reconfig(cmd: ReconfigCommand) -> bytes:
    if isinstance(cmd, AddReplica):
        host, port = cmd.address or ("", 0)
        h = host.encode()
        return _RECONF_MAGIC + struct.pack(">BHHH", _ADD, cmd.replica_id, port, len(h)) + h
    return _RECONF_MAGIC + struct.pack(">BHHH", _REMOVE, cmd.replica_id, 0, 0)


def decode_reconfig(payload: bytes) -> Optional[ReconfigCommand]:
    """The membership command carried by a payload, or None for ordinary payloads."""
    if not payload.startswith(_RECONF_MAGIC):
        return None
    op, rid, port, hlen = struct.unpack_from(">BHHH", payload, len(_RECONF_MAGIC))
    if op == _ADD:
        host = payload[len(_RECONF_MAGIC) + 7 : len(_RECONF_MAGIC) + 7 + hlen].decode()
        return AddReplica(rid, (host, port) if host else None)
    if op == _REMOVE:
        return RemoveReplica(rid)
    raise ConfigError(f"unknown membership op {op}")


def apply_reconfig(cluster: ClusterConfig, cmd: ReconfigCommand) -> ClusterConfig:
    """New membership after cmd; raises ConfigError if the result is not viable."""
    if isinstance(cmd, AddReplica):
        return cluster.with_added(cmd.replica_id, cmd.address)
    return cluster.with_removed(cmd.replica_id)
