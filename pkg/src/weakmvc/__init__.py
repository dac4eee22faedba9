"""State machine replication on top of a randomized multi-valued consensus with weak validity.

Each log slot is decided by a fresh :class:`WeakMvcInstance`: replicas swap
their proposed batches, reduce "did a majority propose the batch I saw?"
to a binary question, and settle it with a coin-assisted binary consensus.
The slot outcome is either one replica's batch or NULL, in which case the
losing requests go back into the queue for a later slot.
"""

from .coin import CommonCoin, coin_flip
from .config import ClusterConfig, Settings, load_config, parse_config
from .consensus import Stage, StepOutput, WeakMvcInstance
from .engine import Effects, ReplicaEngine
from .kv import KvCommand, KvOp, KvStateMachine
from .types import (
    NULL,
    Batch,
    BinValue,
    ClientReply,
    Decision,
    InvariantViolation,
    Message,
    MsgKind,
    ProtocolError,
    Request,
    RequestId,
    VoteValue,
)

__all__ = [
    "NULL",
    "Batch",
    "BinValue",
    "ClientReply",
    "ClusterConfig",
    "CommonCoin",
    "Decision",
    "Effects",
    "InvariantViolation",
    "KvCommand",
    "KvOp",
    "KvStateMachine",
    "Message",
    "MsgKind",
    "ProtocolError",
    "ReplicaEngine",
    "Request",
    "RequestId",
    "Settings",
    "Stage",
    "StepOutput",
    "VoteValue",
    "WeakMvcInstance",
    "coin_flip",
    "load_config",
    "parse_config",
]
