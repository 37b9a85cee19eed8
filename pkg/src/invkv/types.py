"""Shared vocabulary types: timestamps, key states, epochs, wire envelopes.

These carry no protocol logic.  All protocol modules order updates by the
lexicographic (version, node id) timestamp defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple

from .rng import mix64

NodeId = int
Epoch = int
Key = int

# Versions are 64-bit; desk-scale runs stay far below this, so overflow is
# treated as a programming error rather than wrapped.
VERSION_LIMIT = 1 << 63

LESS, EQUAL, GREATER = -1, 0, 1


class Timestamp(NamedTuple):
    """Per-key logical timestamp: (version, coordinator id), ordered
    lexicographically -- version dominates, coordinator id breaks ties."""

    version: int
    cid: NodeId


TS_ZERO = Timestamp(0, 0)


def ts_compare(a: Timestamp, b: Timestamp) -> int:
    """Return LESS/EQUAL/GREATER for the lexicographic timestamp order."""
    if a == b:
        return EQUAL
    return GREATER if a > b else LESS


def ts_bump(current: Timestamp, self_id: NodeId, delta: int) -> Timestamp:
    """Next timestamp issued by ``self_id``: version advances by ``delta``
    (2 for plain writes, 1 for read-modify-writes) and the coordinator id
    is replaced with the issuer's."""
    if delta not in (1, 2):
        raise ValueError(f"delta must be 1 or 2, got {delta}")
    version = current.version + delta
    assert version < VERSION_LIMIT, "timestamp version overflow"
    return Timestamp(version, self_id)


def ts_greater(a: Timestamp, b: Timestamp, key: Key = 0,
               n_nodes: int = 0, fair: bool = False) -> bool:
    """``a > b`` with an optional per-key rotation of the tie-breaking ids.

    With ``fair`` set, equal versions are broken by (cid + hash(key)) mod n
    instead of raw cid, equalizing which node wins concurrent writes across
    keys.  The rotation is a bijection per key, so totality is preserved.
    """
    if a.version != b.version:
        return a.version > b.version
    if a.cid == b.cid:
        return False
    if fair and n_nodes > 1:
        r = mix64(key) % n_nodes
        return (a.cid + r) % n_nodes > (b.cid + r) % n_nodes
    return a.cid > b.cid


class KeyState(Enum):
    """Per-replica key lifecycle.  TRANS is only reachable from WRITE or
    REPLAY, when a pending update gets superseded by a higher-timestamp
    invalidation."""

    VALID = "valid"
    INVALID = "invalid"
    WRITE = "write"
    REPLAY = "replay"
    TRANS = "trans"


@dataclass(slots=True)
class Envelope:
    """A simulated wire message.  ``epoch`` is stamped by the sender at send
    time; receivers of epoch-gated payloads drop mismatching envelopes."""

    src: NodeId
    dst: NodeId
    epoch: Epoch
    payload: Any
    send_tick: int
