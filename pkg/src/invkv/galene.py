"""Fully distributed invalidating replication without fault tolerance.

Writes from any replica: bump the key's logical timestamp, broadcast an
invalidation carrying only key+timestamp, gather acknowledgments from every
peer, then push the value with an update broadcast.  Reads are local and
served only from the Valid state.  There are no epochs, replays, or
timeouts here: with lossy links a key can stall forever, and the harness is
expected to surface that as a liveness alarm rather than wrong data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .simnet import NodeNet
from .types import Key, KeyState, NodeId, Timestamp, TS_ZERO, ts_bump, ts_greater


@dataclass(slots=True)
class Inv:
    key: Key
    ts: Timestamp
    kind = "G_INV"


@dataclass(slots=True)
class Ack:
    key: Key
    ts: Timestamp
    kind = "G_ACK"


@dataclass(slots=True)
class Upd:
    key: Key
    ts: Timestamp
    value: int
    kind = "G_UPD"


@dataclass(slots=True)
class _Pending:
    ts: Timestamp
    value: int
    acks_missing: set
    ticket: object
    superseded: bool = False


@dataclass(slots=True)
class _Rec:
    state: KeyState = KeyState.VALID
    ts: Timestamp = TS_ZERO
    value: int = 0
    pending: Optional[_Pending] = None


STALL = "stall"


class GaleneNode:
    """One symmetric-cache replica running the invalidate/ack/update protocol."""

    def __init__(self, node_id: NodeId, peers: list, net: NodeNet,
                 read_own_write: bool = True, suppress_superseded_upd: bool = False,
                 fair_ids: bool = False, mutation: str = ""):
        self.id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.net = net
        self.read_own_write = read_own_write
        self.suppress_superseded_upd = suppress_superseded_upd
        self.fair_ids = fair_ids
        self.n_nodes = len(peers)
        self.mutation = mutation
        self.store: dict[Key, _Rec] = {}

    def _rec(self, key: Key) -> _Rec:
        rec = self.store.get(key)
        if rec is None:
            rec = self.store[key] = _Rec()
        return rec

    def _gt(self, a: Timestamp, b: Timestamp, key: Key) -> bool:
        return ts_greater(a, b, key, self.n_nodes, self.fair_ids)

    # -- client entry points -------------------------------------------------

    def read(self, key: Key, ticket):
        """Return the local value or STALL; the harness retries next tick."""
        rec = self._rec(key)
        if rec.state is KeyState.VALID:
            self.net.complete(ticket, value=rec.value, ts=rec.ts)
            return None
        if rec.state is KeyState.WRITE and self.read_own_write:
            self.net.complete(ticket, value=rec.value, ts=rec.ts)
            return None
        return STALL

    def write(self, key: Key, value: int, ticket):
        """Start a write if the key is Valid locally; otherwise STALL."""
        rec = self._rec(key)
        if rec.state is not KeyState.VALID:
            return STALL
        rec.ts = ts_bump(rec.ts, self.id, 2)
        rec.state = KeyState.WRITE
        rec.value = value
        rec.pending = _Pending(rec.ts, value, set(self.peers), ticket)
        self.net.apply_note(key, rec.ts, value)
        targets = self.peers
        if self.mutation == "skip_inv" and len(targets) > 1:
            skipped = targets[-1]
            targets = targets[:-1]
            rec.pending.acks_missing.discard(skipped)
        for p in targets:
            self.net.send(p, Inv(key, rec.ts))
        if not rec.pending.acks_missing:
            self._finish_write(key, rec)
        return None

    # -- message handlers ----------------------------------------------------

    def on_message(self, src: NodeId, epoch: int, msg) -> None:
        if isinstance(msg, Inv):
            self._on_inv(src, msg)
        elif isinstance(msg, Ack):
            self._on_ack(src, msg)
        elif isinstance(msg, Upd):
            self._on_upd(msg)

    def on_timer(self, token) -> None:  # no timers in this protocol
        pass

    def _on_inv(self, src: NodeId, msg: Inv) -> None:
        rec = self._rec(msg.key)
        if self._gt(msg.ts, rec.ts, msg.key):
            if self.mutation == "ack_without_invalidate":
                rec.ts = msg.ts  # deliberately skips the state transition
            else:
                if rec.state is KeyState.WRITE and rec.pending is not None:
                    rec.pending.superseded = True
                rec.state = KeyState.INVALID
                rec.ts = msg.ts
                self.net.apply_note(msg.key, msg.ts, None)
        # acknowledged regardless of the comparison outcome
        self.net.send(src, Ack(msg.key, msg.ts))

    def _on_ack(self, src: NodeId, msg: Ack) -> None:
        rec = self._rec(msg.key)
        pend = rec.pending
        if pend is None or msg.ts != pend.ts:
            return  # stale acknowledgment
        pend.acks_missing.discard(src)
        if not pend.acks_missing:
            self._finish_write(msg.key, rec)

    def _finish_write(self, key: Key, rec: _Rec) -> None:
        pend = rec.pending
        rec.pending = None
        if not pend.superseded:
            rec.state = KeyState.VALID
            for p in self.peers:
                self.net.send(p, Upd(key, pend.ts, pend.value))
        elif not self.suppress_superseded_upd:
            # a concurrent higher-timestamp write took over; this update
            # broadcast is dead weight and every receiver will discard it
            for p in self.peers:
                self.net.send(p, Upd(key, pend.ts, pend.value))
        else:
            self.net.count("suppressed_upd")
        self.net.complete(pend.ticket, committed=True, ts=pend.ts)

    def _on_upd(self, msg: Upd) -> None:
        rec = self._rec(msg.key)
        if rec.state is KeyState.INVALID and rec.ts == msg.ts:
            rec.value = msg.value
            rec.state = KeyState.VALID
        # anything else is stale or duplicate: discard
