"""Fault-tolerant linearizable replication via invalidations that carry the
new value, per-key logical timestamps, and a lease-guarded membership.

Coordinator path for an update: bump the timestamp (by 2 for writes, 1 for
read-modify-writes), apply locally, broadcast INV(key, ts, value, rmw) to
the live peers, commit when every live peer has acknowledged, then send VAL.
Followers invalidate on higher timestamps and always acknowledge plain
writes; RMW invalidations are refused (answered with an INV describing the
local state) when the local timestamp is higher, which is what aborts the
losing side of update races.

Because invalidations carry the value, any replica stuck Invalid past its
message-loss timeout can replay the pending update with the original
timestamp, which makes loss, duplication, reordering, crashes, and
partitions (primary side) survivable.  Four optimizations are gated by
flags: fair id rotation (o1), validation elision for superseded writes
(o2), acknowledgment broadcast for early follower reads (o3), and the
asynchronous read-validation variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .simnet import NodeNet
from .types import Key, KeyState, NodeId, Timestamp, TS_ZERO, ts_bump, ts_greater

STALL = "stall"


@dataclass(slots=True)
class Inv:
    key: Key
    ts: Timestamp
    value: int
    rmw: bool = False
    kind = "INV"


@dataclass(slots=True)
class Ack:
    key: Key
    ts: Timestamp
    kind = "ACK"


@dataclass(slots=True)
class Val:
    key: Key
    ts: Timestamp
    kind = "VAL"


@dataclass(slots=True)
class Mchk:
    kind = "MCHK"


@dataclass(slots=True)
class MchkAck:
    kind = "MCHK_ACK"


@dataclass(slots=True)
class _Pending:
    """An update this node is coordinating (client op or replay)."""
    op: str                    # "write" | "rmw" | "replay"
    ts: Timestamp
    value: int
    rmw: bool
    acks_missing: set
    ticket: object = None
    old_value: int = 0         # rmw only: value read at issue time
    seq: int = 0               # guards stale mlt timers
    bcast: int = 0             # tick of the first INV broadcast


@dataclass(slots=True)
class _Rec:
    state: KeyState = KeyState.VALID
    ts: Timestamp = TS_ZERO
    value: int = 0
    inv_rmw: bool = False          # flag of the adopted invalidation (for replays)
    inv_src: NodeId = -1           # sender of the adopted invalidation (for o3)
    pending: Optional[_Pending] = None
    acks_seen: set = field(default_factory=set)   # o3: ack broadcasters at rec.ts
    replay_arm: Optional[Timestamp] = None


class HermesNode:
    """One replica: protocol state machine plus client entry points."""

    def __init__(self, node_id: NodeId, n_nodes: int, net: NodeNet, *,
                 o1_fairness: bool = False, o2_skip_val: bool = False,
                 o3_bcast_acks: bool = False, async_reads: bool = False,
                 mlt_ticks: int = 20, mutation: str = ""):
        self.id = node_id
        self.n_nodes = n_nodes
        self.net = net
        self.o1 = o1_fairness
        self.o2 = o2_skip_val
        self.o3 = o3_bcast_acks
        self.async_reads = async_reads
        self.mlt_ticks = mlt_ticks
        self.mutation = mutation
        self.epoch = 0
        self.live = frozenset(range(n_nodes))
        self.store: dict[Key, _Rec] = {}
        self._seq = 0
        # async-variant state
        self.spec_reads: list = []         # (ticket, key, value, epoch)
        self.spec_stalled: list = []       # (ticket, key): waiting for Valid
        self.mchk_acks: Optional[set] = None
        self._mchk_timer_armed = False

    # ---------------------------------------------------------------- utils

    def _rec(self, key: Key) -> _Rec:
        rec = self.store.get(key)
        if rec is None:
            rec = self.store[key] = _Rec()
        return rec

    def _gt(self, a: Timestamp, b: Timestamp, key: Key) -> bool:
        return ts_greater(a, b, key, self.n_nodes, self.o1)

    def _peers(self):
        return sorted(self.live - {self.id})

    def _majority(self) -> int:
        return len(self.live) // 2 + 1

    def _arm_mlt(self, key: Key, pend: _Pending) -> None:
        self._seq += 1
        pend.seq = self._seq
        self.net.timer(self.mlt_ticks, ("mlt", key, self._seq))

    # ------------------------------------------------------- client surface

    def read(self, key: Key, ticket):
        rec = self._rec(key)
        if rec.state is KeyState.VALID:
            if self.async_reads:
                self.spec_reads.append(
                    (ticket, key, rec.value, self.epoch, rec.ts, self.net.now))
                self._kick_validation()
                return None
            self.net.complete(ticket, value=rec.value, ts=rec.ts)
            return None
        if (self.o3 and rec.state is KeyState.INVALID
                and self.live <= rec.acks_seen | {self.id, rec.inv_src}):
            # every live replica acknowledged this invalidation, so the
            # pending value is committed and readable before any VAL arrives
            self.net.count("o3_early_read")
            self.net.complete(ticket, value=rec.value, ts=rec.ts)
            return None
        self._note_stall(rec, key)
        return STALL

    def write(self, key: Key, value: int, ticket):
        rec = self._rec(key)
        if rec.state is not KeyState.VALID or rec.pending is not None:
            # one coordinated update per key at a time: a validation that
            # raced ahead can leave the key Valid while an earlier local
            # update still gathers acknowledgments
            self._note_stall(rec, key)
            return STALL
        ts = ts_bump(rec.ts, self.id, 2)
        rec.state = KeyState.WRITE
        rec.ts = ts
        rec.value = value
        rec.inv_rmw = False
        rec.inv_src = self.id
        rec.acks_seen = {self.id}
        rec.pending = _Pending("write", ts, value, False, set(self._peers()), ticket)
        self.net.apply_note(key, ts, value)
        self._bcast_inv(key, rec)
        return None

    def rmw(self, key: Key, value: int, ticket):
        """Conditional update: commits only if no concurrent update wins."""
        rec = self._rec(key)
        if rec.state is not KeyState.VALID or rec.pending is not None:
            self._note_stall(rec, key)
            return STALL
        old = rec.value
        ts = ts_bump(rec.ts, self.id, 1)
        rec.state = KeyState.WRITE
        rec.ts = ts
        rec.value = value
        rec.inv_rmw = True
        rec.inv_src = self.id
        rec.acks_seen = {self.id}
        rec.pending = _Pending("rmw", ts, value, True, set(self._peers()), ticket,
                               old_value=old)
        self.net.apply_note(key, ts, value)
        self._bcast_inv(key, rec)
        return None

    def _bcast_inv(self, key: Key, rec: _Rec) -> None:
        pend = rec.pending
        pend.bcast = self.net.now
        targets = self._peers()
        if self.mutation == "skip_inv" and len(targets) > 1:
            pend.acks_missing.discard(targets[-1])
            targets = targets[:-1]
        for p in targets:
            self.net.send(p, Inv(key, pend.ts, pend.value, pend.rmw), self.epoch)
        if not pend.acks_missing:
            self._complete_update(key, rec)
        else:
            self._arm_mlt(key, pend)

    def _note_stall(self, rec: _Rec, key: Key) -> None:
        """A request found the key unreadable; arm the replay timeout."""
        if rec.state is KeyState.INVALID and rec.replay_arm is None:
            rec.replay_arm = rec.ts
            self.net.timer(self.mlt_ticks, ("replay", key, rec.ts))

    # ------------------------------------------------------------- replays

    def _start_replay(self, key: Key, rec: _Rec) -> None:
        rec.state = KeyState.REPLAY
        rec.pending = _Pending("replay", rec.ts, rec.value, rec.inv_rmw,
                               set(self._peers()))
        self.net.count("replays")
        self._bcast_inv(key, rec)

    # ---------------------------------------------------------- completion

    def _complete_update(self, key: Key, rec: _Rec) -> None:
        pend = rec.pending
        rec.pending = None
        if rec.ts == pend.ts:
            # still the latest update: validate everywhere
            rec.state = KeyState.VALID
            for p in self._peers():
                self.net.send(p, Val(key, pend.ts), self.epoch)
        else:
            # superseded while pending: committed, but a newer invalidation
            # owns the key now
            if rec.state is KeyState.TRANS:
                rec.state = KeyState.INVALID
            if self.o2:
                self.net.count("suppressed_val", len(self._peers()))
            else:
                for p in self._peers():
                    self.net.send(p, Val(key, pend.ts), self.epoch)
        if pend.ticket is not None:
            rtt = self.net.now - pend.bcast
            if pend.op == "rmw":
                self.net.complete(pend.ticket, committed=True,
                                  old_value=pend.old_value, ts=pend.ts, rtt=rtt)
            else:
                self.net.complete(pend.ticket, committed=True, ts=pend.ts, rtt=rtt)
        if self.async_reads and self.spec_reads:
            # a fully acknowledged update proves this node is in the current
            # membership, validating every read speculated under this epoch
            self._release_spec_reads()

    # -------------------------------------------------------- message path

    def on_message(self, src: NodeId, epoch: int, msg) -> None:
        if epoch != self.epoch:
            self.net.count("drop_epoch")
            return
        if isinstance(msg, Inv):
            self._on_inv(src, msg)
        elif isinstance(msg, Ack):
            self._on_ack(src, msg)
        elif isinstance(msg, Val):
            self._on_val(msg)
        elif isinstance(msg, Mchk):
            self.net.send(src, MchkAck(), self.epoch)
        elif isinstance(msg, MchkAck):
            self._on_mchk_ack(src)

    def _on_inv(self, src: NodeId, msg: Inv) -> None:
        rec = self._rec(msg.key)
        higher = self._gt(msg.ts, rec.ts, msg.key)
        if msg.rmw and not higher and msg.ts != rec.ts:
            # refuse: answer with an invalidation describing the local state,
            # which aborts the sender's pending read-modify-write
            self.net.send(src, Inv(msg.key, rec.ts, rec.value, rec.inv_rmw), self.epoch)
            return
        if higher:
            pend = rec.pending
            if pend is not None and pend.rmw:
                # a pending read-modify-write (client op or replay of one)
                # lost to a higher-timestamped update; followers would keep
                # refusing it, so it aborts rather than blocking the key
                rec.pending = None
                if pend.ticket is not None:
                    self.net.complete(pend.ticket, committed=False)
                rec.state = KeyState.INVALID
            elif rec.state in (KeyState.WRITE, KeyState.REPLAY):
                rec.state = KeyState.TRANS
            elif rec.state is not KeyState.TRANS:
                rec.state = KeyState.INVALID
            if self.mutation == "ack_without_invalidate":
                rec.state = KeyState.VALID
            rec.ts = msg.ts
            rec.value = msg.value
            rec.inv_rmw = msg.rmw
            rec.inv_src = src
            rec.acks_seen = {self.id, src}
            rec.replay_arm = None
            self.net.apply_note(msg.key, msg.ts, msg.value)
        if self.o3:
            for p in self._peers():
                self.net.send(p, Ack(msg.key, msg.ts), self.epoch)
        else:
            self.net.send(src, Ack(msg.key, msg.ts), self.epoch)

    def _on_ack(self, src: NodeId, msg: Ack) -> None:
        rec = self._rec(msg.key)
        if self.o3 and msg.ts == rec.ts:
            rec.acks_seen.add(src)
        pend = rec.pending
        if pend is None or msg.ts != pend.ts:
            return
        pend.acks_missing.discard(src)
        if not pend.acks_missing:
            self._complete_update(msg.key, rec)
        elif self.async_reads:
            self._after_majority_event()

    def _on_val(self, msg: Val) -> None:
        rec = self._rec(msg.key)
        if msg.ts == rec.ts or self.mutation == "validate_stale_ts":
            rec.state = KeyState.VALID
            rec.replay_arm = None

    # -------------------------------------------------------------- timers

    def on_timer(self, token) -> None:
        kind = token[0]
        if kind == "mlt":
            _, key, seq = token
            rec = self._rec(key)
            pend = rec.pending
            if pend is not None and pend.seq == seq and pend.acks_missing:
                self.net.count("mlt_retransmits")
                for p in sorted(pend.acks_missing & self.live):
                    self.net.send(p, Inv(key, pend.ts, pend.value, pend.rmw), self.epoch)
                self._arm_mlt(key, pend)
        elif kind == "replay":
            _, key, ts = token
            rec = self._rec(key)
            rec.replay_arm = None
            if rec.state is KeyState.INVALID and rec.ts == ts:
                self._start_replay(key, rec)
        elif kind == "mchk":
            if self.mchk_acks is not None:
                for p in self._peers():
                    self.net.send(p, Mchk(), self.epoch)
                self.net.timer(self.mlt_ticks, ("mchk",))
        elif kind == "mchk_kick":
            self._mchk_timer_armed = False
            if self.spec_reads and self.mchk_acks is None and not self._has_pending_update():
                self.mchk_acks = {self.id}
                self.net.count("mchk_rounds")
                for p in self._peers():
                    self.net.send(p, Mchk(), self.epoch)
                self.net.timer(self.mlt_ticks, ("mchk",))
        elif kind == "respec":
            self._drain_spec_stalled()

    # ------------------------------------------------------ async variant

    def _has_pending_update(self) -> bool:
        return any(r.pending is not None for r in self.store.values())

    def _kick_validation(self) -> None:
        if (self.mchk_acks is None and not self._has_pending_update()
                and not self._mchk_timer_armed):
            self._mchk_timer_armed = True
            self.net.timer(1, ("mchk_kick",))

    def _on_mchk_ack(self, src: NodeId) -> None:
        if self.mchk_acks is None:
            return
        self.mchk_acks.add(src)
        if len(self.mchk_acks) >= self._majority():
            self.mchk_acks = None
            self._release_spec_reads()

    def _after_majority_event(self) -> None:
        """An update of ours gathered acknowledgments; if a majority of the
        replica group confirmed this epoch, speculative reads are safe."""
        if not (self.async_reads and self.spec_reads):
            return
        for rec in self.store.values():
            pend = rec.pending
            if pend is None:
                continue
            have = len(self.live - {self.id}) - len(pend.acks_missing) + 1
            if have >= self._majority():
                self._release_spec_reads()
                return

    def _release_spec_reads(self) -> None:
        rest = []
        for ticket, key, value, epoch, ts, captured in self.spec_reads:
            if epoch == self.epoch:
                self.net.complete(ticket, value=value, ts=ts, captured=captured)
            else:
                rest.append((ticket, key, value, epoch, ts, captured))
        self.spec_reads = rest

    def _drain_spec_stalled(self) -> None:
        rest = []
        for ticket, key in self.spec_stalled:
            rec = self._rec(key)
            if rec.state is KeyState.VALID:
                self.spec_reads.append(
                    (ticket, key, rec.value, self.epoch, rec.ts, self.net.now))
            else:
                self._note_stall(rec, key)
                rest.append((ticket, key))
        self.spec_stalled = rest
        if self.spec_reads:
            self._kick_validation()
        if self.spec_stalled:
            self.net.timer(1, ("respec",))

    # -------------------------------------------------- membership updates

    def on_membership(self, epoch: int, live: frozenset) -> None:
        """Install an m-update; coordinators re-evaluate pending updates."""
        self.epoch = epoch
        self.live = live
        for key, rec in self.store.items():
            pend = rec.pending
            if pend is None:
                continue
            if pend.op == "rmw":
                # replay the RMW from scratch so a conflict cannot hide
                # behind a removed replica
                pend.acks_missing = set(self._peers())
                self.net.count("rmw_replays")
                for p in self._peers():
                    self.net.send(p, Inv(key, pend.ts, pend.value, True), self.epoch)
                self._arm_mlt(key, pend)
            else:
                pend.acks_missing &= live
                if not pend.acks_missing:
                    self._complete_update(key, rec)
        if self.async_reads:
            # speculative reads captured under the old epoch must re-execute
            self.mchk_acks = None
            for ticket, key, _value, _epoch, _ts, _cap in self.spec_reads:
                self.spec_stalled.append((ticket, key))
            self.spec_reads = []
            if self.spec_stalled:
                self.net.timer(1, ("respec",))
