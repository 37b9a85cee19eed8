"""Locality-aware replicated transactions over owned objects.

A write transaction runs entirely on its coordinator: ownership of every
accessed object is acquired once (blocking the session), execution reads one
object per tick, and the local commit bumps versions without any network
round-trip.  Replication then happens off the critical path: an idempotent
R-INV carrying the written versions and values fans out to the followers,
the transaction reliably commits after one round of R-ACKs, and R-VALs
revalidate the replicas.  Coordinators pipeline: the next transaction starts
right after the local commit, and followers apply a coordinator's stream in
local_tx_id order (a prev-VAL bit covers followers that skipped a slot).

After an m-update every live node replays the stored R-INVs it has applied,
including those left behind by dead coordinators; replicas converge because
replays reuse the transaction id and versions.  Ownership requests for
objects of dead owners are refused until every live node reports its replay
backlog drained.

Read-only transactions run on any node that replicates all their objects:
versions and values are buffered one per tick, then a validation pass
confirms every object is Valid and unchanged; otherwise the transaction
aborts and the session may retry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import zeus_ownership as zo
from .simnet import NodeNet
from .types import Key, KeyState, NodeId

MAX_ACQUIRE_ATTEMPTS = 8


@dataclass(slots=True)
class RInv:
    tx_id: tuple                      # (local_tx_id, node_id)
    followers: tuple
    objects: tuple                    # ((key, t_version, t_data), ...)
    prev_val: bool
    kind = "R_INV"


@dataclass(slots=True)
class RAck:
    tx_id: tuple
    kind = "R_ACK"


@dataclass(slots=True)
class RVal:
    tx_id: tuple
    kind = "R_VAL"
    # validations are guarded by tx_id and version checks, so they stay
    # meaningful across an epoch bump; gating them would strand followers
    # whose m-update raced the validation
    epoch_gated = False


@dataclass(slots=True)
class RecoveryDone:
    epoch: int
    kind = "RECOVERY_DONE"


@dataclass(slots=True)
class TRec:
    t_state: KeyState = KeyState.VALID
    t_version: int = 0
    t_data: int = 0


@dataclass(slots=True)
class PendingTx:
    """Coordinator-side reliable commit in flight."""
    tx_id: tuple
    objects: tuple
    followers: frozenset
    acks_missing: set
    prev_val: bool
    ticket: object = None
    reads: dict = field(default_factory=dict)
    bcast: int = 0


@dataclass(slots=True)
class TxSpec:
    """One transaction request: written keys get the listed values, read
    keys are only observed.  Read-only when writes is empty."""
    reads: tuple
    writes: dict

    @property
    def keys(self):
        return tuple(sorted(set(self.reads) | set(self.writes)))

    @property
    def read_only(self) -> bool:
        return not self.writes


@dataclass(slots=True)
class _ActiveTx:
    ticket: object
    spec: TxSpec
    phase: str = "acquire"       # acquire -> execute -> (verify)
    cursor: int = 0
    attempts: int = 0
    reads: dict = field(default_factory=dict)
    buffer: dict = field(default_factory=dict)   # read-only: key -> (ver, val)


class ZeusNode:
    """One datastore node: replica store, ownership manager, tx pipeline."""

    def __init__(self, node_id: NodeId, n_nodes: int, net: NodeNet, *,
                 directory: list, own_timeout: int = 40,
                 replication_degree: int = 3, backoff_rng=None,
                 mutation: str = ""):
        self.id = node_id
        self.n_nodes = n_nodes
        self.net = net
        self.directory = list(directory)
        self.own_timeout = own_timeout
        self.target_degree = replication_degree
        self.backoff_rng = backoff_rng
        self.mutation = mutation
        self.epoch = 0
        self.live = frozenset(range(n_nodes))
        self.replicas: dict[Key, TRec] = {}
        self.own = zo.OwnershipManager(self)
        # reliable-commit state
        self._next_tx = 1
        self.pending_tx: dict[tuple, PendingTx] = {}        # mine, unacked
        self.replay_tx: dict[tuple, PendingTx] = {}         # adopted from the dead
        self.stored: dict[tuple, RInv] = {}                 # follower copies
        self.applied: set = set()                           # every tx applied here
        self.completed: dict[NodeId, set] = {}              # pipeline gate state
        self.held: dict[NodeId, dict] = {}                  # out-of-order R-INVs
        self.val_sent: set = set()
        self.extra_val: dict[tuple, set] = {}
        # recovery
        self.recovery_pending = False
        self.recovery_done_from: set = set()
        self.active: Optional[_ActiveTx] = None

    # ----------------------------------------------------------- plumbing

    def _peers(self):
        return sorted(self.live - {self.id})

    # hooks used by the ownership manager ----------------------------------

    def owner_gained(self, key: Key, data) -> None:
        self._install_data(key, data)
        self.net.note("owner_on", key=key)
        self._poke()

    def owner_lost(self, key: Key) -> None:
        self.net.note("owner_off", key=key)

    def owner_suspended(self, key: Key) -> None:
        """Ownership is migrating away; stop acting as the owner now."""
        self.net.note("owner_off", key=key)

    def replica_granted(self, key: Key, data) -> None:
        self._install_data(key, data)
        self._poke()

    def _install_data(self, key: Key, data) -> None:
        """Adopt transferred object data, never regressing the version."""
        rec = self.replicas.get(key)
        if rec is None:
            if data is not None:
                self.replicas[key] = TRec(KeyState.VALID, data[0], data[1])
            # else: leave absent; the fetch path will supply the value
        elif data is not None and data[0] > rec.t_version:
            rec.t_version, rec.t_data = data
            rec.t_state = KeyState.VALID

    def victim_invalidate(self, key: Key) -> None:
        """This node is being excluded from a key's replica set: shed the
        data copy right away.  Dropping immediately is safe (a reader copy is
        redundant) and leaves no stuck state if the round later aborts; an
        aborted round merely leaves a mapped-but-empty reader, which the
        acquire/fetch path repairs on the next access."""
        self.replicas.pop(key, None)

    def ownership_blocked(self, key: Key) -> bool:
        """Driver-side gate: requests on dead owners wait out the recovery."""
        if not self.recovery_pending:
            return False
        owner = self.own.owner_of(key)
        return owner is None or owner not in self.live

    def ownership_blocked_at_owner(self, key: Key) -> bool:
        """Owner-side gate: the object is involved in a pending transaction,
        either replicating (t_state Write) or still executing locally.  The
        gate must span the whole write transaction: handing out data or
        rights mid-transaction would let a commit slip past a replica that
        joined the map a moment later."""
        rec = self.replicas.get(key)
        if rec is not None and rec.t_state is KeyState.WRITE:
            return True
        act = self.active
        return (act is not None and not act.spec.read_only
                and key in act.spec.keys)

    def maybe_demote(self, key: Key, new_replicas: dict) -> None:
        """Degree crept above target after a non-replica acquisition: shed
        one reader, off the critical path."""
        if len(new_replicas) > self.target_degree:
            victims = sorted(n for n, l in new_replicas.items()
                             if l == zo.READER and n in self.live)
            if victims:
                self.net.timer(1, ("demote", key, victims[-1]))

    # ------------------------------------------------------- client surface

    def submit_tx(self, spec: TxSpec, ticket) -> None:
        assert self.active is None, "one transaction at a time per node"
        self.active = _ActiveTx(ticket, spec)
        self._step_tx()

    def _poke(self) -> None:
        if self.active is not None:
            self.net.timer(1, ("tx_step",))

    def _step_tx(self) -> None:
        act = self.active
        if act is None:
            return
        if act.phase == "acquire":
            self._tx_acquire(act)
        elif act.phase == "execute":
            self._tx_execute(act)
        elif act.phase == "verify":
            self._tx_verify(act)

    def _tx_acquire(self, act: _ActiveTx) -> None:
        spec = act.spec
        for key in spec.keys:
            if spec.read_only:
                if key not in self.replicas:
                    self._request_level(act, key, zo.READER)
                    return
            elif not self.own.is_acting_owner(key) or key not in self.replicas:
                # the replica can be missing right after an aborted demote;
                # re-acquiring repairs it through the data fetch
                self._request_level(act, key, zo.OWNER)
                return
        act.phase = "execute"
        self.net.timer(1, ("tx_step",))

    def _request_level(self, act: _ActiveTx, key: Key, level: str) -> None:
        def done(granted: bool) -> None:
            if self.active is not act:
                return  # late verdict for a transaction that already ended
            if granted:
                self._poke()
                return
            act.attempts += 1
            if act.attempts >= MAX_ACQUIRE_ATTEMPTS:
                self._finish_tx(act, committed=False)
                return
            self.net.timer(self.own.next_backoff(key, self.backoff_rng), ("tx_step",))

        if not self.own.acquire(key, level, done):
            self.net.timer(2, ("tx_step",))  # a round on this key is in flight

    def _tx_execute(self, act: _ActiveTx) -> None:
        """One object accessed per tick, so remote commits can interleave."""
        spec = act.spec
        keys = spec.keys
        if act.cursor < len(keys):
            key = keys[act.cursor]
            rec = self.replicas.get(key)
            if rec is None:
                self._finish_tx(act, committed=False)  # replica was demoted away
                return
            if spec.read_only:
                act.buffer[key] = (rec.t_version, rec.t_data)
            else:
                if rec.t_state is KeyState.INVALID:
                    # freshly migrated object still awaiting its R-VAL
                    self.net.timer(1, ("tx_step",))
                    return
                act.reads[key] = rec.t_data
            act.cursor += 1
            self.net.timer(1, ("tx_step",))
            return
        if spec.read_only:
            act.phase = "verify"
            self.net.timer(1, ("tx_step",))
            return
        self._tx_local_commit(act)

    def _tx_verify(self, act: _ActiveTx) -> None:
        ok = True
        for key, (ver, _val) in act.buffer.items():
            rec = self.replicas.get(key)
            if rec is None or rec.t_state is not KeyState.VALID or rec.t_version != ver:
                ok = False
                break
        values = {k: v for k, (_ver, v) in act.buffer.items()}
        self._finish_tx(act, committed=ok, reads=values if ok else None)

    def _tx_local_commit(self, act: _ActiveTx) -> None:
        spec = act.spec
        followers: set = set()
        objects = []
        for key, value in sorted(spec.writes.items()):
            rec = self.replicas[key]
            rec.t_version += 1
            rec.t_data = value
            rec.t_state = KeyState.WRITE
            objects.append((key, rec.t_version, value))
            orec = self.own.rec(key)
            if orec is not None:
                followers |= set(orec.o_replicas) - {self.id}
        followers &= set(self.live)
        tx_id = (self._next_tx, self.id)
        self._next_tx += 1
        prev_id = (tx_id[0] - 1, self.id)
        prev_val = tx_id[0] == 1 or prev_id in self.val_sent
        pend = PendingTx(tx_id, tuple(objects), frozenset(followers),
                         set(followers), prev_val, act.ticket, dict(act.reads))
        if not prev_val:
            prev = self.pending_tx.get(prev_id)
            if prev is not None:
                newcomers = pend.followers - prev.followers
                if newcomers:
                    self.extra_val.setdefault(prev_id, set()).update(newcomers)
        pend.bcast = self.net.now
        self.pending_tx[tx_id] = pend
        self.applied.add(tx_id)
        self.net.timer(self.own_timeout, ("rc_retry", tx_id))
        self.net.progress(act.ticket, "local_commit",
                          reads=dict(act.reads), writes=dict(spec.writes),
                          versions={k: v for k, v, _d in objects})
        self.active = None  # pipelining: the session proceeds immediately
        msg = RInv(tx_id, tuple(sorted(pend.followers)), pend.objects, prev_val)
        for f in sorted(pend.followers):
            self.net.send(f, msg, self.epoch)
        if not pend.acks_missing:
            self._reliably_commit(pend)

    def _rc_retry(self, tx_id: tuple) -> None:
        """Low-level retransmission: an unacknowledged R-INV is re-sent until
        every live follower answers (epoch races make one send insufficient)."""
        pend = self.pending_tx.get(tx_id) or self.replay_tx.get(tx_id)
        if pend is None or not pend.acks_missing:
            return
        self.net.count("rc_retransmits")
        stored = self.stored.get(tx_id)
        objects = pend.objects if pend.objects else (stored.objects if stored else ())
        bit = pend.prev_val or (tx_id[0] - 1, self.id) in self.val_sent
        msg = RInv(tx_id, tuple(sorted(pend.followers & self.live)), objects, bit)
        for f in sorted(pend.acks_missing & self.live):
            self.net.send(f, msg, self.epoch)
        self.net.timer(self.own_timeout, ("rc_retry", tx_id))

    def _finish_tx(self, act: _ActiveTx, committed: bool, reads=None) -> None:
        self.active = None
        self.net.complete(act.ticket, committed=committed,
                          reads=reads if reads is not None else {},
                          writes={}, versions={},
                          read_only=act.spec.read_only)

    # ----------------------------------------------------------- replication

    def _reliably_commit(self, pend: PendingTx) -> None:
        for key, ver, _data in pend.objects:
            rec = self.replicas.get(key)
            if rec is not None and rec.t_version == ver:
                rec.t_state = KeyState.VALID
        self.val_sent.add(pend.tx_id)
        targets = set(pend.followers) | self.extra_val.pop(pend.tx_id, set())
        msg = RVal(pend.tx_id)
        for f in sorted(targets & set(self.live)):
            self.net.send(f, msg, self.epoch)
        self.pending_tx.pop(pend.tx_id, None)
        if pend.ticket is not None:
            self.net.complete(pend.ticket, committed=True, reads=pend.reads,
                              writes={k: d for k, _v, d in pend.objects},
                              versions={k: v for k, v, _d in pend.objects},
                              read_only=False, rtt=self.net.now - pend.bcast)

    def _gate_open(self, tx_id: tuple, prev_val: bool) -> bool:
        slot, coord = tx_id
        if self.mutation == "rinv_out_of_order":
            return True
        if slot == 1 or prev_val:
            return True
        return slot - 1 in self.completed.get(coord, ())

    def _mark_completed(self, tx_id: tuple) -> None:
        slot, coord = tx_id
        self.completed.setdefault(coord, set()).add(slot)
        held = self.held.get(coord)
        if held and slot + 1 in held:
            src, msg = held.pop(slot + 1)
            self._on_rinv(src, msg)

    def _on_rinv(self, src: NodeId, msg: RInv) -> None:
        if msg.tx_id in self.applied:
            # duplicate or replay of something already processed here
            self.net.send(src, RAck(msg.tx_id), self.epoch)
            return
        if not self._gate_open(msg.tx_id, msg.prev_val):
            slot, coord = msg.tx_id
            self.held.setdefault(coord, {})[slot] = (src, msg)
            return
        if msg.prev_val:
            slot, coord = msg.tx_id
            self.completed.setdefault(coord, set()).add(slot - 1)
        for key, ver, data in msg.objects:
            rec = self.replicas.get(key)
            if rec is None:
                continue  # not a replica of this object
            if rec.t_version < ver:
                rec.t_version = ver
                rec.t_data = data
                rec.t_state = KeyState.INVALID
                self.net.apply_note(key, ("tx", ver), data)
        self.stored[msg.tx_id] = msg
        self.applied.add(msg.tx_id)
        self._mark_completed(msg.tx_id)
        self.net.send(src, RAck(msg.tx_id), self.epoch)

    def _on_rack(self, src: NodeId, msg: RAck) -> None:
        if msg.tx_id in self.replay_tx:
            slot = self.replay_tx[msg.tx_id]
            slot.acks_missing.discard(src)
            if not slot.acks_missing:
                self._finish_replay(msg.tx_id)
            return
        slot_no, coord = msg.tx_id
        if coord != self.id:
            return
        # cumulative: acking slot n acknowledges every slot <= n of the pipe
        ready = []
        for tx_id, pend in self.pending_tx.items():
            if tx_id[0] <= slot_no and src in pend.acks_missing:
                pend.acks_missing.discard(src)
                if not pend.acks_missing:
                    ready.append(pend)
        for pend in sorted(ready, key=lambda p: p.tx_id):
            self._reliably_commit(pend)

    def _on_rval(self, msg: RVal) -> None:
        stored = self.stored.pop(msg.tx_id, None)
        if stored is not None:
            for key, ver, _data in stored.objects:
                rec = self.replicas.get(key)
                if rec is not None and rec.t_version == ver:
                    rec.t_state = KeyState.VALID
        self._mark_completed(msg.tx_id)
        if self.recovery_pending and not self._dead_backlog():
            self._announce_recovery_done()

    # --------------------------------------------------------------- recovery

    def on_membership(self, epoch: int, live: frozenset) -> None:
        self.epoch = epoch
        self.live = live
        dead = set(range(self.n_nodes)) - set(live)
        self.own.strip_dead()
        # my own pipeline: drop dead followers, re-send to unacked survivors
        ready = []
        for pend in sorted(self.pending_tx.values(), key=lambda p: p.tx_id):
            pend.followers = frozenset(pend.followers & live)
            pend.acks_missing &= live
            if not pend.acks_missing:
                ready.append(pend)
                continue
            bit = pend.prev_val or (pend.tx_id[0] - 1, self.id) in self.val_sent
            msg = RInv(pend.tx_id, tuple(sorted(pend.followers)), pend.objects, bit)
            for f in sorted(pend.acks_missing):
                self.net.send(f, msg, self.epoch)
        for pend in ready:
            self._reliably_commit(pend)
        # adopt and replay what failed coordinators left behind; stored but
        # never-applied copies are unusable and dropped
        self.recovery_pending = True
        self.recovery_done_from = set()
        for coord in dead:
            self.held.pop(coord, None)
        for tx_id in sorted(self.stored):
            if tx_id[1] in dead:
                if tx_id in self.applied:
                    self._replay_stored(tx_id)
                else:
                    self.stored.pop(tx_id)
        if not self._dead_backlog():
            self._announce_recovery_done()

    def _dead_backlog(self) -> bool:
        return any(tx_id[1] not in self.live for tx_id in self.stored)

    def _replay_stored(self, tx_id: tuple) -> None:
        """Adopt a dead coordinator's pending commit and drive it home."""
        msg = self.stored[tx_id]
        followers = (set(msg.followers) & set(self.live)) - {self.id}
        self.net.count("tx_replays")
        self.replay_tx[tx_id] = PendingTx(tx_id, msg.objects,
                                          frozenset(followers), set(followers),
                                          True)
        replay = RInv(tx_id, tuple(sorted(followers)), msg.objects, True)
        for f in sorted(followers):
            self.net.send(f, replay, self.epoch)
        if not followers:
            self._finish_replay(tx_id)
        else:
            self.net.timer(self.own_timeout, ("rc_retry", tx_id))

    def _finish_replay(self, tx_id: tuple) -> None:
        slot = self.replay_tx.pop(tx_id, None)
        if slot is None:
            return
        stored = self.stored.pop(tx_id, None)
        if stored is not None:
            for key, ver, _data in stored.objects:
                rec = self.replicas.get(key)
                if rec is not None and rec.t_version == ver:
                    rec.t_state = KeyState.VALID
        msg = RVal(tx_id)
        for f in sorted(slot.followers):
            self.net.send(f, msg, self.epoch)
        self._mark_completed(tx_id)
        if not self._dead_backlog():
            self._announce_recovery_done()

    def _announce_recovery_done(self) -> None:
        if not self.recovery_pending or self.id in self.recovery_done_from:
            return
        self.recovery_done_from.add(self.id)
        for p in self._peers():
            self.net.send(p, RecoveryDone(self.epoch), self.epoch)
        self._recovery_check()

    def _on_recovery_done(self, src: NodeId, msg: RecoveryDone) -> None:
        if msg.epoch != self.epoch or not self.recovery_pending:
            return
        if src not in self.recovery_done_from:
            self.recovery_done_from.add(src)
            if self.id in self.recovery_done_from:
                # echo, in case our announcement predated the peer's m-update
                self.net.send(src, RecoveryDone(self.epoch), self.epoch)
        self._recovery_check()

    def _recovery_check(self) -> None:
        if self.recovery_pending and set(self.live) <= self.recovery_done_from:
            self.recovery_pending = False
            for key in self.own.arb_replays_needed():
                self.own.arb_replay(key)

    # ------------------------------------------------------------- dispatch

    def on_message(self, src: NodeId, epoch: int, msg) -> None:
        if epoch != self.epoch and getattr(msg, "epoch_gated", True):
            self.net.count("drop_epoch")
            return
        if isinstance(msg, RInv):
            self._on_rinv(src, msg)
        elif isinstance(msg, RAck):
            self._on_rack(src, msg)
        elif isinstance(msg, RVal):
            self._on_rval(msg)
        elif isinstance(msg, RecoveryDone):
            self._on_recovery_done(src, msg)
        else:
            self.own.on_message(src, msg)

    def on_timer(self, token) -> None:
        kind = token[0]
        if kind == "tx_step":
            self._step_tx()
        elif kind == "rc_retry":
            self._rc_retry(token[1])
        elif kind == "own_timeout":
            self.own.on_timeout(token[1])
        elif kind == "demote":
            _, key, victim = token
            rec = self.own.rec(key)
            if (self.own.is_acting_owner(key)
                    and not self.own.has_active_req(key)
                    and rec is not None
                    and len(rec.o_replicas) > self.target_degree
                    and rec.o_replicas.get(victim) == zo.READER):
                self.own.acquire(key, zo.DEMOTE, lambda granted: None, victim=victim)
