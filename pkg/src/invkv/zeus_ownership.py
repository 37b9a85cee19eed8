"""Reliable dynamic sharding: object ownership and access levels migrate
atomically through a small replicated directory.

A requester sends REQ to one directory node (the driver, chosen round-robin),
which stamps the request with an ownership timestamp o_ts = (obj_ver+1,
driver id) and invalidates the remaining arbiters (the other directory nodes
plus the current owner).  Arbiters acknowledge straight to the requester;
once all acknowledgments arrive the requester applies the change first,
unblocks, and validates the arbiters.  Races between drivers are settled by
o_ts: an arbiter processes only strictly larger timestamps, so exactly one
contender can ever assemble the full acknowledgment set; losing drivers NACK
their requesters, who retry after exponential backoff.

After a membership change, arbiters stuck Invalid re-drive the same
invalidation (arb-replay) with acknowledgments redirected to the replaying
driver, so any combination of requester/driver/owner crashes unwinds to a
single agreed outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .types import Key, NodeId

OWNER = "owner"
READER = "reader"
DEMOTE = "demote"

BACKOFF_BASE = 2
BACKOFF_CAP = 64


class OwnState(Enum):
    VALID = "valid"
    INVALID = "invalid"
    REQUEST = "request"
    DRIVE = "drive"


@dataclass(slots=True)
class Req:
    req_id: tuple
    key: Key
    level: str                  # OWNER | READER | DEMOTE
    victim: NodeId = -1
    kind = "O_REQ"


@dataclass(slots=True)
class OInv:
    req_id: tuple
    key: Key
    o_ts: tuple
    new_replicas: dict
    requester: NodeId
    need_data: bool
    recovery: bool = False
    kind = "O_INV"


@dataclass(slots=True)
class OAck:
    req_id: tuple
    key: Key
    o_ts: tuple
    expected: Optional[tuple] = None    # driver's ack names the full arbiter set
    new_replicas: Optional[dict] = None
    data: Optional[tuple] = None        # (t_version, t_data) from the owner
    kind = "O_ACK"


@dataclass(slots=True)
class OVal:
    req_id: tuple
    key: Key
    o_ts: tuple
    kind = "O_VAL"
    epoch_gated = False   # guarded by o_ts matching instead


@dataclass(slots=True)
class ONack:
    req_id: tuple
    key: Key
    kind = "O_NACK"


@dataclass(slots=True)
class OResp:
    """Recovery only: the replaying driver confirms the win to the requester,
    which then applies first and validates, as in the fault-free path."""
    req_id: tuple
    key: Key
    o_ts: tuple
    new_replicas: dict
    kind = "O_RESP"


@dataclass(slots=True)
class Fetch:
    key: Key
    req_id: tuple
    kind = "O_FETCH"


@dataclass(slots=True)
class FetchReply:
    key: Key
    req_id: tuple
    version: int
    data: int
    kind = "O_FETCH_REPLY"


@dataclass(slots=True)
class PendingOwn:
    """Arbiter-side copy of an in-flight request."""
    req_id: tuple
    o_ts: tuple
    new_replicas: dict
    requester: NodeId
    need_data: bool


@dataclass(slots=True)
class ORec:
    """Ownership metadata: stored by directory nodes and the object's owner."""
    o_state: OwnState
    o_ts: tuple
    o_replicas: dict
    pending: Optional[PendingOwn] = None


@dataclass(slots=True)
class PendingReq:
    """Requester-side state for one acquire/demote round."""
    req_id: tuple
    key: Key
    level: str
    victim: NodeId
    cb: object
    acks: set = field(default_factory=set)
    expected: Optional[frozenset] = None
    o_ts: Optional[tuple] = None
    new_replicas: Optional[dict] = None
    data: Optional[tuple] = None
    rival_ts: Optional[tuple] = None   # highest contending o_ts seen here
    fetching: bool = False
    zombie: bool = False        # timed out; still honored if it wins later


class OwnershipManager:
    """Ownership-protocol half of a node; composed into ZeusNode.

    The host must expose: id, net, epoch, live, directory, replicas,
    own_timeout, plus the hooks owner_gained / owner_lost / owner_suspended /
    replica_granted / victim_invalidate / victim_drop / maybe_demote /
    ownership_blocked / ownership_blocked_at_owner.
    """

    def __init__(self, host):
        self.host = host
        self.records: dict[Key, ORec] = {}
        self.pending_reqs: dict[tuple, PendingReq] = {}
        self.recovery_drives: dict[tuple, dict] = {}
        self._req_seq = 0
        self._rr = host.id  # stagger the round-robin start across nodes
        self.backoff: dict[Key, int] = {}

    # ------------------------------------------------------------ helpers

    def rec(self, key: Key) -> Optional[ORec]:
        return self.records.get(key)

    def is_acting_owner(self, key: Key) -> bool:
        r = self.records.get(key)
        return (r is not None and r.o_state is OwnState.VALID
                and r.o_replicas.get(self.host.id) == OWNER)

    def owner_of(self, key: Key) -> Optional[NodeId]:
        r = self.records.get(key)
        if r is None:
            return None
        for node, level in r.o_replicas.items():
            if level == OWNER:
                return node
        return None

    def has_active_req(self, key: Key) -> bool:
        return any(pr.key == key and not pr.zombie
                   for pr in self.pending_reqs.values())

    def _arbiters(self, key: Key) -> set:
        """Directory nodes plus every member of the settled and pending
        replica maps, restricted to live nodes.  The acting owner is always a
        member of one of the two maps (migration plans never shrink the
        membership, and demotes complete before the set can thin out), so an
        invalidation provably reaches whoever currently holds write rights,
        even when a dropped validation left the settled map stale."""
        arbs = set(self.host.directory)
        rec = self.records.get(key)
        if rec is not None:
            arbs |= set(rec.o_replicas)
            if rec.pending is not None:
                arbs |= set(rec.pending.new_replicas)
        return arbs & set(self.host.live)

    def _send(self, dst: NodeId, msg) -> None:
        self.host.net.send(dst, msg, self.host.epoch)

    # ------------------------------------------------------ requester side

    def acquire(self, key: Key, level: str, on_done, victim: NodeId = -1) -> bool:
        """Start an acquire/demote round; ``on_done(granted)`` fires when it
        settles.  Returns False if a round for the key is already running."""
        if self.has_active_req(key):
            return False
        self._req_seq += 1
        req_id = (self.host.id, self._req_seq)
        self.pending_reqs[req_id] = PendingReq(req_id, key, level, victim, on_done)
        rec = self.records.get(key)
        if rec is not None and rec.o_state is OwnState.VALID:
            rec.o_state = OwnState.REQUEST
        if self.host.id in self.host.directory:
            driver = self.host.id  # co-located: drive the request ourselves
        else:
            driver = self.host.directory[self._rr % len(self.host.directory)]
            self._rr += 1
        req = Req(req_id, key, level, victim)
        if driver == self.host.id:
            self._drive(self.host.id, req)
        else:
            self._send(driver, req)
        self.host.net.timer(self.host.own_timeout, ("own_timeout", req_id))
        self.host.net.count("own_requests")
        return True

    def _settle(self, pr: PendingReq, granted: bool) -> None:
        self.pending_reqs.pop(pr.req_id, None)
        rec = self.records.get(pr.key)
        if rec is not None and rec.o_state is OwnState.REQUEST:
            rec.o_state = OwnState.VALID
        if not pr.zombie and pr.cb is not None:
            pr.cb(granted)

    def on_timeout(self, req_id: tuple) -> None:
        pr = self.pending_reqs.get(req_id)
        if pr is None or pr.zombie:
            return
        # keep the entry: if the arbitration later declares this request the
        # winner, it must still be applied and validated or the arbiters
        # would wait forever
        pr.zombie = True
        self.host.net.count("own_timeouts")
        if pr.cb is not None:
            pr.cb(False)

    def next_backoff(self, key: Key, rng) -> int:
        cur = self.backoff.get(key, BACKOFF_BASE)
        self.backoff[key] = min(cur * 2, BACKOFF_CAP)
        return cur + (rng.randint(0, 1) if rng is not None else 0)

    def clear_backoff(self, key: Key) -> None:
        self.backoff.pop(key, None)

    def _on_nack(self, msg: ONack) -> None:
        pr = self.pending_reqs.get(msg.req_id)
        if pr is not None:
            self._settle(pr, False)

    def _on_ack(self, src: NodeId, msg: OAck) -> None:
        pr = self.pending_reqs.get(msg.req_id)
        if pr is None:
            return
        pr.acks.add(src)
        if msg.expected is not None:
            pr.expected = frozenset(msg.expected)
            pr.o_ts = msg.o_ts
            pr.new_replicas = dict(msg.new_replicas)
        if msg.data is not None:
            pr.data = msg.data
        self._maybe_complete(pr)

    def _on_resp(self, msg: OResp) -> None:
        pr = self.pending_reqs.get(msg.req_id)
        if pr is None:
            return
        pr.o_ts = msg.o_ts
        pr.new_replicas = dict(msg.new_replicas)
        pr.expected = frozenset()
        pr.acks = set()
        self._maybe_complete(pr)

    def _maybe_complete(self, pr: PendingReq) -> None:
        if pr.expected is None or not pr.expected <= pr.acks:
            return
        needs_data = (pr.level in (OWNER, READER)
                      and pr.key not in self.host.replicas)
        if needs_data and pr.data is None:
            if not pr.fetching:
                pr.fetching = True
                src = self._data_source(pr)
                if src is None:
                    self._settle(pr, False)
                    return
                self._send(src, Fetch(pr.key, pr.req_id))
            return
        self._apply_request(pr)

    def _data_source(self, pr: PendingReq) -> Optional[NodeId]:
        for node in sorted(pr.new_replicas):
            if node != self.host.id and node in self.host.live:
                return node
        return None

    def _on_fetch(self, src: NodeId, msg: Fetch) -> None:
        t = self.host.replicas.get(msg.key)
        if t is not None:
            self._send(src, FetchReply(msg.key, msg.req_id, t.t_version, t.t_data))

    def _on_fetch_reply(self, msg: FetchReply) -> None:
        pr = self.pending_reqs.get(msg.req_id)
        if pr is None:
            return
        pr.data = (msg.version, msg.data)
        self._apply_request(pr)

    def _apply_request(self, pr: PendingReq) -> None:
        """All votes in: the requester applies first, then validates."""
        host = self.host
        rec = self.records.get(pr.key)
        beaten = (pr.rival_ts is not None and tuple(pr.rival_ts) > tuple(pr.o_ts)) or (
            rec is not None and tuple(rec.o_ts) > tuple(pr.o_ts))
        if beaten:
            # a contending request with a higher timestamp has overridden the
            # arbiters; this round is void even though its votes arrived
            host.net.count("own_apply_beaten")
            self._settle(pr, False)
            return
        new_replicas = {n: l for n, l in pr.new_replicas.items() if n in host.live}
        if pr.level == OWNER:
            self.records[pr.key] = ORec(OwnState.VALID, pr.o_ts, new_replicas)
            host.owner_gained(pr.key, pr.data)
            host.maybe_demote(pr.key, new_replicas)
        else:
            if rec is not None:
                rec.o_state = OwnState.VALID
                rec.o_ts = pr.o_ts
                rec.o_replicas = new_replicas
                rec.pending = None
            if pr.level == READER:
                host.replica_granted(pr.key, pr.data)
        host.net.apply_note(pr.key, ("own",) + tuple(pr.o_ts), None)
        targets = set(host.directory) | set(new_replicas)
        if pr.victim >= 0:
            targets.add(pr.victim)
        val = OVal(pr.req_id, pr.key, pr.o_ts)
        for dst in sorted(targets & set(host.live) - {host.id}):
            self._send(dst, val)
        self.clear_backoff(pr.key)
        self._settle(pr, True)

    # --------------------------------------------------------- driver side

    def _drive(self, src: NodeId, msg: Req) -> None:
        host = self.host
        requester = msg.req_id[0]
        rec = self.records.get(msg.key)
        if rec is None or host.ownership_blocked(msg.key):
            self._nack(requester, msg.req_id, msg.key, "own_nack_recovery")
            return
        if rec.o_state is OwnState.DRIVE:
            self._nack(requester, msg.req_id, msg.key, "own_nack_busy")
            return
        if (self.is_acting_owner(msg.key) and requester != host.id
                and host.ownership_blocked_at_owner(msg.key)):
            # driving a migration away from ourselves mid-transaction would
            # bypass the owner-side refusal
            self._nack(requester, msg.req_id, msg.key, "own_nack_pending_tx")
            return
        base = rec.pending.new_replicas if rec.pending is not None else rec.o_replicas
        new_replicas = self._plan(rec, requester, msg.level, msg.victim)
        if new_replicas is None:
            self._nack(requester, msg.req_id, msg.key, "own_nack_plan")
            return
        if host.id in base and host.id not in new_replicas:
            host.victim_invalidate(msg.key)  # driving our own demotion
        o_ts = (rec.o_ts[0] + 1, host.id)
        if msg.level == OWNER:
            need_data = base.get(requester) != OWNER
        else:
            need_data = msg.level == READER and requester not in base
        arbs = self._arbiters(msg.key)
        if msg.victim >= 0:
            arbs |= {msg.victim} & set(host.live)
        expected = tuple(sorted(arbs - {requester}))
        rec.o_state = OwnState.DRIVE
        rec.o_ts = o_ts
        rec.pending = PendingOwn(msg.req_id, o_ts, dict(new_replicas), requester, need_data)
        inv = OInv(msg.req_id, msg.key, o_ts, new_replicas, requester, need_data)
        for arb in sorted(arbs):
            if arb not in (host.id, requester):
                self._send(arb, inv)
        # the driver's own arbitration vote goes straight to the requester,
        # carrying the expected voter set (and the data, when the driver is
        # itself the acting owner)
        data = None
        if need_data and self.is_acting_owner(msg.key):
            t = host.replicas.get(msg.key)
            if t is not None:
                data = (t.t_version, t.t_data)
        ack = OAck(msg.req_id, msg.key, o_ts, expected=expected,
                   new_replicas=new_replicas, data=data)
        if requester == host.id:
            self._on_ack(host.id, ack)
        else:
            self._send(requester, ack)

    def _nack(self, requester: NodeId, req_id: tuple, key: Key, counter: str) -> None:
        self.host.net.count(counter)
        nack = ONack(req_id, key)
        if requester == self.host.id:
            self._on_nack(nack)
        else:
            self._send(requester, nack)

    def _plan(self, rec: ORec, requester: NodeId, level: str, victim: NodeId):
        """Replica map the request installs, or None if it makes no sense.
        A pending request's map, when one is held, is the baseline: if that
        request wins, this one must build on its outcome."""
        new = dict(rec.pending.new_replicas if rec.pending is not None
                   else rec.o_replicas)
        if level == OWNER:
            for n, l in list(new.items()):
                if l == OWNER:
                    new[n] = READER
            new[requester] = OWNER
        elif level == READER:
            new.setdefault(requester, READER)
        elif level == DEMOTE:
            if new.get(victim) != READER:
                return None
            del new[victim]
        return new

    # -------------------------------------------------------- arbiter side

    def _on_oinv(self, src: NodeId, msg: OInv) -> None:
        host = self.host
        rec = self.records.get(msg.key)
        reply_to = src if msg.recovery else msg.requester
        if rec is None:
            # prospective owner of a contending request: note the rival so a
            # stale win cannot be applied later
            for pr in self.pending_reqs.values():
                if pr.key == msg.key and (pr.rival_ts is None
                                          or tuple(msg.o_ts) > tuple(pr.rival_ts)):
                    pr.rival_ts = msg.o_ts
            if host.id not in msg.new_replicas and host.id != msg.requester:
                host.victim_invalidate(msg.key)  # named as the reader to shed
            self._ack(reply_to, msg)
            return
        if rec.pending is not None and msg.o_ts == rec.o_ts:
            self._ack(reply_to, msg)  # replay of a request already held
            return
        if msg.o_ts <= rec.o_ts:
            return  # only strictly larger timestamps proceed
        if (self.owner_of(msg.key) == host.id
                and (msg.new_replicas.get(host.id) != OWNER or msg.need_data)
                and host.ownership_blocked_at_owner(msg.key)):
            # ownership or data would move while the object is involved in a
            # pending transaction: refuse without applying.  Demotes keep the
            # owner and carry no data, so they pass.
            self._nack(msg.requester, msg.req_id, msg.key, "own_nack_pending_tx")
            return
        if rec.o_state is OwnState.DRIVE and rec.pending is not None:
            loser = rec.pending
            if loser.requester != msg.requester:
                host.net.count("own_drive_lost")
                self._nack(loser.requester, loser.req_id, msg.key, "own_nack_lost")
        was_owner = self.is_acting_owner(msg.key)
        if (host.id in rec.o_replicas and host.id not in msg.new_replicas):
            host.victim_invalidate(msg.key)
        rec.o_state = OwnState.INVALID
        rec.o_ts = msg.o_ts
        rec.pending = PendingOwn(msg.req_id, msg.o_ts, dict(msg.new_replicas),
                                 msg.requester, msg.need_data)
        if was_owner:
            host.owner_suspended(msg.key)
        self._ack(reply_to, msg, with_data=was_owner and msg.need_data)

    def _ack(self, dst: NodeId, msg: OInv, with_data: bool = False) -> None:
        data = None
        if with_data:
            t = self.host.replicas.get(msg.key)
            if t is not None:
                data = (t.t_version, t.t_data)
        ack = OAck(msg.req_id, msg.key, msg.o_ts, data=data)
        if dst == self.host.id:
            self._dispatch_ack(self.host.id, ack)
        else:
            self._send(dst, ack)

    def _on_oval(self, msg: OVal) -> None:
        host = self.host
        rec = self.records.get(msg.key)
        if rec is None:
            return  # plain replicas keep no ownership metadata; nothing to do
        pend = rec.pending
        if pend is None or pend.o_ts != msg.o_ts:
            return  # stale or duplicate validation
        new_replicas = {n: l for n, l in pend.new_replicas.items() if n in host.live}
        lost_ownership = (rec.o_replicas.get(host.id) == OWNER
                          and new_replicas.get(host.id) != OWNER)
        rec.o_replicas = new_replicas
        rec.o_ts = pend.o_ts
        rec.o_state = OwnState.VALID
        rec.pending = None
        if host.id not in new_replicas:
            host.victim_invalidate(msg.key)  # shed the data copy, keep the record
        if lost_ownership:
            host.owner_lost(msg.key)
        if host.id not in host.directory and new_replicas.get(host.id) != OWNER:
            # readers keep no ownership metadata
            del self.records[msg.key]
            return
        if new_replicas.get(host.id) == OWNER:
            host.maybe_demote(msg.key, new_replicas)

    # ------------------------------------------------------------- recovery

    def strip_dead(self) -> None:
        """Drop non-live nodes from settled replica maps after an m-update."""
        for rec in self.records.values():
            if rec.o_state in (OwnState.VALID, OwnState.REQUEST):
                rec.o_replicas = {n: l for n, l in rec.o_replicas.items()
                                  if n in self.host.live}

    def arb_replays_needed(self) -> list:
        return sorted(key for key, rec in self.records.items()
                      if rec.pending is not None
                      and rec.o_state in (OwnState.INVALID, OwnState.DRIVE))

    def arb_replay(self, key: Key) -> None:
        """Re-drive a blocked arbitration among the live arbiters, collecting
        the acknowledgments here, as the recovery driver."""
        host = self.host
        rec = self.records.get(key)
        if rec is None or rec.pending is None:
            return
        pend = rec.pending
        host.net.count("arb_replays")
        arbs = (self._arbiters(key) - {host.id}) - {pend.requester}
        self.recovery_drives[(key, pend.o_ts)] = {
            "acks": set(), "expected": frozenset(arbs)}
        inv = OInv(pend.req_id, key, pend.o_ts, pend.new_replicas,
                   pend.requester, pend.need_data, recovery=True)
        for arb in sorted(arbs):
            self._send(arb, inv)
        if not arbs:
            self._finish_replay(key, pend)

    def _dispatch_ack(self, src: NodeId, msg: OAck) -> None:
        slot = self.recovery_drives.get((msg.key, msg.o_ts))
        if slot is None:
            self._on_ack(src, msg)
            return
        slot["acks"].add(src)
        if slot["expected"] <= slot["acks"]:
            del self.recovery_drives[(msg.key, msg.o_ts)]
            rec = self.records.get(msg.key)
            if rec is not None and rec.pending is not None and rec.pending.o_ts == msg.o_ts:
                self._finish_replay(msg.key, rec.pending)

    def _finish_replay(self, key: Key, pend: PendingOwn) -> None:
        host = self.host
        if pend.requester in host.live:
            self._send(pend.requester,
                       OResp(pend.req_id, key, pend.o_ts, pend.new_replicas))
        else:
            # requester died: validate the live arbiters directly
            val = OVal(pend.req_id, key, pend.o_ts)
            for arb in sorted(self._arbiters(key) - {host.id}):
                self._send(arb, val)
            self._on_oval(val)

    # ------------------------------------------------------------ dispatch

    def on_message(self, src: NodeId, msg) -> bool:
        if isinstance(msg, Req):
            self._drive(src, msg)
        elif isinstance(msg, OInv):
            self._on_oinv(src, msg)
        elif isinstance(msg, OAck):
            self._dispatch_ack(src, msg)
        elif isinstance(msg, OVal):
            self._on_oval(msg)
        elif isinstance(msg, ONack):
            self._on_nack(msg)
        elif isinstance(msg, OResp):
            self._on_resp(msg)
        elif isinstance(msg, Fetch):
            self._on_fetch(src, msg)
        elif isinstance(msg, FetchReply):
            self._on_fetch_reply(msg)
        else:
            return False
        return True
