"""Experiment runner: wires workload, protocol nodes, membership, faults,
history recording, and the consistency checkers into one deterministic run.

Sessions are closed-loop: each issues its next operation one tick after the
previous one finished, and an operation that cannot start (key not readable,
node not operational) is retried with a small backoff.  Every invocation and
response lands in the history that the checkers consume; operations still
open when the run ends stay pending and are closed by the checker in the
standard may-or-may-not-have-happened way.  A run ends when the event heap
drains or the tick horizon is hit; whatever is still stalled must then be
attributable to a crash, a lost partition, or irrecoverable loss on a
non-fault-tolerant protocol, and anything unexplained raises a liveness
alarm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import cache as cache_mod
from . import checker as chk
from .config import RunConfig, config_to_text
from .galene import GaleneNode, STALL
from .hermes import HermesNode
from .membership import MembershipService, MinoritySide
from .rng import Rng
from .simnet import FaultEvent, FaultKind, SimConfig, Simulator, WorkloadSpec
from .types import KeyState
from .zeus_commit import TxSpec, ZeusNode
from .zipf import ZipfSampler

RETRY_CAP = 64


@dataclass
class RunReport:
    protocol: str
    seed: int
    config_text: str
    ticks: int = 0
    events: int = 0
    ops: dict = field(default_factory=dict)
    msg_count: dict = field(default_factory=dict)
    msg_bytes: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    rtt_hist: dict = field(default_factory=dict)
    hit_ratio: float | None = None
    stalls: dict = field(default_factory=dict)
    alarms: list = field(default_factory=list)
    verdict: str = "skipped"
    violation: str = ""
    trace_hash: str = ""

    @property
    def ok(self) -> bool:
        return self.verdict in ("ok", "skipped") and not self.alarms

    def to_text(self) -> str:
        lines = [f"protocol {self.protocol}", f"seed {self.seed}",
                 f"ticks {self.ticks}", f"events {self.events}",
                 f"verdict {self.verdict}"]
        if self.violation:
            lines.append(f"violation {self.violation}")
        for name in sorted(self.ops):
            lines.append(f"op {name} {self.ops[name]}")
        for kind in sorted(self.msg_count):
            lines.append(f"msg {kind} {self.msg_count[kind]} {self.msg_bytes.get(kind, 0)}")
        for name in sorted(self.counters):
            lines.append(f"counter {name} {self.counters[name]}")
        if self.hit_ratio is not None:
            lines.append(f"hit_ratio {self.hit_ratio:.6f}")
        for rtt in sorted(self.rtt_hist):
            lines.append(f"rtt {rtt} {self.rtt_hist[rtt]}")
        for why in sorted(self.stalls):
            lines.append(f"stall {why} {self.stalls[why]}")
        for alarm in self.alarms:
            lines.append(f"alarm {alarm}")
        lines.append(f"trace {self.trace_hash}")
        return "\n".join(lines) + "\n"


@dataclass(slots=True)
class Ticket:
    session: "Session"
    op: str
    key: object
    value: object = None
    invoke: int = 0
    op_id: int = 0
    advanced: bool = False
    submitted: bool = False
    done: bool = False


@dataclass
class Session:
    sid: int
    node: int
    ops_left: int
    rng: Rng
    ticket: Ticket | None = None
    retry_delay: int = 1
    dead: bool = False


def _op_value(counter: list) -> int:
    counter[0] += 1
    return counter[0]


class Controller:
    """Glues the simulator to sessions, membership, and the history."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        root = Rng(cfg.seed)
        self.rng_membership = root.stream("membership")
        wl = WorkloadSpec(distribution=cfg.distribution, zipf_alpha=cfg.zipf_alpha,
                          write_ratio=cfg.write_ratio, rmw_ratio=cfg.rmw_ratio,
                          key_space=cfg.key_space, ops_per_node=cfg.ops_per_node,
                          sessions_per_node=cfg.sessions_per_node,
                          value_size=cfg.value_size)
        sim_cfg = SimConfig(seed=cfg.seed, nodes=cfg.nodes,
                            min_delay=cfg.min_delay, max_delay=cfg.max_delay,
                            drop_prob=cfg.drop_prob, dup_prob=cfg.dup_prob,
                            faults=list(cfg.faults), workload=wl,
                            max_events=cfg.max_events,
                            hold_partition=cfg.protocol == "zeus")
        self.sim = Simulator(sim_cfg, self)
        self.sim.size_table = build_size_table(cfg)
        self.events: list[chk.HistoryEvent] = []
        self.open_tickets: dict[int, Ticket] = {}
        self._op_ids = 0
        self.value_counter = [0]
        self.alarms: list[str] = []
        self.rtt_hist: dict[int, int] = {}
        self.op_counts: dict[str, int] = {}
        self.committed_txs: list = []
        self.partition_sides = None
        self.has_membership = cfg.protocol in ("hermes", "zeus")
        self.service = MembershipService(cfg.nodes, cfg.lease_duration_ticks,
                                         cfg.renewal_period_ticks)
        self.view_epoch = {n: 0 for n in range(cfg.nodes)}
        self.partition_suspects: set = set()
        self.check_scheduled = False
        self._build_nodes(cfg)
        self._build_sessions(cfg, root)

    # ------------------------------------------------------------- build

    def _build_nodes(self, cfg: RunConfig) -> None:
        self.nodes = {}
        mlt = cfg.hermes_mlt_factor * cfg.max_delay
        if cfg.protocol == "hermes":
            for n in range(cfg.nodes):
                node = HermesNode(
                    n, cfg.nodes, self.sim.net(n),
                    o1_fairness=cfg.hermes_o1_fairness,
                    o2_skip_val=cfg.hermes_o2_skip_val,
                    o3_bcast_acks=cfg.hermes_o3_bcast_acks,
                    async_reads=cfg.hermes_async_reads,
                    mlt_ticks=mlt, mutation=cfg.mutation)
                self.nodes[n] = node
                self.sim.attach(n, node)
        elif cfg.protocol == "galene":
            peers = list(range(cfg.nodes))
            for n in range(cfg.nodes):
                node = GaleneNode(
                    n, peers, self.sim.net(n),
                    read_own_write=cfg.galene_read_own_write,
                    suppress_superseded_upd=cfg.galene_suppress_superseded_upd,
                    fair_ids=cfg.hermes_o1_fairness, mutation=cfg.mutation)
                self.nodes[n] = node
                self.sim.attach(n, node)
        elif cfg.protocol == "cache":
            pool = cache_mod.CacheConfig(cfg.nodes, cfg.key_space, cfg.cache_fraction)
            salt = Rng(cfg.seed).stream("shard").next_u64()
            for n in range(cfg.nodes):
                node = cache_mod.CachePoolNode(
                    n, pool, self.sim.net(n), shard_salt=salt,
                    read_own_write=cfg.galene_read_own_write,
                    suppress_superseded_upd=cfg.galene_suppress_superseded_upd)
                self.nodes[n] = node
                self.sim.attach(n, node)
            self.pool_cfg = pool
        else:  # zeus
            directory = list(range(min(3, cfg.nodes)))
            root = Rng(cfg.seed)
            for n in range(cfg.nodes):
                node = ZeusNode(
                    n, cfg.nodes, self.sim.net(n), directory=directory,
                    own_timeout=8 * cfg.max_delay,
                    replication_degree=cfg.zeus_replication_degree,
                    backoff_rng=root.stream(f"backoff-{n}"),
                    mutation=cfg.mutation)
                self.nodes[n] = node
                self.sim.attach(n, node)
            self._place_zeus_objects(cfg, directory)
        if cfg.protocol in ("galene", "hermes"):
            self.zipf = None
            if cfg.distribution == "zipfian":
                self.zipf = ZipfSampler(cfg.zipf_alpha, cfg.keys)
        elif cfg.protocol == "cache":
            self.zipf = (ZipfSampler(cfg.zipf_alpha, cfg.key_space)
                         if cfg.distribution == "zipfian" else None)

    def _place_zeus_objects(self, cfg: RunConfig, directory: list) -> None:
        from .zeus_commit import TRec
        from .zeus_ownership import ORec, OwnState, OWNER, READER
        degree = min(cfg.zeus_replication_degree, cfg.nodes)
        self.groups = []
        for g in range(cfg.keys):
            home = g % cfg.nodes
            keys = tuple(range(g * cfg.zeus_tx_group_size,
                               (g + 1) * cfg.zeus_tx_group_size))
            replicas = {(home + i) % cfg.nodes: (OWNER if i == 0 else READER)
                        for i in range(degree)}
            self.groups.append((keys, home))
            for key in keys:
                for n, level in replicas.items():
                    self.nodes[n].replicas[key] = TRec()
                for d in set(directory) | {home}:
                    self.nodes[d].own.records[key] = ORec(
                        OwnState.VALID, (1, home), dict(replicas))
                self.nodes[home].net.note("owner_on", key=key)

    def _build_sessions(self, cfg: RunConfig, root: Rng) -> None:
        self.sessions = []
        for n in range(cfg.nodes):
            for s in range(cfg.sessions_per_node):
                rng = root.stream(f"workload-{n}-{s}")
                self.sessions.append(Session(len(self.sessions), n,
                                             cfg.ops_per_node, rng))

    # ------------------------------------------------------------ running

    def run(self, max_ticks: int = 200_000) -> RunReport:
        cfg = self.cfg
        for i, _sess in enumerate(self.sessions):
            self.sim.schedule(0, ("sess", i))
        if self.has_membership:
            self.sim.schedule(cfg.renewal_period_ticks, ("renew",))
        while self.sim._heap and self.sim.now <= max_ticks:
            if self.sim.events_processed >= cfg.max_events:
                self.alarms.append("event_budget_exhausted")
                break
            self.sim.step()
        return self._report()

    # ------------------------------------------------------- op generation

    def _next_op(self, sess: Session) -> Ticket:
        cfg = self.cfg
        rng = sess.rng
        if cfg.protocol == "zeus":
            return self._next_tx(sess)
        r = rng.random()
        if r < cfg.write_ratio:
            kind = "write"
        elif r < cfg.write_ratio + cfg.rmw_ratio:
            kind = "rmw"
        else:
            kind = "read"
        if cfg.protocol in ("galene", "hermes"):
            space = cfg.keys
        else:
            space = cfg.key_space
        key = self.zipf.sample(rng) if self.zipf is not None else rng.randint(1, space)
        value = _op_value(self.value_counter) if kind != "read" else None
        return Ticket(sess, kind, key, value)

    def _next_tx(self, sess: Session) -> Ticket:
        cfg = self.cfg
        rng = sess.rng
        remote = rng.random() < cfg.zeus_ownership_change_fraction
        candidates = [g for g, (_keys, home) in enumerate(self.groups)
                      if (home != sess.node) == remote]
        if not candidates:
            candidates = list(range(len(self.groups)))
        gid = rng.choice(candidates)
        keys = self.groups[gid][0]
        if rng.random() < cfg.zeus_read_tx_fraction:
            return Ticket(sess, "rotx", keys, None)
        writes = {k: _op_value(self.value_counter) for k in keys}
        return Ticket(sess, "tx", keys, writes)

    # ----------------------------------------------------------- dispatch

    def operational(self, node: int) -> bool:
        if not self.has_membership:
            return node not in self.sim.crashed
        return (self.service.is_operational(node, self.sim.now)
                and node in self.nodes[node].live
                and self.view_epoch[node] == self.service.current.epoch)

    def _issue(self, sess: Session) -> None:
        if sess.dead or sess.node in self.sim.crashed:
            sess.dead = True
            return
        t = sess.ticket
        fresh = t is None
        if fresh:
            if sess.ops_left <= 0:
                return
            sess.ops_left -= 1
            t = self._next_op(sess)
            t.invoke = self.sim.now
            sess.ticket = t
            self._record_invoke(t)
        if t.submitted:
            return  # the node already owns this operation
        if not self.operational(sess.node):
            self._retry(sess)
            return
        node = self.nodes[sess.node]
        if self.cfg.protocol == "zeus":
            if t.op == "rotx":
                spec = TxSpec(reads=t.key, writes={})
            else:
                spec = TxSpec(reads=t.key, writes=dict(t.value))
            t.submitted = True
            node.submit_tx(spec, t)
            return
        if self.cfg.protocol == "cache":
            res = node.client_op("write" if t.op == "write" else "read",
                                 t.key, t.value or 0, t)
        elif t.op == "read":
            res = node.read(t.key, t)
        elif t.op == "write":
            res = node.write(t.key, t.value, t)
        else:
            res = node.rmw(t.key, t.value, t)
        if res == STALL:
            self._retry(sess)
        else:
            t.submitted = True
            sess.retry_delay = 1

    def _retry(self, sess: Session) -> None:
        self.sim.schedule(sess.retry_delay, ("sess", sess.sid))
        sess.retry_delay = min(sess.retry_delay * 2, RETRY_CAP)

    def _record_invoke(self, t: Ticket) -> None:
        self.open_tickets[id(t)] = t
        self._op_ids += 1
        t.op_id = self._op_ids
        self.events.append(chk.HistoryEvent(
            t.session.sid, "invoke", t.op, t.key, t.value, t.invoke,
            op_id=t.op_id))

    def _advance(self, sess: Session) -> None:
        sess.ticket = None
        sess.retry_delay = 1
        if sess.ops_left > 0 and not sess.dead:
            self.sim.schedule(1, ("sess", sess.sid))

    # -------------------------------------------------- simulator callbacks

    def on_control(self, token, data, now) -> None:
        kind = token[0] if isinstance(token, tuple) else token
        if kind == "sess":
            self._issue(self.sessions[token[1]])
        elif kind == "renew":
            self._renew(now)
        elif kind == "reconfig":
            self._reconfigure(now)
        elif kind == "mupdate":
            self._deliver_mupdate(token[1], now)

    def on_complete(self, ticket: Ticket, now: int, **res) -> None:
        if ticket.done:
            return
        ticket.done = True
        self.open_tickets.pop(id(ticket), None)
        sess = ticket.session
        committed = res.get("committed", True)
        ts = res.get("ts")
        cap = res.get("captured")
        op = ticket.op
        if op in ("tx", "rotx"):
            value = res.get("reads", {})
            self.events.append(chk.HistoryEvent(
                sess.sid, "respond", op, ticket.key, value, now, committed,
                op_id=ticket.op_id))
            self.op_counts[op + ("_commit" if committed else "_abort")] = \
                self.op_counts.get(op + ("_commit" if committed else "_abort"), 0) + 1
            if committed and op == "tx":
                self.committed_txs.append(
                    (res.get("versions", {}), res.get("writes", {}), sess.node))
        elif op == "read":
            self.events.append(chk.HistoryEvent(
                sess.sid, "respond", "read", ticket.key, res.get("value"), now,
                True, ts=ts, capture=cap, op_id=ticket.op_id))
            self.op_counts["read"] = self.op_counts.get("read", 0) + 1
        elif op == "write":
            self.events.append(chk.HistoryEvent(
                sess.sid, "respond", "write", ticket.key, None, now, committed,
                ts=ts, op_id=ticket.op_id))
            self.op_counts["write"] = self.op_counts.get("write", 0) + 1
        else:  # rmw
            self.events.append(chk.HistoryEvent(
                sess.sid, "respond", "rmw", ticket.key, res.get("old_value"),
                now, committed, ts=ts, op_id=ticket.op_id))
            name = "rmw_commit" if committed else "rmw_abort"
            self.op_counts[name] = self.op_counts.get(name, 0) + 1
        if "rtt" in res and committed:
            self.rtt_hist[res["rtt"]] = self.rtt_hist.get(res["rtt"], 0) + 1
        if not ticket.advanced:
            ticket.advanced = True
            self._advance(sess)

    def on_progress(self, ticket: Ticket, now: int, stage: str, **info) -> None:
        if stage == "local_commit" and not ticket.advanced:
            ticket.advanced = True
            self._advance(ticket.session)

    def on_fault(self, fault: FaultEvent, now: int) -> None:
        if fault.kind is FaultKind.CRASH:
            for n in fault.nodes:
                self.service.crashed.add(n)
            if self.has_membership:
                self.service.suspect(set(fault.nodes), now)
                self._schedule_check()
        elif fault.kind is FaultKind.PARTITION:
            side = frozenset(fault.nodes)
            rest = frozenset(range(self.cfg.nodes)) - side
            self.partition_sides = (side, rest)
            if self.has_membership:
                live = self.service.current.live
                quorum = len(live) // 2 + 1
                minority = None
                if len(side & live) >= quorum:
                    minority = rest & live
                elif len(rest & live) >= quorum:
                    minority = side & live
                if minority:
                    self.partition_suspects |= set(minority)
                    self.service.suspect(set(minority), now)
                    self._schedule_check()
        elif fault.kind is FaultKind.HEAL:
            self.partition_sides = None
            if (self.has_membership and self.service.pending is not None
                    and self.partition_suspects):
                keep = self.service.pending.suspected - self.partition_suspects
                self.partition_suspects = set()
                if keep:
                    self.service.pending.suspected = keep
                else:
                    self.service.withdraw()

    def _schedule_check(self) -> None:
        at = max(self.service.ready_at() - self.sim.now, 0)
        self.sim.schedule(at, ("reconfig",))

    def _work_remaining(self) -> bool:
        return bool(self.open_tickets) or any(
            s.ops_left > 0 and not s.dead for s in self.sessions)

    def _renew(self, now: int) -> None:
        if not self._work_remaining():
            return  # let the run drain; leases only gate client operations
        unreachable = {n for n in range(self.cfg.nodes)
                       if self.view_epoch[n] != self.service.current.epoch}
        if self.partition_sides is not None:
            live = self.service.current.live
            quorum = len(live) // 2 + 1
            majority_side = None
            for side in self.partition_sides:
                if len(side & live) >= quorum:
                    majority_side = side
            if majority_side is None:
                unreachable = set(range(self.cfg.nodes))
            else:
                unreachable |= set(range(self.cfg.nodes)) - set(majority_side)
        self.service.renew_leases(now, unreachable)
        self.sim.schedule(self.cfg.renewal_period_ticks, ("renew",))

    def _reconfigure(self, now: int) -> None:
        try:
            m = self.service.reconfigure(now)
        except MinoritySide:
            self.alarms.append("no_primary_partition")
            return
        if m is None:
            if self.service.pending is not None:
                self._schedule_check()
            return
        for n in sorted(m.live):
            delay = self.rng_membership.randint(self.cfg.min_delay,
                                                self.cfg.max_delay)
            self.sim.schedule(delay, ("mupdate", n))

    def _deliver_mupdate(self, node: int, now: int) -> None:
        if node in self.sim.crashed:
            return
        cur = self.service.current
        if self.view_epoch[node] >= cur.epoch or node not in cur.live:
            return
        self.view_epoch[node] = cur.epoch
        cur.lease_expiry[node] = now + cur.lease_duration
        self.nodes[node].on_membership(cur.epoch, cur.live)
        # wake the node's sessions: they may have been gated on the old view
        for sess in self.sessions:
            if sess.node == node and sess.ticket is not None:
                self.sim.schedule(1, ("sess", sess.sid))

    # ------------------------------------------------------------- report

    def _attribute_stalls(self) -> dict:
        out: dict[str, int] = {}
        for t in self.open_tickets.values():
            sess = t.session
            n = sess.node
            if n in self.sim.crashed:
                why = "crashed_node"
            elif self.has_membership and n not in self.service.current.live:
                why = "partitioned"
            elif self.has_membership and "no_primary_partition" in self.alarms:
                why = "no_primary_partition"
            elif self.partition_sides is not None:
                why = "partitioned"
            elif (self.cfg.protocol in ("galene", "cache")
                  and (self.cfg.drop_prob > 0 or self.sim.crashed)):
                why = "lossy_links_unrecoverable"
            elif self.has_membership and self.sim.crashed:
                # a survivor can still be mid-recovery at the horizon
                why = "recovering_at_horizon"
            else:
                why = "UNEXPLAINED"
                self.alarms.append(
                    f"liveness: session {sess.sid} stuck on {t.op} key {t.key}")
            out[why] = out.get(why, 0) + 1
        return out

    def _report(self) -> RunReport:
        cfg = self.cfg
        rep = RunReport(cfg.protocol, cfg.seed, config_to_text(cfg))
        rep.ticks = self.sim.now
        rep.events = self.sim.events_processed
        rep.ops = dict(self.op_counts)
        rep.msg_count = dict(self.sim.msg_count)
        rep.msg_bytes = dict(self.sim.msg_bytes)
        rep.counters = dict(self.sim.op_counters)
        rep.rtt_hist = dict(self.rtt_hist)
        rep.stalls = self._attribute_stalls()
        if not self.sim.reconciles():
            self.alarms.append("message accounting does not reconcile")
        if cfg.protocol == "cache":
            hits = self.sim.op_counters.get("route_hit", 0)
            total = (hits + self.sim.op_counters.get("route_local", 0)
                     + self.sim.op_counters.get("route_remote", 0))
            rep.hit_ratio = hits / total if total else 0.0
            problems = cache_mod.cache_symmetry_violations(list(self.nodes.values()))
            for p in problems:
                self.alarms.append(f"cache symmetry: {p}")
        if cfg.check:
            verdict, detail = self.check_consistency()
            rep.verdict = verdict
            rep.violation = detail
        rep.alarms = list(self.alarms)
        rep.trace_hash = self.sim.trace_hash()
        return rep

    # ------------------------------------------------------------ checking

    def check_consistency(self):
        try:
            if self.cfg.protocol == "zeus":
                return self._check_serializable()
            return self._check_linearizable()
        except chk.SearchBudgetExceeded as e:
            return "budget_exceeded", str(e)

    def _paired_ops(self) -> list:
        return chk.pair_events(self.events)

    def _check_linearizable(self):
        ops = self._paired_ops()
        by_key: dict = {}
        for op in ops:
            by_key.setdefault(op.key, []).append(op)
        for key in sorted(by_key):
            res = chk.check_linearizable(by_key[key], initial=0)
            if isinstance(res, chk.Violation):
                return "violation", f"key {key}: {res.reason} ({len(res.ops)} ops)"
        return "ok", ""

    def _check_serializable(self):
        ops = self._paired_ops()
        # decompose into key-overlap components to keep the search small
        comps = _components(ops)
        for comp in comps:
            res = chk.check_strict_serializable(comp)
            if isinstance(res, chk.Violation):
                keys = sorted({k for op in comp for k in op.key})
                return "violation", f"keys {keys}: {res.reason} ({len(res.ops)} ops)"
        return "ok", ""


def _components(ops: list) -> list:
    """Group transactions into connected components by key overlap."""
    parent: dict = {}

    def find(x):
        while parent.get(x, x) != x:
            parent[x] = parent.get(parent[x], parent[x])
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for op in ops:
        keys = list(op.key)
        for k in keys[1:]:
            union(keys[0], k)
    comps: dict = {}
    for op in ops:
        root = find(op.key[0])
        comps.setdefault(root, []).append(op)
    return [comps[r] for r in sorted(comps)]


def build_size_table(cfg: RunConfig) -> dict:
    v = cfg.value_size
    table = dict(cache_mod.DEFAULT_SIZES)
    table.update({
        "INV": 21 + v, "ACK": 21, "VAL": 21, "MCHK": 9, "MCHK_ACK": 9,
        "G_UPD": cache_mod.DEFAULT_SIZES["G_UPD"],
        "O_REQ": 24, "O_INV": 48, "O_ACK": 32 + v, "O_VAL": 24, "O_NACK": 16,
        "O_RESP": 40, "O_FETCH": 16, "O_FETCH_REPLY": 24 + v,
        "R_INV": 32 + v, "R_ACK": 16, "R_VAL": 16, "RECOVERY_DONE": 12,
    })
    return table


def run_controller(cfg: RunConfig, max_ticks: int = 200_000,
                   retain_trace: bool = False):
    """Execute one run; returns (report, controller) for introspection."""
    ctl = Controller(cfg)
    if retain_trace:
        ctl.sim.retain_trace()
    return ctl.run(max_ticks), ctl


def run(cfg: RunConfig, max_ticks: int = 200_000,
        retain_trace: bool = False) -> RunReport:
    """Execute one deterministic run and return its report."""
    return run_controller(cfg, max_ticks, retain_trace)[0]


def durability_audit(ctl: Controller) -> list:
    """After a zeus run: every live replica of a committed write-set key
    must hold at least the committed version (byte-equal when equal)."""
    problems = []
    live = ctl.service.current.live
    for versions, writes, _coord in ctl.committed_txs:
        for key, ver in versions.items():
            holders = 0
            for n in sorted(live):
                if n in ctl.sim.crashed:
                    continue
                rec = ctl.nodes[n].replicas.get(key)
                if rec is None:
                    continue
                holders += 1
                if rec.t_version < ver:
                    problems.append(
                        f"node {n} key {key}: version {rec.t_version} < committed {ver}")
                elif rec.t_version == ver and rec.t_data != writes[key]:
                    problems.append(f"node {n} key {key}: data mismatch at {ver}")
            if holders == 0:
                problems.append(f"key {key}: committed version {ver} has no live replica")
    return problems
