"""Seeded deterministic discrete-event network simulator.

One event heap drives everything: message deliveries, node timers, and
controller events (workload arrivals, faults, membership actions).  All
randomness for a message -- drop, duplicate, then per-copy delay, in that
fixed field order -- is consumed at send time from a dedicated stream, so
the full delivery schedule is a pure function of the seed.  Reordering
falls out of the random per-message delays; there is no separate knob.

Protocol nodes are pure state machines: the simulator invokes them
single-threaded with one event at a time, and they interact with the world
only through their :class:`NodeNet` handle.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .rng import Rng
from .types import Envelope, NodeId


class FaultKind(Enum):
    CRASH = "crash"
    PARTITION = "partition"
    HEAL = "heal"
    DROP_NEXT = "drop_next"


@dataclass(slots=True)
class FaultEvent:
    at: int
    kind: FaultKind
    nodes: tuple = ()     # CRASH: (node,); PARTITION: one side of the cut
    count: int = 0        # DROP_NEXT: how many of the next sends to drop


@dataclass(slots=True)
class WorkloadSpec:
    distribution: str = "uniform"          # "uniform" | "zipfian"
    zipf_alpha: float = 0.99
    write_ratio: float = 0.0
    rmw_ratio: float = 0.0
    key_space: int = 4
    ops_per_node: int = 100
    sessions_per_node: int = 1
    value_size: int = 40

    def validate(self):
        if self.write_ratio + self.rmw_ratio > 1.0 + 1e-12:
            raise ValueError("write_ratio + rmw_ratio must not exceed 1")
        if self.distribution == "zipfian" and self.zipf_alpha <= 0:
            raise ValueError("zipf alpha must be positive")
        if self.key_space < 1 or self.ops_per_node < 0:
            raise ValueError("bad workload sizes")


@dataclass(slots=True)
class SimConfig:
    seed: int = 1
    nodes: int = 3
    min_delay: int = 1
    max_delay: int = 5
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    faults: list = field(default_factory=list)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    max_events: int = 2_000_000
    # reliable-transport mode: a partition delays cross-cut traffic instead
    # of dropping it (loss is outside the protocol's fault model)
    hold_partition: bool = False

    def validate(self):
        if self.min_delay < 1 or self.max_delay < self.min_delay:
            raise ValueError("need 1 <= min_delay <= max_delay")
        for p in (self.drop_prob, self.dup_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        last = 0
        for f in self.faults:
            if f.at < last:
                raise ValueError("fault schedule must be time-ordered")
            last = f.at
        self.workload.validate()


# heap item kinds
_ENV, _TIMER, _CTL = 0, 1, 2


class NodeNet:
    """Per-node facade through which a protocol state machine touches the
    simulated world: sends, timers, protocol-event logging, op completion."""

    __slots__ = ("_sim", "node")

    def __init__(self, sim: "Simulator", node: NodeId):
        self._sim = sim
        self.node = node

    @property
    def now(self) -> int:
        return self._sim.now

    def send(self, dst: NodeId, payload, epoch: int = 0) -> None:
        self._sim.post(self.node, dst, payload, epoch)

    def timer(self, delay: int, token) -> None:
        self._sim.set_timer(self.node, delay, token)

    def apply_note(self, key, ts, value) -> None:
        """Log that this replica applied an invalidation (white-box trace)."""
        self._sim.protocol_log.append((self._sim.now, "apply", self.node, key, ts, value))

    def note(self, kind: str, **fields) -> None:
        self._sim.notes.append((self._sim.now, kind, self.node, fields))

    def count(self, counter: str, delta: int = 1) -> None:
        c = self._sim.op_counters
        c[counter] = c.get(counter, 0) + delta

    def complete(self, ticket, **result) -> None:
        self._sim.controller.on_complete(ticket, self._sim.now, **result)

    def progress(self, ticket, stage: str, **info) -> None:
        self._sim.controller.on_progress(ticket, self._sim.now, stage, **info)


class Simulator:
    """Event loop, fault switchboard, and trace/metric accounting."""

    def __init__(self, cfg: SimConfig, controller):
        cfg.validate()
        self.cfg = cfg
        self.controller = controller
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.nodes: dict[NodeId, Any] = {}
        self.crashed: set = set()
        self._partition: dict[NodeId, int] | None = None
        self._drop_next = 0
        self.rng_net = Rng(cfg.seed).stream("net")
        # accounting
        self.sent = 0
        self.duplicated = 0
        self.delivered = 0
        self.dropped = 0
        self.msg_count: dict[str, int] = {}
        self.msg_bytes: dict[str, int] = {}
        self.size_table: dict[str, int] = {}
        self.op_counters: dict[str, int] = {}
        self.protocol_log: list = []
        self.notes: list = []
        self._hash = hashlib.sha256()
        self.trace_lines: list | None = None
        self.events_processed = 0
        for f in cfg.faults:
            self._push(f.at, _CTL, ("fault", f))

    # -- wiring ------------------------------------------------------------

    def attach(self, node_id: NodeId, node) -> None:
        self.nodes[node_id] = node

    def net(self, node_id: NodeId) -> NodeNet:
        return NodeNet(self, node_id)

    def retain_trace(self) -> None:
        self.trace_lines = []

    # -- event plumbing ----------------------------------------------------

    def _push(self, tick: int, kind: int, data) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (tick, self._seq, kind, data))

    def schedule(self, delay: int, token, data=None) -> None:
        """Controller-level event (workload arrival, membership step, ...)."""
        self._push(self.now + delay, _CTL, (token, data))

    def set_timer(self, node: NodeId, delay: int, token) -> None:
        if delay < 1:
            delay = 1
        self._push(self.now + delay, _TIMER, (node, token))

    def _trace(self, *parts) -> None:
        line = " ".join(str(p) for p in parts)
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.trace_lines is not None:
            self.trace_lines.append(line)

    def trace_hash(self) -> str:
        return self._hash.hexdigest()

    # -- sending -----------------------------------------------------------

    def post(self, src: NodeId, dst: NodeId, payload, epoch: int) -> None:
        """Send one message; all random decisions happen here, in the fixed
        order drop, dup, delay (second delay for the duplicate)."""
        if src in self.crashed:
            return
        kind = payload.kind
        self.sent += 1
        self.msg_count[kind] = self.msg_count.get(kind, 0) + 1
        self.msg_bytes[kind] = self.msg_bytes.get(kind, 0) + self.size_table.get(kind, 0)
        if self._drop_next > 0:
            self._drop_next -= 1
            self.dropped += 1
            self._trace(self.now, "drop_next", src, dst, payload)
            return
        rng = self.rng_net
        if self.cfg.drop_prob > 0 and rng.random() < self.cfg.drop_prob:
            self.dropped += 1
            self._trace(self.now, "drop_rand", src, dst, payload)
            return
        copies = 1
        if self.cfg.dup_prob > 0 and rng.random() < self.cfg.dup_prob:
            copies = 2
            self.duplicated += 1
        for _ in range(copies):
            delay = rng.randint(self.cfg.min_delay, self.cfg.max_delay)
            env = Envelope(src, dst, epoch, payload, self.now)
            self._push(self.now + delay, _ENV, env)
            self._trace(self.now, "send", src, dst, delay, epoch, payload)

    # -- faults ------------------------------------------------------------

    def inject(self, f: FaultEvent) -> None:
        if f.at < self.now:
            raise ValueError("fault scheduled in the past")
        self._push(f.at, _CTL, ("fault", f))

    def _apply_fault(self, f: FaultEvent) -> None:
        self._trace(self.now, "fault", f.kind.value, f.nodes, f.count)
        if f.kind is FaultKind.CRASH:
            self.crashed.update(f.nodes)
        elif f.kind is FaultKind.PARTITION:
            side = set(f.nodes)
            self._partition = {n: (0 if n in side else 1) for n in self.nodes}
        elif f.kind is FaultKind.HEAL:
            self._partition = None
        elif f.kind is FaultKind.DROP_NEXT:
            self._drop_next += f.count
        self.controller.on_fault(f, self.now)

    def _blocked(self, src: NodeId, dst: NodeId) -> bool:
        return (self._partition is not None
                and self._partition.get(src) != self._partition.get(dst))

    def partitioned(self, a: NodeId, b: NodeId) -> bool:
        return self._blocked(a, b)

    # -- main loop ----------------------------------------------------------

    def step(self):
        """Process the earliest event (ties by insertion order); None = idle."""
        if not self._heap:
            return None
        tick, _seq, kind, data = heapq.heappop(self._heap)
        assert tick >= self.now, "clock went backwards"
        self.now = tick
        self.events_processed += 1
        if kind == _ENV:
            env = data
            if env.dst in self.crashed:
                self.dropped += 1
                self._trace(tick, "drop_crashed", env.src, env.dst, env.payload)
            elif self._blocked(env.src, env.dst):
                if self.cfg.hold_partition:
                    self._trace(tick, "hold_partition", env.src, env.dst, env.payload)
                    self._push(tick + 8, _ENV, env)
                else:
                    self.dropped += 1
                    self._trace(tick, "drop_partition", env.src, env.dst, env.payload)
            else:
                self.delivered += 1
                self._trace(tick, "deliver", env.src, env.dst, env.epoch, env.payload)
                self.nodes[env.dst].on_message(env.src, env.epoch, env.payload)
        elif kind == _TIMER:
            node, token = data
            if node not in self.crashed:
                self._trace(tick, "timer", node, token)
                self.nodes[node].on_timer(token)
        else:
            token, payload = data
            if token == "fault":
                self._apply_fault(payload)
            else:
                self._trace(tick, "ctl", token)
                self.controller.on_control(token, payload, tick)
        return (tick, kind, data)

    def run(self) -> None:
        while self._heap:
            if self.events_processed >= self.cfg.max_events:
                raise RuntimeError(f"event budget exceeded ({self.cfg.max_events})")
            self.step()

    def in_flight(self) -> int:
        return sum(1 for item in self._heap if item[2] == _ENV)

    def reconciles(self) -> bool:
        """Conservation: every sent copy was delivered, dropped, or is still
        in flight (duplication mints one extra copy)."""
        return (self.sent + self.duplicated
                == self.delivered + self.dropped + self.in_flight())


class ChoiceNet:
    """Drop-in for :class:`Simulator` used by the exhaustive explorer: sends
    and timers become pending choices instead of randomly scheduled events."""

    def __init__(self):
        self.now = 0
        self.pending: list = []       # (seq, "env"/"timer", ...)
        self._seq = 0
        self.crashed: set = set()
        self.controller = None
        self.protocol_log: list = []
        self.notes: list = []
        self.op_counters: dict[str, int] = {}
        self.msg_count: dict[str, int] = {}
        self.msg_bytes: dict[str, int] = {}
        self.size_table: dict[str, int] = {}
        self.nodes: dict[NodeId, Any] = {}

    def attach(self, node_id, node):
        self.nodes[node_id] = node

    def net(self, node_id):
        return NodeNet(self, node_id)

    def post(self, src, dst, payload, epoch):
        if src in self.crashed:
            return
        self._seq += 1
        self.pending.append((self._seq, "env", src, dst, epoch, payload))

    def set_timer(self, node, delay, token):
        self._seq += 1
        self.pending.append((self._seq, "timer", node, token))

    def deliver(self, idx: int) -> None:
        item = self.pending.pop(idx)
        self.now += 1
        if item[1] == "env":
            _, _, src, dst, epoch, payload = item
            if dst not in self.crashed:
                self.nodes[dst].on_message(src, epoch, payload)
        else:
            _, _, node, token = item
            if node not in self.crashed:
                self.nodes[node].on_timer(token)
