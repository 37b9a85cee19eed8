"""Exhaustive interleaving exploration for small protocol scenarios.

Instead of sampling schedules from a seed, the explorer walks every
delivery order of the pending message/timer set (depth-first with visited-
state deduplication over deep-copied node snapshots).  It is the oracle for
properties like "at most one of k concurrent read-modify-writes commits" and
"concurrent replays of one timestamp converge", checked over every
reachable terminal state rather than a sample of them.
"""

from __future__ import annotations

import copy
import pickle
from dataclasses import dataclass, field

from .hermes import HermesNode
from .simnet import ChoiceNet


@dataclass
class Outcome:
    """Results of one client op observed in a terminal state."""
    results: tuple
    values: tuple            # final (ts, value, state) per node for the key


@dataclass
class _Collector:
    done: dict = field(default_factory=dict)

    def on_complete(self, ticket, now, **res):
        self.done[ticket] = res

    def on_progress(self, *a, **k):
        pass

    def on_fault(self, *a, **k):
        pass

    def on_control(self, *a, **k):
        pass


def _snapshot(net: ChoiceNet, collector: _Collector):
    return pickle.dumps((net.nodes, net.pending, net.crashed, collector.done))


class HermesScenario:
    """A scripted set of client ops on one key, explored exhaustively."""

    def __init__(self, n_nodes: int = 3, key: int = 1, max_states: int = 400_000):
        self.n_nodes = n_nodes
        self.key = key
        self.max_states = max_states

    def build(self):
        net = ChoiceNet()
        collector = _Collector()
        net.controller = collector
        for n in range(self.n_nodes):
            net.attach(n, HermesNode(n, self.n_nodes, net.net(n), mlt_ticks=1000))
        return net, collector

    def explore(self, starts, crash_choices=(), check=None) -> list:
        """Run ``starts`` (list of (node, op, value) issued up front), then
        explore all interleavings.  ``crash_choices``: nodes that may crash at
        any point (each subset path explored).  ``check(net, collector)`` runs
        at every terminal state; outcomes are also collected and returned."""
        net0, col0 = self.build()
        for ticket, (node, op, value) in enumerate(starts):
            handler = getattr(net0.nodes[node], op)
            handler(self.key, value, ticket) if op != "read" else handler(self.key, ticket)
        seen = set()
        outcomes = []
        stack = [(net0, col0, tuple(sorted(crash_choices)))]
        states = 0
        while stack:
            net, col, crashes = stack.pop()
            snap = _snapshot(net, col)
            if snap in seen:
                continue
            seen.add(snap)
            states += 1
            if states > self.max_states:
                raise RuntimeError("state budget exceeded")
            moves = list(range(len(net.pending)))
            if not moves:
                outcomes.append(self._terminal(net, col, check))
                continue
            for idx in moves:
                n2 = copy.deepcopy(net)
                c2 = n2.controller
                n2.deliver(idx)
                stack.append((n2, c2, crashes))
            for victim in crashes:
                n2 = copy.deepcopy(net)
                c2 = n2.controller
                n2.crashed.add(victim)
                n2.pending = [p for p in n2.pending
                              if not (p[1] == "timer" and p[2] == victim)]
                rest = tuple(c for c in crashes if c != victim)
                # survivors learn the new membership in every possible order;
                # collapse to instantaneous delivery, which the dedup absorbs
                live = frozenset(range(self.n_nodes)) - n2.crashed
                for node_id in sorted(live):
                    n2.nodes[node_id].on_membership(
                        n2.nodes[node_id].epoch + 1, live)
                stack.append((n2, c2, rest))
        return outcomes

    def _terminal(self, net: ChoiceNet, col: _Collector, check):
        if check is not None:
            check(net, col)
        values = tuple(
            (net.nodes[n].store[self.key].ts, net.nodes[n].store[self.key].value,
             net.nodes[n].store[self.key].state.value)
            if self.key in net.nodes[n].store and n not in net.crashed else None
            for n in range(self.n_nodes))
        return Outcome(tuple(sorted(col.done.items())), values)
