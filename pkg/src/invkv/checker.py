"""Consistency oracles over invocation/response histories.

``check_linearizable`` decides per-key linearizability of reads, writes, and
read-modify-writes with a Wing-Gong style search: repeatedly pick a minimal
(by real time) unlinearized operation consistent with the running value,
memoizing visited (remaining-set, value) states.  Per-key decomposition is
sound because linearizability composes.  ``check_strict_serializable`` runs
the same search over whole transactions and a multi-key state.  Operations
left pending by a crash are closed in the standard way: each one may either
take effect at any point after its invocation or be dropped entirely, and
the search explores both.

``witness_from_protocol`` builds a serial order for single-key traces
directly from white-box apply events: an update's point is where the last
live lagging replica adopts a timestamp at least as large; overlapping
same-key updates with equal points are ordered consecutively by timestamp;
a read's point is its local return.  The result is cross-validated against
the black-box checker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

INF = float("inf")

DEFAULT_BUDGET = 2_000_000


class SearchBudgetExceeded(Exception):
    """The decision procedure gave up rather than guess."""


@dataclass(slots=True)
class HistoryEvent:
    """One half of an operation as the harness observed it."""
    session: int
    kind: str            # "invoke" | "respond"
    op: str              # "read" | "write" | "rmw" | "tx" | "rotx"
    key: object          # key, or tuple of keys for transactions
    value: object        # see the per-op conventions in the checkers
    tick: int
    committed: bool = True
    ts: object = None            # advisory white-box hint
    capture: object = None
    op_id: object = None         # pairing handle; sessions may pipeline


@dataclass(slots=True)
class Op:
    """A matched invoke/respond pair (respond may be missing: pending)."""
    session: int
    op: str
    key: object
    invoke: int
    respond: float       # INF while pending
    value: object = None         # write/rmw argument, or tx write map
    result: object = None        # read result, rmw old value, or tx read map
    committed: bool = True
    pending: bool = False
    ts: object = None            # advisory white-box hint; black-box ignores it
    capture: object = None       # async reads: tick the value was taken


@dataclass(slots=True)
class Witness:
    order: list          # (op, point) in serial order
    ok: bool = True


@dataclass(slots=True)
class Violation:
    reason: str
    ops: list            # minimal counterexample


def pair_events(events: list) -> list:
    """Match invokes to responses; unmatched invokes stay pending.  Pairing
    uses op_id when present (pipelined sessions overlap legitimately),
    otherwise the session id with strict alternation."""
    ops: list[Op] = []
    open_ops: dict = {}
    for ev in sorted(events, key=lambda e: (e.tick, 0 if e.kind == "invoke" else 1)):
        handle = ev.op_id if ev.op_id is not None else ev.session
        if ev.kind == "invoke":
            if handle in open_ops:
                raise ValueError(f"overlapping ops for handle {handle}")
            op = Op(ev.session, ev.op, ev.key, ev.tick, INF,
                    value=ev.value, pending=True)
            open_ops[handle] = op
            ops.append(op)
        else:
            op = open_ops.pop(handle, None)
            if op is None:
                raise ValueError(f"response without invocation ({handle})")
            op.respond = ev.tick
            op.result = ev.value
            op.committed = ev.committed
            op.pending = False
            op.ts = ev.ts
            op.capture = ev.capture
    return ops


# ---------------------------------------------------------------------------
# per-key linearizability
# ---------------------------------------------------------------------------

def _frontier(mask: int, base: int, invokes, responds):
    """Ops that may linearize next: remaining ops whose invocation precedes
    every remaining response.  Scans in invocation order from ``base`` (the
    first unlinearized op), so the cost is the concurrency width, not the
    history length."""
    n = len(invokes)
    collected = []
    cur_min = INF
    i = base
    while i < n:
        if mask >> i & 1:
            if invokes[i] > cur_min:
                break
            collected.append(i)
            if responds[i] < cur_min:
                cur_min = responds[i]
        i += 1
    return [i for i in collected if invokes[i] <= cur_min]


def check_linearizable(ops: list, initial=0, budget: int = DEFAULT_BUDGET):
    """Decide linearizability of one key's reads/writes/RMWs.

    Conventions: read.result is the returned value; write.value is the
    written value; a committed rmw has result = value read and value = value
    installed.  Aborted operations must not take effect and are dropped
    before the search; pending ones may take effect or not.
    """
    cand = [op for op in ops if op.committed or op.pending]
    cand.sort(key=lambda op: (op.invoke, op.respond))
    n = len(cand)
    if n == 0:
        return Witness([])
    full_mask = (1 << n) - 1
    pending_mask = 0
    for i, op in enumerate(cand):
        if op.pending:
            pending_mask |= 1 << i
    invokes = [op.invoke for op in cand]
    responds = [op.respond for op in cand]
    seen: set = set()
    visits = 0
    # iterative DFS carrying the chosen order for witness reconstruction
    stack = [(full_mask, 0, initial, ())]
    while stack:
        mask, base, value, order = stack.pop()
        while base < n and not (mask >> base & 1):
            base += 1
        if mask & ~pending_mask == 0:
            # all completed ops linearized; leftovers are dropped pending ops
            return _make_witness(cand, order)
        state = (mask, value)
        if state in seen:
            continue
        seen.add(state)
        visits += 1
        if visits > budget:
            raise SearchBudgetExceeded(f"visited {visits} states")
        for i in _frontier(mask, base, invokes, responds):
            nxt = _apply_single(cand[i], value)
            if nxt is None:
                continue
            stack.append((mask & ~(1 << i), base, nxt, order + (i,)))
    return _violation(cand, initial, budget)


def _apply_single(op: Op, value):
    """Next state if op can linearize now, else None."""
    if op.op == "read":
        if op.pending:
            return value  # a pending read constrains nothing
        return value if op.result == value else None
    if op.op == "write":
        return op.value
    if op.op == "rmw":
        if op.pending:
            return op.value  # the installed value is fixed at issue time
        return op.value if op.result == value else None
    raise ValueError(f"not a single-key op: {op.op}")


def _make_witness(cand: list, order: tuple) -> Witness:
    out = []
    point = 0
    for i in order:
        op = cand[i]
        point = max(op.invoke, point)
        out.append((op, point))
    return Witness(out)


def _violation(cand: list, initial, budget) -> Violation:
    """Shrink greedily: drop ops whose removal preserves the violation."""
    core = list(cand)
    changed = True
    while changed:
        changed = False
        for j in range(len(core)):
            trial = core[:j] + core[j + 1:]
            try:
                if isinstance(check_linearizable(trial, initial, budget), Violation):
                    core = trial
                    changed = True
                    break
            except SearchBudgetExceeded:
                pass
    return Violation("no linearization order exists", core)


# ---------------------------------------------------------------------------
# strict serializability
# ---------------------------------------------------------------------------

def check_strict_serializable(ops: list, initial=0, budget: int = DEFAULT_BUDGET):
    """Decide strict serializability of transactions.

    Conventions: op.op in {"tx", "rotx"}; op.value is the write map
    {key: value}, op.result the observed read map {key: value}.  Aborted
    transactions are dropped; pending ones branch.
    """
    cand = [op for op in ops if op.committed or op.pending]
    cand.sort(key=lambda op: (op.invoke, op.respond))
    n = len(cand)
    if n == 0:
        return Witness([])
    full_mask = (1 << n) - 1
    pending_mask = 0
    for i, op in enumerate(cand):
        if op.pending:
            pending_mask |= 1 << i
    responds = [op.respond for op in cand]
    invokes = [op.invoke for op in cand]
    seen: set = set()
    visits = 0
    stack = [(full_mask, 0, (), ())]
    while stack:
        mask, base, state, order = stack.pop()
        while base < n and not (mask >> base & 1):
            base += 1
        if mask & ~pending_mask == 0:
            return _make_witness(cand, order)
        key_state = (mask, state)
        if key_state in seen:
            continue
        seen.add(key_state)
        visits += 1
        if visits > budget:
            raise SearchBudgetExceeded(f"visited {visits} states")
        for i in _frontier(mask, base, invokes, responds):
            nxt = _apply_tx(cand[i], state, initial)
            if nxt is None:
                continue
            stack.append((mask & ~(1 << i), base, nxt, order + (i,)))
    return _tx_violation(cand, initial, budget)


def _apply_tx(op: Op, state: tuple, initial):
    lookup = dict(state)
    if not op.pending:
        for key, val in (op.result or {}).items():
            if lookup.get(key, initial) != val:
                return None
    writes = op.value or {}
    if not writes:
        return state
    lookup.update(writes)
    return tuple(sorted(lookup.items()))


def _tx_violation(cand: list, initial, budget) -> Violation:
    core = list(cand)
    changed = True
    while changed:
        changed = False
        for j in range(len(core)):
            trial = core[:j] + core[j + 1:]
            try:
                if isinstance(check_strict_serializable(trial, initial, budget), Violation):
                    core = trial
                    changed = True
                    break
            except SearchBudgetExceeded:
                pass
    return Violation("no real-time serial order exists", core)


# ---------------------------------------------------------------------------
# white-box witness construction
# ---------------------------------------------------------------------------

def witness_from_protocol(ops: list, applies: list, crashes: dict,
                          n_nodes: int, initial=0) -> Optional[Witness]:
    """Derive a serial order for one key from replica apply events.

    ``applies``: (tick, node, ts) in trace order, covering both coordinator
    self-applies and follower invalidation applies.  ``crashes``: node ->
    crash tick.  An update's point is where the last lagging live replica
    reaches its timestamp (points are monotone in timestamp, and overlapping
    updates sharing a point go consecutively in timestamp order); each read
    slots in after the update whose value it returned.  Returns None when a
    coherent order cannot be constructed -- success implies the black-box
    checker accepts the same order.
    """
    entries: list = []
    for op in ops:
        if op.op in ("write", "rmw") and (op.committed or op.pending):
            if op.ts is None:
                return None
            point = _update_point(op.ts, applies, crashes, n_nodes)
            if point is None:
                if op.pending:
                    continue  # never took full effect; drop it
                return None
            if not op.pending and not (op.invoke <= point <= op.respond):
                return None
            entries.append((tuple(op.ts), 0, point, op))
        elif op.op == "read" and not op.pending:
            if op.ts is None:
                return None
            point = op.capture if op.capture is not None else op.respond
            entries.append((tuple(op.ts), 1, point, op))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    value = initial
    order = []
    for ts, is_read, point, op in entries:
        if is_read:
            if op.result != value:
                return None
        else:
            if op.op == "rmw" and not op.pending and op.result != value:
                return None
            value = op.value
        order.append((op, point))
    return Witness(order)


def _update_point(ts, applies, crashes: dict, n_nodes: int):
    """Tick when every live replica has adopted a timestamp >= ts."""
    level = {n: (0, 0) for n in range(n_nodes)}
    crashed: set = set()
    events = sorted(
        [(tick, 0, node, ats) for tick, node, ats in applies]
        + [(tick, 1, node, None) for node, tick in crashes.items()])
    for tick, _k, node, ats in events:
        if ats is None:
            crashed.add(node)
        elif ats > level[node]:
            level[node] = ats
        if all(n in crashed or level[n] >= ts for n in range(n_nodes)):
            return tick
    return None


# ---------------------------------------------------------------------------
# history files
# ---------------------------------------------------------------------------

def dump_history(events: list, path: str) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps({
                "session": ev.session, "kind": ev.kind, "op": ev.op,
                "key": ev.key, "value": ev.value, "tick": ev.tick,
                "committed": ev.committed, "op_id": ev.op_id}) + "\n")


def load_history(path: str) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            key = d["key"]
            if isinstance(key, list):
                key = tuple(key)
            value = d["value"]
            out.append(HistoryEvent(d["session"], d["kind"], d["op"], key,
                                    _coerce(value), d["tick"],
                                    d.get("committed", True),
                                    op_id=d.get("op_id")))
    return out


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    if isinstance(value, dict):
        return {int(k) if isinstance(k, str) and k.isdigit() else k: _coerce(v)
                for k, v in value.items()}
    return value
