"""Symmetric caching over a statically sharded store, plus its closed-form
throughput model.

Every node of an N-node pool holds an identical cache of the top-k most
popular keys, kept coherent by the invalidating protocol in
:mod:`invkv.galene`; misses are served by the key's home shard, costing one
request and one reply message.  The analytical model expresses per-request
network traffic and pool throughput in terms of hit ratio h, write ratio w,
message byte costs, and per-server bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import galene
from .simnet import NodeNet
from .types import Key, KeyState, NodeId
from .zipf import shard_of


class NoBreakEven(Exception):
    """The cached design never matches the uniform baseline (h <= 0)."""


@dataclass(slots=True)
class ModelParams:
    """Inputs to the traffic model.  ``bw`` is bytes per second per server."""

    h: float                 # cache hit ratio
    n: int                   # pool size
    w: float = 0.0           # write ratio
    b_rr: float = 113.0      # bytes of one remote request + its reply
    b_g: float = 183.0       # bytes of one invalidation + ack + update triple
    bw: float = 21.5e9 / 8   # per-server bandwidth, bytes/sec

    def validate(self):
        if not (0.0 <= self.h <= 1.0 and 0.0 <= self.w <= 1.0):
            raise ValueError("h and w must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("need at least one server")


def gbps(x: float) -> float:
    """Convert gigabits per second to bytes per second."""
    return x * 1e9 / 8


def miss_traffic(p: ModelParams) -> float:
    """Bytes per request spent on cache misses that hit a remote home."""
    p.validate()
    return (1.0 - p.h) * (1.0 - 1.0 / p.n) * p.b_rr


def consistency_traffic(p: ModelParams) -> float:
    """Bytes per request spent keeping the caches coherent: each cached
    write sends one inv/ack/update triple to every other pool member."""
    p.validate()
    return p.h * p.w * (p.n - 1) * p.b_g


def uniform_traffic(p: ModelParams) -> float:
    """Bytes per request of the cache-less baseline (remote with prob 1-1/N)."""
    p.validate()
    return (1.0 - 1.0 / p.n) * p.b_rr


def throughput_cckvs(p: ModelParams) -> float:
    """Pool requests/sec with symmetric caching; inf when traffic is zero."""
    traffic = miss_traffic(p) + consistency_traffic(p)
    if traffic <= 0.0:
        return math.inf
    return p.n * p.bw / traffic


def throughput_uniform(p: ModelParams) -> float:
    """Pool requests/sec of the uniform baseline; inf when N == 1."""
    traffic = uniform_traffic(p)
    if traffic <= 0.0:
        return math.inf
    return p.n * p.bw / traffic


def break_even_write_ratio(p: ModelParams) -> float:
    """Write ratio at which the cached and uniform designs tie:
    w* = (TR_U - TR_M) / (h * (N-1) * B_G)."""
    p.validate()
    if p.n < 2 or p.h >= 1.0:
        raise ValueError("break-even needs n >= 2 and h < 1")
    gain = uniform_traffic(p) - miss_traffic(p)
    if gain <= 0.0 or p.h <= 0.0:
        raise NoBreakEven(f"h={p.h} gives the cache no edge")
    return gain / (p.h * (p.n - 1) * p.b_g)


def model_table(n_values, w_values, h=0.65, b_rr=113.0, b_g=183.0,
                bw=21.5e9 / 8) -> list:
    """Rows of (n, w, t_cckvs, t_uniform, break_even) for the CLI table."""
    rows = []
    for n in n_values:
        for w in w_values:
            p = ModelParams(h=h, n=n, w=w, b_rr=b_rr, b_g=b_g, bw=bw)
            try:
                be = break_even_write_ratio(p) if n >= 2 else math.nan
            except NoBreakEven:
                be = math.nan
            rows.append((n, w, throughput_cckvs(p), throughput_uniform(p), be))
    return rows


# --------------------------------------------------------------------------
# pool simulation
# --------------------------------------------------------------------------

CACHE_HIT = "hit"
LOCAL_SHARD = "local"
REMOTE_SHARD = "remote"


@dataclass(slots=True)
class RemoteReq:
    req_id: int
    key: Key
    write: bool
    value: int
    kind = "REMOTE_REQ"


@dataclass(slots=True)
class RemoteReply:
    req_id: int
    value: int
    kind = "REMOTE_REPLY"


# split of the aggregate byte costs across individual message kinds; the
# sums are what the model sees (headers excluded on both sides)
DEFAULT_SIZES = {
    "REMOTE_REQ": 48, "REMOTE_REPLY": 65,       # sums to b_rr = 113
    "G_INV": 45, "G_ACK": 45, "G_UPD": 93,      # sums to b_g = 183
}


@dataclass(slots=True)
class CacheConfig:
    pool_size: int
    key_space: int
    cache_fraction: float = 0.001
    write_back: bool = True

    @property
    def cached_keys(self) -> int:
        return max(1, int(self.key_space * self.cache_fraction))


class CachePoolNode:
    """One pool member: symmetric cache replica, shard of the backing store,
    and the request router."""

    def __init__(self, node_id: NodeId, cfg: CacheConfig, net: NodeNet,
                 shard_salt: int, read_own_write: bool = True,
                 suppress_superseded_upd: bool = False):
        self.id = node_id
        self.cfg = cfg
        self.net = net
        self.shard_salt = shard_salt
        self.cache = galene.GaleneNode(
            node_id, list(range(cfg.pool_size)), net,
            read_own_write=read_own_write,
            suppress_superseded_upd=suppress_superseded_upd)
        self.shard: dict[Key, int] = {}
        self._pending_remote: dict[int, object] = {}
        self._req_seq = 0

    def route(self, key: Key) -> tuple:
        """Classify a request: cache hit, local shard, or remote home."""
        if key <= self.cfg.cached_keys:
            return (CACHE_HIT, self.id)
        home = shard_of(key, self.cfg.pool_size, self.shard_salt)
        return (LOCAL_SHARD, home) if home == self.id else (REMOTE_SHARD, home)

    def client_op(self, op_kind: str, key: Key, value: int, ticket):
        where, home = self.route(key)
        self.net.count(f"route_{where}")
        if where == CACHE_HIT:
            if op_kind == "read":
                return self.cache.read(key, ticket)
            return self.cache.write(key, value, ticket)
        if where == LOCAL_SHARD:
            self.net.complete(ticket, value=self._shard_access(key, op_kind, value))
            return None
        self._req_seq += 1
        self._pending_remote[self._req_seq] = ticket
        self.net.send(home, RemoteReq(self._req_seq, key, op_kind == "write", value))
        return None

    def _shard_access(self, key: Key, op_kind: str, value: int) -> int:
        if op_kind == "write":
            self.shard[key] = value
            return value
        return self.shard.get(key, 0)

    def on_message(self, src: NodeId, epoch: int, msg) -> None:
        if isinstance(msg, RemoteReq):
            result = self._shard_access(msg.key, "write" if msg.write else "read", msg.value)
            self.net.send(src, RemoteReply(msg.req_id, result))
        elif isinstance(msg, RemoteReply):
            ticket = self._pending_remote.pop(msg.req_id, None)
            if ticket is not None:
                self.net.complete(ticket, value=msg.value)
        else:
            self.cache.on_message(src, epoch, msg)

    def on_timer(self, token) -> None:
        pass


def cache_symmetry_violations(nodes: list) -> list:
    """Invariant audit at quiesce: all caches hold the same key set, and
    Valid entries that share a timestamp hold byte-equal values."""
    problems = []
    key_sets = {tuple(sorted(n.cache.store)) for n in nodes}
    if len(key_sets) > 1:
        problems.append("cache key sets differ across the pool")
    per_key: dict = {}
    for n in nodes:
        for key, rec in n.cache.store.items():
            if rec.state is KeyState.VALID:
                per_key.setdefault((key, rec.ts), set()).add(rec.value)
    for (key, ts), values in per_key.items():
        if len(values) > 1:
            problems.append(f"key {key} ts {ts}: divergent valid values {values}")
    return problems
