"""Flat key = value run configuration.

One option per line, ``#`` comments, repeated ``fault =`` lines build the
fault schedule.  The full key set is documented in the README; unknown keys
are errors so typos cannot silently change an experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .simnet import FaultEvent, FaultKind


class ConfigError(Exception):
    """Bad configuration; message carries the line number when parsing."""


@dataclass
class RunConfig:
    protocol: str = "hermes"          # galene | hermes | zeus | cache
    seed: int = 1
    nodes: int = 5
    keys: int = 4                     # replicated keys (galene/hermes)
    key_space: int = 250_000          # cache runs: total keys behind the pool
    ops_per_node: int = 100
    sessions_per_node: int = 1
    value_size: int = 40
    write_ratio: float = 0.05
    rmw_ratio: float = 0.0
    distribution: str = "uniform"     # uniform | zipfian
    zipf_alpha: float = 0.99
    min_delay: int = 1
    max_delay: int = 5
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    max_events: int = 2_000_000
    lease_duration_ticks: int = 150
    renewal_period_ticks: int = 50
    check: bool = True
    faults: list = field(default_factory=list)
    mutation: str = ""
    # hermes flags
    hermes_o1_fairness: bool = False
    hermes_o2_skip_val: bool = False
    hermes_o3_bcast_acks: bool = False
    hermes_async_reads: bool = False
    hermes_mlt_factor: int = 4
    # galene flags
    galene_read_own_write: bool = True
    galene_suppress_superseded_upd: bool = False
    # cache knobs
    cache_fraction: float = 0.001
    # zeus knobs
    zeus_replication_degree: int = 3
    zeus_ownership_change_fraction: float = 0.1
    zeus_read_tx_fraction: float = 0.15
    zeus_tx_group_size: int = 2

    def validate(self) -> None:
        if self.protocol not in ("galene", "hermes", "zeus", "cache"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "zeus":
            if self.nodes < 3:
                raise ConfigError("zeus needs at least 3 nodes (directory size)")
            if self.drop_prob > 0:
                raise ConfigError(
                    "zeus assumes a reliable transport; drop_prob must be 0")
            if self.sessions_per_node != 1:
                raise ConfigError("zeus runs one pipeline (session) per node")
        if self.protocol in ("galene", "hermes") and self.keys < 1:
            raise ConfigError("need at least one key")
        if not 0 <= self.write_ratio <= 1 or not 0 <= self.rmw_ratio <= 1:
            raise ConfigError("ratios must lie in [0, 1]")
        if self.write_ratio + self.rmw_ratio > 1:
            raise ConfigError("write_ratio + rmw_ratio must not exceed 1")
        if self.min_delay < 1 or self.max_delay < self.min_delay:
            raise ConfigError("need 1 <= min_delay <= max_delay")
        if self.mutation not in ("", "none", "skip_inv", "ack_without_invalidate",
                                 "validate_stale_ts", "rinv_out_of_order"):
            raise ConfigError(f"unknown mutation {self.mutation!r}")


_ALIASES = {
    "hermes.o1_fairness": "hermes_o1_fairness",
    "hermes.o2_skip_val": "hermes_o2_skip_val",
    "hermes.o3_bcast_acks": "hermes_o3_bcast_acks",
    "hermes.async_reads": "hermes_async_reads",
    "hermes.mlt_factor": "hermes_mlt_factor",
    "galene.read_own_write": "galene_read_own_write",
    "galene.suppress_superseded_upd": "galene_suppress_superseded_upd",
    "cache.cache_fraction": "cache_fraction",
    "zeus.replication_degree": "zeus_replication_degree",
    "zeus.ownership_change_fraction": "zeus_ownership_change_fraction",
    "zeus.read_tx_fraction": "zeus_read_tx_fraction",
    "zeus.tx_group_size": "zeus_tx_group_size",
}


def parse_fault(text: str, lineno: int = 0) -> FaultEvent:
    """``crash:N@T`` | ``partition:a,b,..@T`` | ``heal@T`` | ``drop_next:K@T``."""
    try:
        head, _, at = text.partition("@")
        tick = int(at)
        name, _, arg = head.partition(":")
        name = name.strip()
        if name == "crash":
            return FaultEvent(tick, FaultKind.CRASH, (int(arg),))
        if name == "partition":
            side = tuple(int(x) for x in arg.split(",") if x.strip() != "")
            return FaultEvent(tick, FaultKind.PARTITION, side)
        if name == "heal":
            return FaultEvent(tick, FaultKind.HEAL)
        if name == "drop_next":
            return FaultEvent(tick, FaultKind.DROP_NEXT, count=int(arg))
    except (ValueError, TypeError):
        pass
    raise ConfigError(f"line {lineno}: cannot parse fault {text!r}")


def fault_to_text(f: FaultEvent) -> str:
    if f.kind is FaultKind.CRASH:
        return f"crash:{f.nodes[0]}@{f.at}"
    if f.kind is FaultKind.PARTITION:
        return "partition:" + ",".join(str(n) for n in f.nodes) + f"@{f.at}"
    if f.kind is FaultKind.HEAL:
        return f"heal@{f.at}"
    return f"drop_next:{f.count}@{f.at}"


def _parse_value(name: str, raw: str, kind, lineno: int):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {name}: {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    py_types = {"str": str, "int": int, "float": float, "bool": bool}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key == "fault":
            cfg.faults.append(parse_fault(raw.strip(), lineno))
            continue
        attr = _ALIASES.get(key, key)
        if attr not in types:
            raise ConfigError(f"line {lineno}: unknown option {key!r}")
        kind = py_types.get(types[attr], str)
        setattr(cfg, attr, _parse_value(key, raw, kind, lineno))
    cfg.faults.sort(key=lambda f: f.at)
    cfg.validate()
    return cfg


def config_to_text(cfg: RunConfig) -> str:
    """Canonical echo of a configuration (diffable, re-parseable)."""
    lines = []
    for f in fields(RunConfig):
        if f.name == "faults":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for fault in cfg.faults:
        lines.append(f"fault = {fault_to_text(fault)}")
    return "\n".join(lines) + "\n"
