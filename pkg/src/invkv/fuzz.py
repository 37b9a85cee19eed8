"""Seed-sweep fuzzing over per-protocol fault matrices.

Each seed deterministically derives a scenario: deployment size, workload
mix, optimization flags, and one entry of the fault matrix (fault-free,
loss, duplication, crash, minority partition).  Every run is checked; the
sweep reports the first violating seed, so a reproducer is always one
command away.  Seeds can be spread over processes without changing results.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

from . import harness
from .config import RunConfig
from .rng import Rng
from .simnet import FaultEvent, FaultKind

FUZZ_PROTOCOLS = ("galene", "hermes", "zeus")

FUZZ_MAX_TICKS = 40_000


def hermes_config(seed: int, mutation: str = "") -> RunConfig:
    rng = Rng(seed).stream("fuzzcfg")
    nodes = rng.randint(3, 5)
    keys = rng.randint(2, 4)
    total_ops = rng.randint(200, 1000)
    cfg = RunConfig(
        protocol="hermes", seed=seed, nodes=nodes, keys=keys,
        ops_per_node=max(1, total_ops // nodes),
        sessions_per_node=rng.randint(1, 2),
        write_ratio=0.15 + 0.25 * rng.random(),
        rmw_ratio=0.05 * rng.random(),
        max_delay=rng.randint(3, 6),
        mutation=mutation,
        hermes_o1_fairness=rng.random() < 0.5,
        hermes_o2_skip_val=rng.random() < 0.5,
        hermes_o3_bcast_acks=rng.random() < 0.5,
        hermes_async_reads=rng.random() < 0.5,
    )
    mix = seed % 5
    if mix == 1:
        cfg.drop_prob = 0.01
    elif mix == 2:
        cfg.dup_prob = 0.01
    elif mix == 3:
        victim = rng.randint(0, nodes - 1)
        cfg.faults = [FaultEvent(rng.randint(50, 400), FaultKind.CRASH, (victim,))]
    elif mix == 4:
        minority = tuple(range(nodes // 2))
        at = rng.randint(50, 400)
        cfg.faults = [FaultEvent(at, FaultKind.PARTITION, minority),
                      FaultEvent(at + rng.randint(500, 1500), FaultKind.HEAL)]
    return cfg


def zeus_config(seed: int, mutation: str = "") -> RunConfig:
    rng = Rng(seed).stream("fuzzcfg")
    nodes = rng.randint(3, 6)
    cfg = RunConfig(
        protocol="zeus", seed=seed, nodes=nodes,
        keys=rng.randint(4, 8),
        ops_per_node=rng.randint(15, 30),
        max_delay=rng.randint(3, 6),
        mutation=mutation,
        zeus_read_tx_fraction=(0.0, 0.15, 0.8)[seed % 3],
        zeus_ownership_change_fraction=0.1 + 0.3 * rng.random(),
        zeus_tx_group_size=rng.randint(1, 3),
    )
    mix = seed % 4
    if mix == 1:
        cfg.dup_prob = 0.01
    elif mix == 2:
        victim = rng.randint(0, nodes - 1)
        cfg.faults = [FaultEvent(rng.randint(80, 400), FaultKind.CRASH, (victim,))]
    elif mix == 3 and nodes >= 4:
        minority = tuple(range(nodes // 2))
        at = rng.randint(80, 400)
        cfg.faults = [FaultEvent(at, FaultKind.PARTITION, minority),
                      FaultEvent(at + rng.randint(600, 1500), FaultKind.HEAL)]
    return cfg


def galene_config(seed: int, mutation: str = "") -> RunConfig:
    rng = Rng(seed).stream("fuzzcfg")
    cfg = RunConfig(
        protocol="galene", seed=seed,
        nodes=rng.randint(3, 6), keys=rng.randint(2, 4),
        ops_per_node=rng.randint(40, 150),
        sessions_per_node=rng.randint(1, 2),
        write_ratio=0.15 + 0.25 * rng.random(),
        max_delay=rng.randint(3, 6),
        mutation=mutation,
    )
    if seed % 2 == 1:
        cfg.drop_prob = 0.02  # stalls must surface as attributed, never as bad data
    return cfg


_BUILDERS = {"hermes": hermes_config, "zeus": zeus_config, "galene": galene_config}


@dataclass
class FuzzSummary:
    protocol: str
    runs: int = 0
    violations: list = field(default_factory=list)   # (seed, detail)
    alarms: list = field(default_factory=list)       # (seed, alarms)
    stalls: dict = field(default_factory=dict)
    ops: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations and not self.alarms

    @property
    def first_violation(self):
        return self.violations[0][0] if self.violations else None

    def to_text(self) -> str:
        lines = [f"protocol {self.protocol}", f"runs {self.runs}",
                 f"ops {self.ops}",
                 f"violations {len(self.violations)}",
                 f"alarms {len(self.alarms)}"]
        for seed, detail in self.violations[:10]:
            lines.append(f"violating_seed {seed} {detail}")
        for seed, alarms in self.alarms[:10]:
            lines.append(f"alarm_seed {seed} {alarms}")
        for why in sorted(self.stalls):
            lines.append(f"stall {why} {self.stalls[why]}")
        lines.append("result " + ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines) + "\n"


def _one(args):
    protocol, seed, mutation = args
    cfg = _BUILDERS[protocol](seed, mutation)
    rep = harness.run(cfg, max_ticks=FUZZ_MAX_TICKS)
    ops = sum(rep.ops.values())
    return (seed, rep.verdict, rep.violation, tuple(rep.alarms), rep.stalls, ops)


def run_matrix(protocol: str, seeds, jobs: int = 1, mutation: str = "",
               stop_at_first: bool = False) -> FuzzSummary:
    """Run the protocol's fault matrix over the seeds and summarize."""
    if protocol not in _BUILDERS:
        raise ValueError(f"no fuzz matrix for {protocol!r}")
    summary = FuzzSummary(protocol)
    work = [(protocol, s, mutation) for s in seeds]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.imap(_one, work, chunksize=8)
            results = list(results)
    else:
        results = map(_one, work)
    for seed, verdict, detail, alarms, stalls, ops in results:
        summary.runs += 1
        summary.ops += ops
        if verdict not in ("ok", "skipped"):
            summary.violations.append((seed, detail))
        if alarms:
            summary.alarms.append((seed, list(alarms)))
        for why, count in stalls.items():
            summary.stalls[why] = summary.stalls.get(why, 0) + count
        if stop_at_first and summary.violations:
            break
    return summary
