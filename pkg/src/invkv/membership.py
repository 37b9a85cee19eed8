"""Lease-gated reliable-membership oracle.

A single controller (driven by the simulator) tracks the live-node set, an
epoch counter, and per-node lease expiries.  Reconfiguration removes
suspected nodes only once every lease has run out and only when the
survivors form a strict majority of the previous live set; survivors then
receive the new membership as individually delivered m-updates, so the
transition period where views disagree is exercised, not hidden.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .types import Epoch, NodeId

DEFAULT_LEASE_TICKS = 150
DEFAULT_RENEWAL_TICKS = 50


class MinoritySide(Exception):
    """Raised when the surviving set is not a majority; the shard stays
    unavailable and the epoch does not change."""


@dataclass(slots=True)
class Membership:
    epoch: Epoch
    live: frozenset
    lease_expiry: dict
    lease_duration: int


@dataclass(slots=True)
class ReconfigRequest:
    suspected: set
    requested_at: int


@dataclass
class MembershipService:
    """Controller-side state: authorizes renewals and reconfigurations."""

    nodes: int
    lease_duration: int = DEFAULT_LEASE_TICKS
    renewal_period: int = DEFAULT_RENEWAL_TICKS
    current: Membership = field(init=False)
    pending: ReconfigRequest | None = field(default=None, init=False)
    crashed: set = field(default_factory=set, init=False)

    def __post_init__(self):
        live = frozenset(range(self.nodes))
        self.current = Membership(
            epoch=0,
            live=live,
            lease_expiry={n: self.lease_duration for n in live},
            lease_duration=self.lease_duration,
        )

    def renew_leases(self, now: int, unreachable: set = frozenset()) -> bool:
        """Renew every live, uncrashed, reachable node's lease.

        A renewal issued while a reconfiguration is pending is rejected: the
        gate below relies on all leases draining before the epoch advances.
        """
        if self.pending is not None:
            return False
        for n in self.current.live:
            if n not in self.crashed and n not in unreachable:
                self.current.lease_expiry[n] = now + self.lease_duration
        return True

    def suspect(self, nodes: set, now: int) -> ReconfigRequest:
        """File (or extend) a reconfiguration request for suspected nodes."""
        suspected = set(nodes) & self.current.live
        if not suspected:
            raise ValueError("suspected set empty or already removed")
        if self.pending is None:
            self.pending = ReconfigRequest(suspected, now)
        else:
            self.pending.suspected |= suspected
        return self.pending

    def withdraw(self) -> None:
        """Drop a pending request (a partition healed before leases ran out)."""
        self.pending = None

    def ready_at(self) -> int:
        """Earliest tick at which the pending reconfiguration may apply."""
        return max(self.current.lease_expiry[n] for n in self.current.live)

    def reconfigure(self, now: int) -> Membership | None:
        """Apply the pending request: returns the new membership, None while
        deferred (leases still valid), or raises MinoritySide."""
        if self.pending is None:
            return None
        if now < self.ready_at():
            return None
        survivors = self.current.live - self.pending.suspected
        quorum = len(self.current.live) // 2 + 1
        if len(survivors) < quorum:
            raise MinoritySide(
                f"{sorted(survivors)} is not a majority of {sorted(self.current.live)}")
        self.pending = None
        self.current = Membership(
            epoch=self.current.epoch + 1,
            live=frozenset(survivors),
            lease_expiry={n: now + self.lease_duration for n in survivors},
            lease_duration=self.lease_duration,
        )
        return self.current

    def lease_valid(self, node: NodeId, now: int) -> bool:
        expiry = self.current.lease_expiry.get(node)
        return expiry is not None and now < expiry

    def is_operational(self, node: NodeId, now: int) -> bool:
        """A node serves requests only while live, leased, and uncrashed."""
        return (node in self.current.live
                and node not in self.crashed
                and self.lease_valid(node, now))
