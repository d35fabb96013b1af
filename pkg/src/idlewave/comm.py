"""Communication model: topology, protocol choice, Hockney message cost and
the analytic idle-wave propagation speed."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Direction(str, enum.Enum):
    UNIDIRECTIONAL = "unidirectional"
    BIDIRECTIONAL = "bidirectional"


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class Protocol(str, enum.Enum):
    EAGER = "eager"
    RENDEZVOUS = "rendezvous"


class ProtocolOverride(str, enum.Enum):
    FORCE_EAGER = "force_eager"
    FORCE_RENDEZVOUS = "force_rendezvous"


@dataclass(frozen=True)
class Topology:
    """Next-neighbor pattern on a chain or ring of ranks.

    A rank talks to every offset ``1..distance_d`` in each active direction.
    Unidirectional traffic flows from rank ``i`` to ``i + j``.
    """

    direction: Direction = Direction.UNIDIRECTIONAL
    boundary: Boundary = Boundary.OPEN
    distance_d: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if int(self.distance_d) != self.distance_d or self.distance_d < 1:
            raise ValueError(f"distance_d must be a positive integer, got {self.distance_d!r}")

    def _wrap(self, rank: int, n_ranks: int) -> int | None:
        if self.boundary is Boundary.PERIODIC:
            return rank % n_ranks
        return rank if 0 <= rank < n_ranks else None

    def forward_partners(self, rank: int, n_ranks: int) -> list[int]:
        """Ranks ``rank + j`` for j = 1..d (open chains drop out-of-range ones)."""
        out = []
        for j in range(1, self.distance_d + 1):
            q = self._wrap(rank + j, n_ranks)
            if q is not None:
                out.append(q)
        return out

    def backward_partners(self, rank: int, n_ranks: int) -> list[int]:
        out = []
        for j in range(1, self.distance_d + 1):
            q = self._wrap(rank - j, n_ranks)
            if q is not None:
                out.append(q)
        return out

    def messages(self, n_ranks: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        """Per-step (sender, receiver) pairs, split into the forward group and
        the backward group. The backward group is empty for unidirectional."""
        if self.distance_d >= n_ranks:
            raise ValueError(
                f"neighbor distance d={self.distance_d} must be smaller than n_ranks={n_ranks}"
            )
        fwd = [(s, r) for s in range(n_ranks) for r in self.forward_partners(s, n_ranks)]
        bwd: list[tuple[int, int]] = []
        if self.direction is Direction.BIDIRECTIONAL:
            bwd = [(s, r) for s in range(n_ranks) for r in self.backward_partners(s, n_ranks)]
        return fwd, bwd

    def hop_distance(self, src: int, dst: int, n_ranks: int, two_sided: bool) -> int | None:
        """Hops an idle wave needs from ``src`` to ``dst``.

        ``two_sided`` says whether the wave spreads against the data flow too
        (anything but unidirectional eager). ``None`` if unreachable.
        """
        fwd = dst - src
        back = src - dst
        if self.boundary is Boundary.PERIODIC:
            fwd %= n_ranks
            back %= n_ranks
        cands = [fwd] if fwd >= 0 else []
        if two_sided and back >= 0:
            cands.append(back)
        return min(cands) if cands else None


@dataclass(frozen=True)
class ProtocolConfig:
    """Message size and eager limit, both in bytes.

    ``eager_buffer_cap`` bounds the eager messages a sender may have
    outstanding (sent but not yet received); beyond it sends fall back to
    rendezvous. ``None`` means unbounded buffering.
    """

    message_size_bytes: int = 8192
    eager_limit_bytes: int = 16384
    override: ProtocolOverride | None = None
    eager_buffer_cap: int | None = None

    def __post_init__(self) -> None:
        if self.override is not None:
            object.__setattr__(self, "override", ProtocolOverride(self.override))
        if self.message_size_bytes < 0 or self.eager_limit_bytes < 0:
            raise ValueError("message and eager-limit sizes must be nonnegative")
        if self.eager_buffer_cap is not None and self.eager_buffer_cap < 1:
            raise ValueError("eager_buffer_cap must be >= 1 when set")

    @property
    def protocol(self) -> Protocol:
        return classify_protocol(self.message_size_bytes, self)


@dataclass(frozen=True)
class CostModel:
    """Hockney model: ``latency_us + size / bandwidth``."""

    latency_us: float = 1.0
    bandwidth_bytes_per_us: float = 3000.0

    def __post_init__(self) -> None:
        if self.latency_us < 0:
            raise ValueError("latency_us must be nonnegative")
        if not self.bandwidth_bytes_per_us > 0:
            raise ValueError("bandwidth_bytes_per_us must be positive")


def classify_protocol(size_bytes: int, cfg: ProtocolConfig) -> Protocol:
    if cfg.override is ProtocolOverride.FORCE_EAGER:
        return Protocol.EAGER
    if cfg.override is ProtocolOverride.FORCE_RENDEZVOUS:
        return Protocol.RENDEZVOUS
    # inclusive limit
    return Protocol.EAGER if size_bytes <= cfg.eager_limit_bytes else Protocol.RENDEZVOUS


def message_cost(size_bytes: int, cm: CostModel) -> float:
    """Time in µs to move one message of ``size_bytes``."""
    return cm.latency_us + size_bytes / cm.bandwidth_bytes_per_us


def sigma(direction: Direction, protocol: Protocol) -> int:
    if Direction(direction) is Direction.BIDIRECTIONAL and Protocol(protocol) is Protocol.RENDEZVOUS:
        return 2
    return 1


def propagation_speed_model(
    t_exec_us: float,
    t_comm_us: float,
    d: int,
    direction: Direction,
    protocol: Protocol,
) -> float:
    """Noise-free idle-wave speed in ranks per second."""
    period_us = t_exec_us + t_comm_us
    if period_us <= 0:
        raise ZeroDivisionError("t_exec_us + t_comm_us must be positive")
    if d < 1:
        raise ValueError("d must be >= 1")
    return sigma(direction, protocol) * d / period_us * 1e6


def spreads_both_ways(direction: Direction, protocol: Protocol) -> bool:
    """Eager unidirectional traffic is the only pattern whose idle wave
    travels with the data flow alone."""
    return not (Direction(direction) is Direction.UNIDIRECTIONAL and Protocol(protocol) is Protocol.EAGER)
