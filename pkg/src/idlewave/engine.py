"""Deterministic bulk-synchronous execution engine.

Every rank repeats: compute for ``t_exec_us`` (plus noise and any injected
delay), post nonblocking sends/receives to its neighbors, then block in a
waitall. Step ``k`` of a rank starts when its step ``k-1`` waitall returns.

Rendezvous handshakes are acknowledged in posting order. Forward messages
(toward higher ranks) are posted first; a rank takes part in backward
rendezvous handshakes only once all of its forward handshakes have been
matched. With bidirectional rendezvous traffic this lets a stalled rank hold
back a partner two hops away within one step, which is why such idle waves
travel twice as fast.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .comm import CostModel, Protocol, ProtocolConfig, Topology, message_cost
from .perturbation import DelaySpec, NoiseSpec, delay_matrix, noise_matrix


class PhaseKind(str, enum.Enum):
    EXEC = "EXEC"
    INJECTED_DELAY = "INJECTED_DELAY"
    NOISE_DELAY = "NOISE_DELAY"
    COMM = "COMM"
    IDLE = "IDLE"


@dataclass(frozen=True)
class Scenario:
    n_ranks: int
    n_steps: int
    t_exec_us: float
    topology: Topology = field(default_factory=Topology)
    protocol_cfg: ProtocolConfig = field(default_factory=ProtocolConfig)
    cost_model: CostModel = field(default_factory=CostModel)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    delays: tuple[DelaySpec, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "delays", tuple(self.delays))
        if self.n_ranks < 2:
            raise ValueError("n_ranks must be >= 2")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_exec_us >= 0:
            raise ValueError("t_exec_us must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for d in self.delays:
            if not 0 <= d.rank < self.n_ranks:
                raise ValueError(f"delay rank {d.rank} outside [0, {self.n_ranks})")
            if not 1 <= d.step <= self.n_steps:
                raise ValueError(f"delay step {d.step} outside [1, {self.n_steps}]")
        if self.topology.distance_d >= self.n_ranks:
            raise ValueError(
                f"neighbor distance d={self.topology.distance_d} must be smaller than n_ranks={self.n_ranks}"
            )

    @property
    def protocol(self) -> Protocol:
        return self.protocol_cfg.protocol

    @property
    def message_cost_us(self) -> float:
        return message_cost(self.protocol_cfg.message_size_bytes, self.cost_model)

    def to_dict(self) -> dict:
        return {
            "n_ranks": self.n_ranks,
            "n_steps": self.n_steps,
            "t_exec_us": self.t_exec_us,
            "topology": {
                "direction": self.topology.direction.value,
                "boundary": self.topology.boundary.value,
                "distance_d": self.topology.distance_d,
            },
            "protocol": {
                "message_size_bytes": self.protocol_cfg.message_size_bytes,
                "eager_limit_bytes": self.protocol_cfg.eager_limit_bytes,
                "override": None if self.protocol_cfg.override is None else self.protocol_cfg.override.value,
                "eager_buffer_cap": self.protocol_cfg.eager_buffer_cap,
            },
            "cost_model": {
                "latency_us": self.cost_model.latency_us,
                "bandwidth_bytes_per_us": self.cost_model.bandwidth_bytes_per_us,
            },
            "noise": {
                "mean_relative_delay_E": self.noise.mean_relative_delay_E,
                "enabled": self.noise.enabled,
            },
            "delays": [
                {"rank": d.rank, "step": d.step, "duration_us": d.duration_us} for d in self.delays
            ],
            "seed": self.seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class PhaseRecord:
    rank: int
    step: int
    kind: PhaseKind
    t_start_us: float
    t_end_us: float

    @property
    def duration_us(self) -> float:
        return self.t_end_us - self.t_start_us


@dataclass(frozen=True)
class MessageCompletion:
    send_complete_us: float
    recv_complete_us: float


def resolve_message(send_post_us: float, recv_post_us: float, cost_us: float, protocol: Protocol) -> MessageCompletion:
    if protocol is Protocol.EAGER:
        # buffered: the sender is done as soon as it posts
        return MessageCompletion(send_post_us, max(recv_post_us, send_post_us + cost_us))
    start = max(send_post_us, recv_post_us)
    return MessageCompletion(start + cost_us, start + cost_us)


@dataclass(frozen=True, eq=False)
class Trace:
    """Simulated timelines. Arrays are indexed ``[rank, step - 1]``.

    ``compute_end`` already includes noise and injected delay; ``waitall``
    is when the step's communication phase returns.
    """

    scenario_digest: str
    ready: np.ndarray
    noise: np.ndarray
    delay: np.ndarray
    compute_end: np.ndarray
    waitall: np.ndarray
    t_exec_us: float
    comm_us: float

    @property
    def n_ranks(self) -> int:
        return self.waitall.shape[0]

    @property
    def n_steps(self) -> int:
        return self.waitall.shape[1]

    @property
    def final_time_us(self) -> np.ndarray:
        return self.waitall[:, -1]

    @property
    def comm_end(self) -> np.ndarray:
        return np.minimum(self.compute_end + self.comm_us, self.waitall)

    @property
    def idle(self) -> np.ndarray:
        """Waiting time beyond the plain communication cost, per (rank, step)."""
        return self.waitall - self.comm_end

    @cached_property
    def records(self) -> list[PhaseRecord]:
        out: list[PhaseRecord] = []
        comm_end = self.comm_end
        for p in range(self.n_ranks):
            for j in range(self.n_steps):
                k = j + 1
                t0 = float(self.ready[p, j])
                t1 = t0 + self.t_exec_us
                out.append(PhaseRecord(p, k, PhaseKind.EXEC, t0, t1))
                if self.noise[p, j] > 0:
                    t2 = t1 + float(self.noise[p, j])
                    out.append(PhaseRecord(p, k, PhaseKind.NOISE_DELAY, t1, t2))
                    t1 = t2
                if self.delay[p, j] > 0:
                    t2 = t1 + float(self.delay[p, j])
                    out.append(PhaseRecord(p, k, PhaseKind.INJECTED_DELAY, t1, t2))
                    t1 = t2
                ce = float(self.compute_end[p, j])
                wa = float(self.waitall[p, j])
                c_end = float(comm_end[p, j])
                out.append(PhaseRecord(p, k, PhaseKind.COMM, ce, c_end))
                if wa > c_end:
                    out.append(PhaseRecord(p, k, PhaseKind.IDLE, c_end, wa))
        return out

    def same_timeline(self, other: "Trace") -> bool:
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("ready", "noise", "delay", "compute_end", "waitall")
        )


class _Engine:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.n = scenario.n_ranks
        self.cost = scenario.message_cost_us
        self.base_protocol = scenario.protocol
        self.cap = scenario.protocol_cfg.eager_buffer_cap
        self.fwd, self.bwd = scenario.topology.messages(self.n)
        # per sender: recv_complete times of eager messages, for the buffer cap
        self.outstanding: list[list[float]] = [[] for _ in range(self.n)]

    def _protocol_for(self, sender: int, post: float) -> Protocol:
        if self.base_protocol is Protocol.RENDEZVOUS or self.cap is None:
            return self.base_protocol
        pending = [t for t in self.outstanding[sender] if t > post]
        self.outstanding[sender] = pending
        return Protocol.RENDEZVOUS if len(pending) >= self.cap else Protocol.EAGER

    def _resolve_group(self, pairs, post, done):
        """Resolve one posting group; ``post[p]`` is rank p's post time.

        Updates ``done`` (waitall candidates) in place and returns, per rank,
        the latest rendezvous handshake start it took part in.
        """
        matched = list(post)
        for s, r in pairs:
            proto = self._protocol_for(s, post[s])
            mc = resolve_message(post[s], post[r], self.cost, proto)
            if proto is Protocol.EAGER:
                if self.cap is not None:
                    self.outstanding[s].append(mc.recv_complete_us)
            else:
                start = max(post[s], post[r])
                matched[s] = max(matched[s], start)
                matched[r] = max(matched[r], start)
            done[s] = max(done[s], mc.send_complete_us)
            done[r] = max(done[r], mc.recv_complete_us)
        return matched

    def run(self) -> Trace:
        sc = self.sc
        n, K = self.n, sc.n_steps
        noise = noise_matrix(sc.noise, sc.t_exec_us, sc.seed, n, K)
        delay = delay_matrix(sc.delays, n, K)
        ready = np.zeros((n, K))
        ce_arr = np.zeros((n, K))
        wa_arr = np.zeros((n, K))
        prev = [0.0] * n
        for j in range(K):
            ce = [prev[p] + sc.t_exec_us + float(noise[p, j]) + float(delay[p, j]) for p in range(n)]
            # a communication phase never takes less than one message time
            done = [c + self.cost for c in ce]
            matched = self._resolve_group(self.fwd, ce, done)
            if self.bwd:
                # backward handshakes wait for the forward ones to match;
                # eager backward sends are unaffected
                self._resolve_group_backward(ce, matched, done)
            ready[:, j] = prev
            ce_arr[:, j] = ce
            wa_arr[:, j] = done
            prev = done
        return Trace(
            scenario_digest=sc.digest(),
            ready=ready,
            noise=noise,
            delay=delay,
            compute_end=ce_arr,
            waitall=wa_arr,
            t_exec_us=sc.t_exec_us,
            comm_us=self.cost,
        )

    def _resolve_group_backward(self, ce, matched, done):
        for s, r in self.bwd:
            proto = self._protocol_for(s, ce[s])
            if proto is Protocol.EAGER:
                mc = resolve_message(ce[s], ce[r], self.cost, proto)
                if self.cap is not None:
                    self.outstanding[s].append(mc.recv_complete_us)
            else:
                mc = resolve_message(matched[s], matched[r], self.cost, proto)
            done[s] = max(done[s], mc.send_complete_us)
            done[r] = max(done[r], mc.recv_complete_us)


def simulate(scenario: Scenario) -> Trace:
    """Run ``scenario`` to completion and return its trace."""
    return _Engine(scenario).run()
