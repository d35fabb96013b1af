"""Idle-period extraction and idle-wave measurements on simulated traces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm import Boundary, Protocol, Topology, spreads_both_ways
from .engine import Scenario, Trace

DEFAULT_THETA = 0.05
DEFAULT_WINDOW = 3


class InsufficientPoints(ValueError):
    """Too few front arrivals to fit a line."""


class ScenarioMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IdleMatrix:
    """Idle time per (rank, step), indexed ``[rank, step - 1]``.

    ``idle_start_us`` holds the wall-clock time each step's idle period
    begins. ``baseline_comm_us`` is the per-message cost already removed from
    every communication phase.
    """

    idle_us: np.ndarray
    idle_start_us: np.ndarray
    baseline_comm_us: float
    t_exec_us: float
    topology: Topology
    protocol: Protocol

    @property
    def n_ranks(self) -> int:
        return self.idle_us.shape[0]

    @property
    def n_steps(self) -> int:
        return self.idle_us.shape[1]

    @property
    def two_sided(self) -> bool:
        return spreads_both_ways(self.topology.direction, self.protocol)

    def hop(self, src: int, dst: int) -> int | None:
        return self.topology.hop_distance(src, dst, self.n_ranks, self.two_sided)


@dataclass(frozen=True)
class Arrival:
    t_us: float
    step: int
    hop: int


@dataclass(frozen=True)
class WaveFronts:
    injection: tuple[int, int]
    arrivals: dict[int, Arrival | None]
    threshold_theta: float
    max_hop: int = 0

    @property
    def reached(self) -> dict[int, Arrival]:
        return {p: a for p, a in self.arrivals.items() if a is not None}


@dataclass(frozen=True)
class SpeedEstimate:
    v_ranks_per_s: float
    fit_r2: float
    n_points: int


@dataclass(frozen=True)
class DecayEstimate:
    beta_us_per_rank: float
    per_rank_amplitude_us: dict[int, float]
    fit_r2: float


@dataclass(frozen=True)
class CancellationEvent:
    rank_a: int
    rank_b: int
    meet_rank: int
    meet_step: int
    hops_a: int
    hops_b: int
    kind: str  # "full" or "partial"
    survivors: tuple[int, ...] = ()


@dataclass(frozen=True)
class CancellationReport:
    events: list[CancellationEvent] = field(default_factory=list)

    @property
    def all_full(self) -> bool:
        return bool(self.events) and all(e.kind == "full" for e in self.events)


def idle_matrix(trace: Trace, scenario: Scenario) -> IdleMatrix:
    if (trace.n_ranks, trace.n_steps) != (scenario.n_ranks, scenario.n_steps):
        raise ScenarioMismatch(
            f"trace is {trace.n_ranks}x{trace.n_steps} but scenario is {scenario.n_ranks}x{scenario.n_steps}"
        )
    return IdleMatrix(
        idle_us=trace.idle,
        idle_start_us=trace.comm_end,
        baseline_comm_us=trace.comm_us,
        t_exec_us=scenario.t_exec_us,
        topology=scenario.topology,
        protocol=scenario.protocol,
    )


def excess_idle(idle: IdleMatrix, baseline: IdleMatrix) -> IdleMatrix:
    """Idle that a same-seed baseline run does not have, clipped at zero.

    Useful under noise: it isolates the idle wave from noise-induced waiting.
    """
    if idle.idle_us.shape != baseline.idle_us.shape:
        raise ScenarioMismatch("idle matrices differ in shape")
    return IdleMatrix(
        idle_us=np.clip(idle.idle_us - baseline.idle_us, 0.0, None),
        idle_start_us=idle.idle_start_us,
        baseline_comm_us=idle.baseline_comm_us,
        t_exec_us=idle.t_exec_us,
        topology=idle.topology,
        protocol=idle.protocol,
    )


def detect_fronts(idle: IdleMatrix, injection: tuple[int, int], theta: float = DEFAULT_THETA) -> WaveFronts:
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    inj_rank, inj_step = injection
    thr = theta * idle.t_exec_us
    arrivals: dict[int, Arrival | None] = {}
    max_hop = 0
    for p in range(idle.n_ranks):
        if p == inj_rank:
            continue
        hop = idle.hop(inj_rank, p)
        arrivals[p] = None
        if hop is None:
            continue
        max_hop = max(max_hop, hop)
        row = idle.idle_us[p, inj_step - 1 :]
        hits = np.nonzero(row >= thr)[0]
        if hits.size:
            j = inj_step - 1 + int(hits[0])
            arrivals[p] = Arrival(float(idle.idle_start_us[p, j]), j + 1, hop)
    return WaveFronts(injection=(inj_rank, inj_step), arrivals=arrivals, threshold_theta=theta, max_hop=max_hop)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``y = a + b x``; returns (a, b, r^2)."""
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise InsufficientPoints("all points share one abscissa")
    b = float(((x - xm) * (y - ym)).sum()) / sxx
    a = float(ym - b * xm)
    ss_tot = float(((y - ym) ** 2).sum())
    ss_res = float(((y - a - b * x) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return a, b, r2


def leading_edge(fronts: WaveFronts) -> list[tuple[float, int]]:
    """(time, farthest hop reached so far) at every advance of the front.

    Ranks reached in the same instant collapse onto the farthest one, so a
    wave that covers two ranks per period yields one point per period. A
    final advance cut short by the end of the chain (or the far side of the
    ring) is dropped.
    """
    pts = sorted((a.t_us, a.hop) for a in fronts.reached.values())
    edge: list[tuple[float, int]] = []
    best = 0
    i = 0
    while i < len(pts):
        t = pts[i][0]
        far = pts[i][1]
        while i < len(pts) and pts[i][0] == t:
            far = max(far, pts[i][1])
            i += 1
        if far > best:
            best = far
            edge.append((t, far))
    if len(edge) >= 3 and edge[-1][1] == fronts.max_hop:
        if edge[-1][1] - edge[-2][1] < edge[-2][1] - edge[-3][1]:
            edge.pop()
    return edge


def estimate_speed(fronts: WaveFronts) -> SpeedEstimate:
    edge = leading_edge(fronts)
    if len(edge) < 3:
        raise InsufficientPoints(f"need >= 3 front points, have {len(edge)}")
    t = np.array([e[0] for e in edge])
    h = np.array([e[1] for e in edge], dtype=float)
    _, slope, r2 = _linfit(h, t)
    if slope <= 0:
        raise InsufficientPoints("front does not advance in time")
    return SpeedEstimate(v_ranks_per_s=1e6 / slope, fit_r2=r2, n_points=len(edge))


def estimate_decay(idle: IdleMatrix, fronts: WaveFronts, window: int = DEFAULT_WINDOW) -> DecayEstimate:
    """Mean amplitude loss per rank of travel, in µs/rank.

    A rank's amplitude is its largest single idle period within ``window``
    steps from the front's arrival.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    amps: dict[int, float] = {}
    hops = []
    for p, a in sorted(fronts.reached.items()):
        j = a.step - 1
        amps[p] = float(idle.idle_us[p, j : j + window].max())
        hops.append(a.hop)
    if len(amps) < 3:
        raise InsufficientPoints(f"need >= 3 reached ranks, have {len(amps)}")
    x = np.array(hops, dtype=float)
    y = np.array(list(amps.values()))
    if np.all(x == x[0]):
        raise InsufficientPoints("all reached ranks share one hop distance")
    _, slope, r2 = _linfit(x, y)
    return DecayEstimate(beta_us_per_rank=0.0 - slope, per_rank_amplitude_us=amps, fit_r2=r2)


def _first_hits(idle: IdleMatrix, thr: float, from_step: int) -> list[int | None]:
    out: list[int | None] = []
    for p in range(idle.n_ranks):
        hits = np.nonzero(idle.idle_us[p, from_step - 1 :] >= thr)[0]
        out.append(from_step + int(hits[0]) if hits.size else None)
    return out


def detect_cancellation(
    fronts_list: list[WaveFronts], topology: Topology, idle: IdleMatrix
) -> CancellationReport:
    """Locate where neighboring counter-propagating idle waves meet and
    whether either survives the encounter.

    On a ring, a lone injection whose wave spreads both ways meets itself on
    the far side; that encounter is reported as a pair of the injection with
    itself.
    """
    if not fronts_list or not idle.two_sided:
        return CancellationReport()
    n = idle.n_ranks
    periodic = topology.boundary is Boundary.PERIODIC
    inj = sorted({f.injection for f in fronts_list})
    ranks = [r for r, _ in inj]
    if len(inj) == 1 and not periodic:
        return CancellationReport()
    theta = min(f.threshold_theta for f in fronts_list)
    thr = theta * idle.t_exec_us
    first = _first_hits(idle, thr, min(s for _, s in inj))

    pairs = list(zip(ranks, ranks[1:]))
    if periodic:
        pairs.append((ranks[-1], ranks[0]))

    events = []
    for a, b in pairs:
        span = (b - a) % n if periodic else b - a
        if span == 0:
            span = n
        seg = [(i, (a + i) % n) for i in range(1, span)]
        timed = [(first[p], i, p) for i, p in seg if first[p] is not None]
        if not timed:
            continue
        meet_step = max(t for t, _, _ in timed)
        # lowest offset among the ranks reached last
        _, m, meet_rank = min((i, i, p) for t, i, p in timed if t == meet_step)
        hops_a, hops_b = m, span - m
        horizon = min(idle.n_steps, meet_step + span)
        survivors = []
        toward_b = [p for i, p in seg if i > m] + [b]
        toward_a = [p for i, p in seg if i < m] + [a]
        if _active_after(idle, toward_b, meet_step, horizon, thr):
            survivors.append(a)
        if _active_after(idle, toward_a, meet_step, horizon, thr):
            survivors.append(b)
        events.append(
            CancellationEvent(
                rank_a=a,
                rank_b=b,
                meet_rank=meet_rank,
                meet_step=meet_step,
                hops_a=hops_a,
                hops_b=hops_b,
                kind="partial" if survivors else "full",
                survivors=tuple(survivors),
            )
        )
    return CancellationReport(events)


def _active_after(idle: IdleMatrix, ranks: list[int], after_step: int, until_step: int, thr: float) -> bool:
    if until_step <= after_step:
        return False
    block = idle.idle_us[ranks, after_step:until_step]
    return bool((block >= thr).any())


def excess_runtime(trace_with_delay: Trace, trace_baseline: Trace) -> float:
    """End-to-end runtime increase caused by injected delays, in µs.

    Runtime is the latest completion over all ranks. Both traces must share
    the noise stream so the difference isolates the delay.
    """
    if trace_with_delay.waitall.shape != trace_baseline.waitall.shape:
        raise ScenarioMismatch("traces differ in ranks or steps")
    if not np.array_equal(trace_with_delay.noise, trace_baseline.noise):
        raise ScenarioMismatch("traces were produced with different noise streams")
    return float(trace_with_delay.final_time_us.max() - trace_baseline.final_time_us.max())


def excess_by_rank(trace_with_delay: Trace, trace_baseline: Trace) -> np.ndarray:
    """Per-rank completion-time increase (with minus without delay)."""
    if trace_with_delay.waitall.shape != trace_baseline.waitall.shape:
        raise ScenarioMismatch("traces differ in ranks or steps")
    return trace_with_delay.final_time_us - trace_baseline.final_time_us
