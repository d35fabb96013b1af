"""Optimistic strong-scaling model for an MPI STREAM triad.

One compute-communicate cycle on ``n`` sockets takes the memory traffic
divided by the aggregate memory bandwidth plus the halo exchange with two
neighbors over the network. Compute and communication never overlap.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TriadModelParams:
    v_mem_bytes: float = 1.2e9
    b_mem_bytes_per_s: float = 40e9
    v_net_bytes: float = 2e6
    b_net_bytes_per_s: float = 3e9
    flops_total: float = 2 * 5e7
    # stores cost an extra read for the write-allocate, 4/3 of the working set
    write_allocate_factor: float = 4.0 / 3.0

    def __post_init__(self) -> None:
        for name in ("v_mem_bytes", "b_mem_bytes_per_s", "b_net_bytes_per_s", "flops_total"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.v_net_bytes < 0:
            raise ValueError("v_net_bytes must be nonnegative")
        if self.write_allocate_factor < 1:
            raise ValueError("write_allocate_factor must be >= 1")


def triad_runtime(n_sockets: int, p: TriadModelParams, include_network: bool = True) -> float:
    """Seconds per time step on ``n_sockets`` sockets."""
    if n_sockets < 1:
        raise ValueError("n_sockets must be >= 1")
    t = p.write_allocate_factor * p.v_mem_bytes / (n_sockets * p.b_mem_bytes_per_s)
    if include_network:
        t += 2 * p.v_net_bytes / p.b_net_bytes_per_s
    return t


def triad_performance(n_sockets: int, p: TriadModelParams, include_network: bool = True) -> float:
    """Flop/s for ``n_sockets`` sockets."""
    return p.flops_total / triad_runtime(n_sockets, p, include_network)


def network_bound(p: TriadModelParams) -> float:
    """Performance limit for infinitely many sockets."""
    if p.v_net_bytes == 0:
        return float("inf")
    return p.flops_total * p.b_net_bytes_per_s / (2 * p.v_net_bytes)


def model_table(sockets, p: TriadModelParams, processes_per_socket: int = 10) -> list[dict]:
    rows = []
    for n in sockets:
        rows.append(
            {
                "sockets": n,
                "processes": n * processes_per_socket,
                "runtime_s": triad_runtime(n, p),
                "perf_gflops": triad_performance(n, p) / 1e9,
                "exec_only_gflops": triad_performance(n, p, include_network=False) / 1e9,
            }
        )
    return rows
