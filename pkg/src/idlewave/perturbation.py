"""Seeded fine-grained noise and long injected delays.

Random numbers come from SplitMix64 (Steele, Lea & Flood 2014), which is
counter based: the k-th output of a stream is ``mix64(base + k * GAMMA)``.
Each rank owns one stream whose base is ``mix64(seed + (rank + 1) * GAMMA)``,
so the draw for (rank, step) can be computed directly, in any order, on any
platform. Uniforms are ``((x >> 11) + 1) * 2**-53`` which lies in (0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


@dataclass(frozen=True)
class NoiseSpec:
    """Exponential execution noise with mean ``mean_relative_delay_E * t_exec``."""

    mean_relative_delay_E: float = 0.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.mean_relative_delay_E >= 0 or math.isinf(self.mean_relative_delay_E):
            raise ValueError("mean_relative_delay_E must be a finite nonnegative number")

    @property
    def active(self) -> bool:
        return self.enabled and self.mean_relative_delay_E > 0


@dataclass(frozen=True)
class DelaySpec:
    rank: int
    step: int
    duration_us: float

    def __post_init__(self) -> None:
        if not self.duration_us > 0:
            raise ValueError("delay duration_us must be positive")


def mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * _M1 & MASK64
    z = (z ^ (z >> 27)) * _M2 & MASK64
    return z ^ (z >> 31)


def rank_stream_base(seed: int, rank: int) -> int:
    return mix64((seed + (rank + 1) * GAMMA) & MASK64)


def uniform01(seed: int, rank: int, step: int) -> float:
    """Uniform in (0, 1] for one (rank, step) pair."""
    x = mix64((rank_stream_base(seed, rank) + step * GAMMA) & MASK64)
    return ((x >> 11) + 1) * 2.0**-53


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform_grid(seed: int, n_ranks: int, steps: Iterable[int] | int) -> np.ndarray:
    """Vectorised :func:`uniform01` over ranks x steps, shape (n_ranks, n_steps).

    An int ``steps`` means steps ``1..steps``.
    """
    if isinstance(steps, int):
        steps = range(1, steps + 1)
    step_arr = np.asarray(list(steps), dtype=np.uint64)
    bases = np.array([rank_stream_base(seed, p) for p in range(n_ranks)], dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = bases[:, None] + step_arr[None, :] * np.uint64(GAMMA)
        x = _mix64_np(z)
    return ((x >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0**-53


def exponential_from_uniform(u: np.ndarray | float, mean: float):
    """Inverse CDF of Exp(1/mean); ``u`` must lie in (0, 1]."""
    return -mean * np.log(u)


def sample_noise(spec: NoiseSpec, t_exec_us: float, seed: int, rank: int, step: int) -> float:
    """Noise added to the (rank, step) execution phase, in µs.

    The uniform is drawn even when noise is off, so streams stay aligned
    across noise levels for a fixed seed.
    """
    u = uniform01(seed, rank, step)
    if not spec.active:
        return 0.0
    return t_exec_us * float(-spec.mean_relative_delay_E * math.log(u))


def noise_matrix(spec: NoiseSpec, t_exec_us: float, seed: int, n_ranks: int, n_steps: int) -> np.ndarray:
    """Noise for every (rank, step), shape (n_ranks, n_steps); column k-1 is step k."""
    u = uniform_grid(seed, n_ranks, n_steps)
    if not spec.active:
        return np.zeros_like(u)
    return t_exec_us * (-spec.mean_relative_delay_E * np.log(u))


def injected_delay(rank: int, step: int, delays: Iterable[DelaySpec]) -> float:
    return float(sum(d.duration_us for d in delays if d.rank == rank and d.step == step))


def delay_matrix(delays: Iterable[DelaySpec], n_ranks: int, n_steps: int) -> np.ndarray:
    out = np.zeros((n_ranks, n_steps))
    for d in delays:
        out[d.rank, d.step - 1] += d.duration_us
    return out
