"""Experiment configuration: JSON schema, validation, and named presets.

A config is a JSON object. Scenario keys sit at the top level; ``analysis``
and ``output`` are optional sections. Every key, with its default::

    {
      "name": null,
      "n_ranks": <required>, "n_steps": <required>, "t_exec_us": <required>,
      "topology": {"direction": "unidirectional", "boundary": "open", "distance_d": 1},
      "protocol": {"message_size_bytes": 8192, "eager_limit_bytes": 16384,
                   "override": null, "eager_buffer_cap": null},
      "cost_model": {"latency_us": 1.0, "bandwidth_bytes_per_us": 3000.0},
      "noise": {"mean_relative_delay_E": 0.0, "enabled": true},
      "delays": [{"rank": .., "step": .., "duration_us": ..}],
      "seed": 0,
      "analysis": {"theta": 0.05, "window": 3, "seeds": [<seed>]},
      "output": {"dir": "out"}
    }

Unknown keys are rejected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .analysis import DEFAULT_THETA, DEFAULT_WINDOW
from .comm import Boundary, CostModel, Direction, ProtocolConfig, ProtocolOverride, Topology
from .engine import Scenario
from .perturbation import DelaySpec, NoiseSpec, uniform01


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    theta: float = DEFAULT_THETA
    window: int = DEFAULT_WINDOW
    seeds: tuple[int, ...] = ()
    out_dir: str = "out"
    name: str | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            object.__setattr__(self, "seeds", (self.scenario.seed,))
        object.__setattr__(self, "seeds", tuple(self.seeds))

    def to_dict(self) -> dict:
        d = {"name": self.name}
        d.update(self.scenario.to_dict())
        d["analysis"] = {"theta": self.theta, "window": self.window, "seeds": list(self.seeds)}
        d["output"] = {"dir": self.out_dir}
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, scenario=replace(self.scenario, seed=seed), seeds=(seed,))


_SCHEMA_TOP = {
    "name", "n_ranks", "n_steps", "t_exec_us", "topology", "protocol", "cost_model",
    "noise", "delays", "seed", "analysis", "output",
}
_SCHEMA_SECTIONS = {
    "topology": {"direction", "boundary", "distance_d"},
    "protocol": {"message_size_bytes", "eager_limit_bytes", "override", "eager_buffer_cap"},
    "cost_model": {"latency_us", "bandwidth_bytes_per_us"},
    "noise": {"mean_relative_delay_E", "enabled"},
    "analysis": {"theta", "window", "seeds"},
    "output": {"dir"},
}


def _check_keys(obj, allowed: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown key")


def _num(obj: dict, key: str, path: str, default=None, *, integer=False, minimum=None, exclusive=False):
    p = f"{path}.{key}" if path else key
    if key not in obj or obj[key] is None:
        if default is None:
            raise ConfigError(p, "required")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {type(v).__name__}")
    if integer and (not isinstance(v, int)):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(p, "expected an integer")
    if minimum is not None and (v <= minimum if exclusive else v < minimum):
        raise ConfigError(p, f"must be {'>' if exclusive else '>='} {minimum}, got {v}")
    return v


def _enum(obj: dict, key: str, path: str, enum_cls, default):
    p = f"{path}.{key}"
    v = obj.get(key, default)
    if v is None:
        return None
    try:
        return enum_cls(v)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ConfigError(p, f"expected one of {choices}, got {v!r}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    _check_keys(raw, _SCHEMA_TOP, "")
    for sec, keys in _SCHEMA_SECTIONS.items():
        if sec in raw:
            _check_keys(raw[sec], keys, sec)

    n_ranks = _num(raw, "n_ranks", "", integer=True, minimum=2)
    n_steps = _num(raw, "n_steps", "", integer=True, minimum=1)
    t_exec = float(_num(raw, "t_exec_us", "", minimum=0))

    topo_raw = raw.get("topology", {})
    topology = Topology(
        direction=_enum(topo_raw, "direction", "topology", Direction, "unidirectional"),
        boundary=_enum(topo_raw, "boundary", "topology", Boundary, "open"),
        distance_d=_num(topo_raw, "distance_d", "topology", 1, integer=True, minimum=1),
    )
    if topology.distance_d >= n_ranks:
        raise ConfigError("topology.distance_d", f"must be smaller than n_ranks={n_ranks}")

    pr = raw.get("protocol", {})
    cap = pr.get("eager_buffer_cap")
    protocol = ProtocolConfig(
        message_size_bytes=_num(pr, "message_size_bytes", "protocol", 8192, integer=True, minimum=0),
        eager_limit_bytes=_num(pr, "eager_limit_bytes", "protocol", 16384, integer=True, minimum=0),
        override=_enum(pr, "override", "protocol", ProtocolOverride, None),
        eager_buffer_cap=None if cap is None else _num(pr, "eager_buffer_cap", "protocol", integer=True, minimum=1),
    )

    cm = raw.get("cost_model", {})
    cost_model = CostModel(
        latency_us=float(_num(cm, "latency_us", "cost_model", 1.0, minimum=0)),
        bandwidth_bytes_per_us=float(_num(cm, "bandwidth_bytes_per_us", "cost_model", 3000.0, minimum=0, exclusive=True)),
    )

    nz = raw.get("noise", {})
    enabled = nz.get("enabled", True)
    if not isinstance(enabled, bool):
        raise ConfigError("noise.enabled", "expected true or false")
    noise = NoiseSpec(float(_num(nz, "mean_relative_delay_E", "noise", 0.0, minimum=0)), enabled)

    delays_raw = raw.get("delays", [])
    if not isinstance(delays_raw, list):
        raise ConfigError("delays", "expected a list")
    delays = []
    for i, d in enumerate(delays_raw):
        p = f"delays[{i}]"
        _check_keys(d, {"rank", "step", "duration_us"}, p)
        rank = _num(d, "rank", p, integer=True, minimum=0)
        step = _num(d, "step", p, integer=True, minimum=1)
        dur = float(_num(d, "duration_us", p, minimum=0, exclusive=True))
        if rank >= n_ranks:
            raise ConfigError(f"{p}.rank", f"rank {rank} outside [0, {n_ranks})")
        if step > n_steps:
            raise ConfigError(f"{p}.step", f"step {step} outside [1, {n_steps}]")
        delays.append(DelaySpec(rank, step, dur))

    seed = _num(raw, "seed", "", 0, integer=True, minimum=0)
    if seed >= 2**64:
        raise ConfigError("seed", "must fit in 64 bits")

    an = raw.get("analysis", {})
    theta = float(_num(an, "theta", "analysis", DEFAULT_THETA, minimum=0, exclusive=True))
    if theta >= 1:
        raise ConfigError("analysis.theta", "must be < 1")
    window = _num(an, "window", "analysis", DEFAULT_WINDOW, integer=True, minimum=1)
    seeds = an.get("seeds") or [seed]
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64 for s in seeds):
        raise ConfigError("analysis.seeds", "expected a list of unsigned 64-bit integers")

    out = raw.get("output", {})
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir", "expected a string")
    name = raw.get("name")
    if name is not None and not isinstance(name, str):
        raise ConfigError("name", "expected a string")

    scenario = Scenario(
        n_ranks=n_ranks,
        n_steps=n_steps,
        t_exec_us=t_exec,
        topology=topology,
        protocol_cfg=protocol,
        cost_model=cost_model,
        noise=noise,
        delays=tuple(delays),
        seed=seed,
    )
    return ExperimentConfig(scenario, theta, window, tuple(seeds), out_dir, name)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- presets

PHASE_US = 3000.0
LONG_DELAY_US = 4.5 * PHASE_US
SMALL_MSG = 16384
LARGE_MSG = 31080


def _single(direction: str, boundary: str, size: int, d: int = 1, n_ranks: int = 18, n_steps: int = 25) -> dict:
    return {
        "n_ranks": n_ranks,
        "n_steps": n_steps,
        "t_exec_us": PHASE_US,
        "topology": {"direction": direction, "boundary": boundary, "distance_d": d},
        "protocol": {"message_size_bytes": size, "eager_limit_bytes": SMALL_MSG},
        "delays": [{"rank": 5, "step": 1, "duration_us": LONG_DELAY_US}],
    }


def _sockets(kind: str) -> dict:
    delays = []
    for socket in range(10):
        dur = LONG_DELAY_US
        if kind == "half" and socket % 2 == 1:
            dur = LONG_DELAY_US / 2
        elif kind == "random":
            # 1 to 9 phases, drawn from the preset's own stream
            dur = PHASE_US * (1 + 8 * uniform01(4, socket, 1))
        delays.append({"rank": 10 * socket + 5, "step": 1, "duration_us": dur})
    return {
        "n_ranks": 100,
        "n_steps": 20,
        "t_exec_us": PHASE_US,
        "topology": {"direction": "bidirectional", "boundary": "periodic"},
        "protocol": {"message_size_bytes": SMALL_MSG, "eager_limit_bytes": SMALL_MSG},
        "delays": delays,
    }


def _damping(E: float) -> dict:
    return {
        "n_ranks": 36,
        "n_steps": 30,
        "t_exec_us": 1500.0,
        "topology": {"direction": "bidirectional", "boundary": "open"},
        "protocol": {"message_size_bytes": 8192, "eager_limit_bytes": SMALL_MSG},
        "noise": {"mean_relative_delay_E": E},
        "delays": [{"rank": 1, "step": 1, "duration_us": 6000.0}],
        "analysis": {"seeds": list(range(15))},
    }


def _decay() -> dict:
    return {
        "n_ranks": 40,
        "n_steps": 50,
        "t_exec_us": PHASE_US,
        "topology": {"direction": "unidirectional", "boundary": "open"},
        "protocol": {"message_size_bytes": 8192, "eager_limit_bytes": SMALL_MSG},
        "noise": {"mean_relative_delay_E": 0.25},
        "delays": [{"rank": 0, "step": 1, "duration_us": 90000.0}],
        "analysis": {"seeds": list(range(15))},
    }


PRESETS = {
    "chain": lambda: {**_single("unidirectional", "open", 8192, n_ranks=10, n_steps=10)},
    "eager-uni-open": lambda: _single("unidirectional", "open", SMALL_MSG),
    "eager-uni-ring": lambda: _single("unidirectional", "periodic", SMALL_MSG),
    "eager-bi-open": lambda: _single("bidirectional", "open", SMALL_MSG),
    "eager-bi-ring": lambda: _single("bidirectional", "periodic", SMALL_MSG),
    "rdv-uni-open": lambda: _single("unidirectional", "open", LARGE_MSG),
    "rdv-uni-ring": lambda: _single("unidirectional", "periodic", LARGE_MSG),
    "rdv-bi-open": lambda: _single("bidirectional", "open", LARGE_MSG),
    "rdv-bi-ring": lambda: _single("bidirectional", "periodic", LARGE_MSG),
    "sockets-equal": lambda: _sockets("equal"),
    "sockets-half": lambda: _sockets("half"),
    "sockets-random": lambda: _sockets("random"),
    "decay-noise": _decay,
    "rdv-uni-d2": lambda: _single("unidirectional", "open", LARGE_MSG, d=2, n_steps=24),
    "rdv-bi-d2": lambda: _single("bidirectional", "open", LARGE_MSG, d=2, n_steps=24),
    "damping-e0": lambda: _damping(0.0),
    "damping-e20": lambda: _damping(0.20),
    "damping-e25": lambda: _damping(0.25),
}


class UnknownPreset(KeyError):
    pass


def preset(name: str) -> ExperimentConfig:
    try:
        raw = PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None
    raw["name"] = name
    return config_from_dict(raw)
