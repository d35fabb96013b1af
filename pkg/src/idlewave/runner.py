"""Scenario runs, seed sweeps, and trace/summary files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import median

import numpy as np

from . import analysis as an
from .comm import Boundary, propagation_speed_model, spreads_both_ways
from .config import ExperimentConfig, preset
from .engine import PhaseKind, Scenario, Trace, simulate

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("rank", "step", "kind", "t_start_us", "t_end_us")
SWEEP_PARAMETERS = ("E", "d", "message_size", "n_ranks")


# ------------------------------------------------------------------ files

def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    # records come out rank-major in time order already
    for r in trace.records:
        w.writerow((r.rank, r.step, r.kind.value, f"{r.t_start_us:.3f}", f"{r.t_end_us:.3f}"))
    return buf.getvalue()


def trace_from_csv(text: str, scenario: Scenario) -> Trace:
    """Rebuild a trace from its CSV (times carry the file's 3-digit rounding)."""
    n, K = scenario.n_ranks, scenario.n_steps
    ready = np.full((n, K), np.nan)
    ce = np.full((n, K), np.nan)
    wa = np.full((n, K), np.nan)
    noise = np.zeros((n, K))
    delay = np.zeros((n, K))
    has_idle = np.zeros((n, K), dtype=bool)
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
        raise an.ScenarioMismatch(f"trace header must be {','.join(TRACE_COLUMNS)}")
    for row in reader:
        p, k = int(row["rank"]), int(row["step"])
        if not (0 <= p < n and 1 <= k <= K):
            raise an.ScenarioMismatch(f"record (rank={p}, step={k}) outside the scenario")
        j = k - 1
        t0, t1 = float(row["t_start_us"]), float(row["t_end_us"])
        kind = PhaseKind(row["kind"])
        if kind is PhaseKind.EXEC:
            ready[p, j] = t0
        elif kind is PhaseKind.NOISE_DELAY:
            noise[p, j] = t1 - t0
        elif kind is PhaseKind.INJECTED_DELAY:
            delay[p, j] = t1 - t0
        elif kind is PhaseKind.COMM:
            ce[p, j] = t0
        elif kind is PhaseKind.IDLE:
            has_idle[p, j] = True
        wa[p, j] = t1 if np.isnan(wa[p, j]) else max(wa[p, j], t1)
    if np.isnan(ready).any() or np.isnan(ce).any():
        raise an.ScenarioMismatch("trace does not cover every (rank, step) of the scenario")
    # rounding must not invent idle time where the file recorded none
    cost = scenario.message_cost_us
    wa = np.where(has_idle, wa, np.minimum(wa, ce + cost))
    return Trace(
        scenario_digest=scenario.digest(),
        ready=ready,
        noise=noise,
        delay=delay,
        compute_end=ce,
        waitall=wa,
        t_exec_us=scenario.t_exec_us,
        comm_us=scenario.message_cost_us,
    )


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(x):
    """JSON-safe floats (NaN/inf become null)."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return _clean(x.item())
    return x


# --------------------------------------------------------------- analysis

def injections(scenario: Scenario) -> list[tuple[int, int]]:
    return sorted({(d.rank, d.step) for d in scenario.delays})


def _front_summary(fr: an.WaveFronts, idle: an.IdleMatrix, scenario: Scenario) -> dict:
    inj_rank, inj_step = fr.injection
    reached = fr.reached
    n = scenario.n_ranks
    thr = fr.threshold_theta * idle.t_exec_us
    # ranks on the data-flow side vs the opposite side of the injection
    if not idle.two_sided:
        downstream = sorted(reached)
    elif idle.topology.boundary is Boundary.PERIODIC:
        downstream = sorted(p for p in reached if 0 < (p - inj_rank) % n <= n // 2)
    else:
        downstream = sorted(p for p in reached if p > inj_rank)
    upstream = sorted(p for p in reached if p not in downstream)
    last = max(reached.items(), key=lambda kv: (kv[1].step, kv[1].hop), default=None)
    inj_quiet_after = bool((idle.idle_us[inj_rank, inj_step:] < thr).all())
    out = {
        "injection": {"rank": inj_rank, "step": inj_step},
        "n_reached": len(reached),
        "max_hop": max((a.hop for a in reached.values()), default=0),
        "reached_ranks": sorted(reached),
        "downstream_ranks": downstream,
        "upstream_ranks": upstream,
        "two_sided": bool(upstream) and bool(downstream),
        "last_rank": None if last is None else last[0],
        "last_step": None if last is None else last[1].step,
        "injection_rank_idle_after": not inj_quiet_after,
        "arrivals": [
            {"rank": p, "hop": a.hop, "step": a.step, "t_us": a.t_us} for p, a in sorted(reached.items())
        ],
    }
    try:
        sp = an.estimate_speed(fr)
        out["speed"] = {"v_ranks_per_s": sp.v_ranks_per_s, "fit_r2": sp.fit_r2, "n_points": sp.n_points}
    except an.InsufficientPoints as exc:
        out["speed"] = {"error": str(exc)}
    return out


def analyze(trace: Trace, cfg: ExperimentConfig, baseline: Trace | None = None) -> dict:
    """All analyses for one trace. ``baseline`` is the same scenario without
    injected delays; with noise on, idle is measured relative to it."""
    sc = cfg.scenario
    idle = an.idle_matrix(trace, sc)
    wave_idle = idle
    if baseline is not None and sc.noise.active:
        wave_idle = an.excess_idle(idle, an.idle_matrix(baseline, sc))
    fronts = [an.detect_fronts(wave_idle, inj, cfg.theta) for inj in injections(sc)]
    v_model = propagation_speed_model(
        sc.t_exec_us, sc.message_cost_us, sc.topology.distance_d, sc.topology.direction, sc.protocol
    )
    res: dict = {
        "protocol": sc.protocol.value,
        "message_cost_us": sc.message_cost_us,
        "two_sided_propagation": spreads_both_ways(sc.topology.direction, sc.protocol),
        "speed_model_ranks_per_s": v_model,
        "idle_total_by_rank_us": idle.idle_us.sum(axis=1).tolist(),
        "fronts": [_front_summary(f, wave_idle, sc) for f in fronts],
    }
    if fronts:
        try:
            dec = an.estimate_decay(wave_idle, fronts[0], cfg.window)
            res["decay"] = {
                "beta_us_per_rank": dec.beta_us_per_rank,
                "fit_r2": dec.fit_r2,
                "amplitude_us": {str(k): v for k, v in dec.per_rank_amplitude_us.items()},
            }
        except an.InsufficientPoints as exc:
            res["decay"] = {"error": str(exc)}
        rep = an.detect_cancellation(fronts, sc.topology, wave_idle)
        res["cancellation"] = [
            {
                "rank_a": e.rank_a,
                "rank_b": e.rank_b,
                "meet_rank": e.meet_rank,
                "meet_step": e.meet_step,
                "hops_a": e.hops_a,
                "hops_b": e.hops_b,
                "kind": e.kind,
                "survivors": list(e.survivors),
            }
            for e in rep.events
        ]
    if baseline is not None:
        res["excess_runtime_us"] = an.excess_runtime(trace, baseline)
    return res


# ------------------------------------------------------------------- runs

@dataclass(frozen=True)
class RunArtifacts:
    trace: Trace
    summary: dict
    trace_path: Path | None = None
    summary_path: Path | None = None


def run_config(cfg: ExperimentConfig) -> tuple[Trace, dict]:
    sc = cfg.scenario
    trace = simulate(sc)
    baseline = simulate(replace(sc, delays=())) if sc.delays else None
    summary = {
        "preset": cfg.name,
        "config": cfg.to_dict(),
        "seed": sc.seed,
        "scenario_digest": trace.scenario_digest,
        "final_time_us": trace.final_time_us.tolist(),
        "runtime_us": float(trace.final_time_us.max()),
        "analysis": analyze(trace, cfg, baseline),
    }
    return trace, _clean(summary)


def run_scenario(target: str | ExperimentConfig, out_dir: str | Path | None = None, write: bool = True) -> RunArtifacts:
    """Simulate a preset (by name) or a config; write ``<name>.trace.csv``
    and ``<name>.summary.json`` into ``out_dir`` unless ``write`` is false."""
    cfg = preset(target) if isinstance(target, str) else target
    trace, summary = run_config(cfg)
    if not write:
        return RunArtifacts(trace, summary)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    stem = cfg.name or "run"
    tpath = out / f"{stem}.trace.csv"
    spath = out / f"{stem}.summary.json"
    try:
        _atomic_write(tpath, trace_to_csv(trace))
        _atomic_write(spath, json.dumps(summary, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc.strerror or exc}") from exc
    log.info("wrote %s and %s", tpath, spath)
    return RunArtifacts(trace, summary, tpath, spath)


# ----------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    parameter: str
    values: tuple
    repetitions: int = 15

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
        if not self.values:
            raise ValueError("a sweep needs at least one value")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def seeds(self) -> list[int]:
        """The base config's seed list, extended consecutively if too short."""
        seeds = list(self.base.seeds)
        nxt = max(seeds) + 1
        while len(seeds) < self.repetitions:
            seeds.append(nxt)
            nxt += 1
        return seeds[: self.repetitions]


def apply_parameter(sc: Scenario, parameter: str, value) -> Scenario:
    if parameter == "E":
        return replace(sc, noise=replace(sc.noise, mean_relative_delay_E=float(value)))
    if parameter == "d":
        return replace(sc, topology=replace(sc.topology, distance_d=int(value)))
    if parameter == "message_size":
        return replace(sc, protocol_cfg=replace(sc.protocol_cfg, message_size_bytes=int(value)))
    if parameter == "n_ranks":
        return replace(sc, n_ranks=int(value))
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def _one_run(args) -> dict:
    cfg, parameter, value, seed = args
    sc = replace(apply_parameter(cfg.scenario, parameter, value), seed=seed)
    run_cfg = replace(cfg, scenario=sc, seeds=(seed,))
    trace = simulate(sc)
    baseline = simulate(replace(sc, delays=()))
    idle = an.idle_matrix(trace, sc)
    wave_idle = an.excess_idle(idle, an.idle_matrix(baseline, sc)) if sc.noise.active else idle
    row = {"value": value, "seed": seed, "beta": math.nan, "v_fit": math.nan}
    inj = injections(sc)
    if inj:
        fr = an.detect_fronts(wave_idle, inj[0], run_cfg.theta)
        try:
            row["beta"] = an.estimate_decay(wave_idle, fr, run_cfg.window).beta_us_per_rank
        except an.InsufficientPoints:
            pass
        try:
            row["v_fit"] = an.estimate_speed(fr).v_ranks_per_s
        except an.InsufficientPoints:
            pass
    row["excess_runtime_us"] = an.excess_runtime(trace, baseline)
    return row


def _stats(xs: list[float]) -> tuple[float, float, float]:
    xs = sorted(x for x in xs if not math.isnan(x))
    if not xs:
        return (math.nan, math.nan, math.nan)
    # + 0.0 turns a -0.0 into 0.0
    return (median(xs) + 0.0, xs[0] + 0.0, xs[-1] + 0.0)


SWEEP_COLUMNS = (
    "parameter", "value", "runs",
    "beta_median", "beta_min", "beta_max",
    "v_median", "v_min", "v_max",
    "excess_median", "excess_min", "excess_max",
)


def run_sweep(sweep: SweepSpec, jobs: int = 1) -> list[dict]:
    """Median/min/max of decay rate, front speed and excess runtime per value."""
    tasks = [(sweep.base, sweep.parameter, v, s) for v in sweep.values for s in sweep.seeds()]
    for _, p, v, _ in tasks[:: sweep.repetitions]:
        try:
            apply_parameter(sweep.base.scenario, p, v)
        except ValueError as exc:
            raise ValueError(f"sweep {p}={v}: {exc}") from exc
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_one_run, tasks))
    else:
        runs = [_one_run(t) for t in tasks]
    rows = []
    for v in sweep.values:
        mine = sorted((r for r in runs if r["value"] == v), key=lambda r: r["seed"])
        b = _stats([r["beta"] for r in mine])
        s = _stats([r["v_fit"] for r in mine])
        e = _stats([r["excess_runtime_us"] for r in mine])
        rows.append(
            dict(
                zip(
                    SWEEP_COLUMNS,
                    (sweep.parameter, v, len(mine), *b, *s, *e),
                )
            )
        )
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()})
    return buf.getvalue()


def parse_sweep(text: str) -> SweepSpec:
    """Sweep file: ``{"base": <config> | "preset": name, "parameter": ..,
    "values": [..], "repetitions": n}``."""
    from .config import ConfigError, config_from_dict

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "expected an object")
    allowed = {"base", "preset", "parameter", "values", "repetitions"}
    for k in raw:
        if k not in allowed:
            raise ConfigError(k, "unknown key")
    if ("base" in raw) == ("preset" in raw):
        raise ConfigError("base", "give exactly one of base or preset")
    base = preset(raw["preset"]) if "preset" in raw else config_from_dict(raw["base"])
    if raw.get("parameter") not in SWEEP_PARAMETERS:
        raise ConfigError("parameter", f"expected one of {', '.join(SWEEP_PARAMETERS)}")
    values = raw.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("values", "expected a non-empty list")
    reps = raw.get("repetitions", 15)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError("repetitions", "expected a positive integer")
    return SweepSpec(base, raw["parameter"], tuple(values), reps)


__all__ = [
    "RunArtifacts",
    "SweepSpec",
    "analyze",
    "parse_sweep",
    "run_config",
    "run_scenario",
    "run_sweep",
    "sweep_to_csv",
    "trace_from_csv",
    "trace_to_csv",
]
