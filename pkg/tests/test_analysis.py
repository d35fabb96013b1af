from dataclasses import replace
from statistics import median

import numpy as np
import pytest

from idlewave import analysis as an
from idlewave.comm import Boundary, CostModel, Direction, Protocol, Topology
from idlewave.config import preset
from idlewave.engine import Scenario, simulate
from idlewave.perturbation import DelaySpec, NoiseSpec


def _idle(mat, t_exec=3000.0, topo=Topology(), protocol=Protocol.EAGER):
    mat = np.asarray(mat, dtype=float)
    return an.IdleMatrix(mat, np.zeros_like(mat), 0.0, t_exec, topo, protocol)


def _run(name, **changes):
    sc = preset(name).scenario
    if changes:
        sc = replace(sc, **changes)
    return sc, simulate(sc)


def test_zero_matrix_and_no_arrivals():
    sc = Scenario(6, 5, 100.0)
    im = an.idle_matrix(simulate(sc), sc)
    assert np.all(im.idle_us == 0)
    fr = an.detect_fronts(im, (0, 1))
    assert fr.reached == {}


def test_dimension_mismatch():
    sc = Scenario(6, 5, 100.0)
    with pytest.raises(an.ScenarioMismatch):
        an.idle_matrix(simulate(sc), Scenario(6, 4, 100.0))


def test_eager_uni_open_band():
    sc, tr = _run("eager-uni-open")
    im = an.idle_matrix(tr, sc)
    assert np.all(im.idle_us[:5] == 0)
    for p in range(6, 18):
        hits = np.nonzero(im.idle_us[p] > 0)[0]
        assert hits[0] == p - 6  # one rank per step, starting in step 1


def test_six_rank_idle_diagonal():
    D = 200.0
    sc = Scenario(6, 8, 100.0, cost_model=CostModel(0.0, 1e30), delays=(DelaySpec(0, 1, D),))
    im = an.idle_matrix(simulate(sc), sc)
    for p in range(1, 6):
        assert im.idle_us[p, p - 1] == D


def test_eager_uni_ring_fronts_wrap():
    sc, tr = _run("eager-uni-ring")
    fr = an.detect_fronts(an.idle_matrix(tr, sc), (5, 1))
    reached = fr.reached
    assert len(reached) == 17
    times = [a.t_us for a in sorted(reached.values(), key=lambda a: a.hop)]
    assert times == sorted(times) and len(set(times)) == 17


def test_eager_bi_ring_meets_at_14():
    sc, tr = _run("eager-bi-ring")
    fr = an.detect_fronts(an.idle_matrix(tr, sc), (5, 1))
    assert len(fr.reached) == 17
    assert fr.reached[14].hop == 9
    assert fr.reached[13].step == fr.reached[15].step
    assert fr.reached[14].step == fr.reached[13].step + 1


def test_speed_synthetic_line():
    arr = {p: an.Arrival(3000.0 * p, p, p) for p in range(1, 8)}
    est = an.estimate_speed(an.WaveFronts((0, 1), arr, 0.05, max_hop=20))
    assert est.v_ranks_per_s == pytest.approx(333.333, rel=1e-5)
    assert est.fit_r2 == pytest.approx(1.0)


def test_speed_needs_three_points():
    arr = {1: an.Arrival(1.0, 1, 1), 2: an.Arrival(2.0, 2, 2)}
    with pytest.raises(an.InsufficientPoints):
        an.estimate_speed(an.WaveFronts((0, 1), arr, 0.05, 5))


def test_speed_matches_model_eager_uni_open():
    sc, tr = _run("eager-uni-open")
    est = an.estimate_speed(an.detect_fronts(an.idle_matrix(tr, sc), (5, 1)))
    assert est.v_ranks_per_s == pytest.approx(1e6 / (3000 + sc.message_cost_us), rel=0.02)


def test_decay_synthetic():
    mat = np.zeros((4, 6))
    for p, amp in [(1, 9000), (2, 8000), (3, 7000)]:
        mat[p, p] = amp
    im = _idle(mat)
    fr = an.detect_fronts(im, (0, 1))
    dec = an.estimate_decay(im, fr)
    assert dec.beta_us_per_rank == pytest.approx(1000.0)
    assert set(dec.per_rank_amplitude_us) == {1, 2, 3}


def test_decay_noise_free_is_zero():
    sc, tr = _run("eager-uni-open")
    im = an.idle_matrix(tr, sc)
    dec = an.estimate_decay(im, an.detect_fronts(im, (5, 1)))
    assert dec.beta_us_per_rank == pytest.approx(0.0, abs=1e-6)
    assert all(v >= 0 for v in dec.per_rank_amplitude_us.values())


def test_detect_fronts_validates_theta():
    with pytest.raises(ValueError):
        an.detect_fronts(_idle(np.zeros((3, 3))), (0, 1), theta=0)


def test_single_injection_no_cancellation_on_chain():
    sc, tr = _run("eager-bi-open")
    im = an.idle_matrix(tr, sc)
    rep = an.detect_cancellation([an.detect_fronts(im, (5, 1))], sc.topology, im)
    assert rep.events == []


def _cancel(name):
    sc, tr = _run(name)
    im = an.idle_matrix(tr, sc)
    fronts = [an.detect_fronts(im, (d.rank, d.step)) for d in sc.delays]
    return an.detect_cancellation(fronts, sc.topology, im)


def test_sockets_equal_full_cancellation_after_five_hops():
    rep = _cancel("sockets-equal")
    assert len(rep.events) == 10 and rep.all_full
    for e in rep.events:
        assert (e.hops_a, e.hops_b) == (5, 5)


def test_sockets_half_partial_longer_waves_survive():
    rep = _cancel("sockets-half")
    assert rep.events and not rep.all_full
    survivors = {s for e in rep.events for s in e.survivors}
    assert survivors and all((s - 5) // 10 % 2 == 0 for s in survivors)


def test_cancellation_symmetry_on_ring():
    rep = _cancel("eager-bi-ring")
    assert len(rep.events) == 1
    e = rep.events[0]
    assert abs(e.hops_a - e.hops_b) <= 1 and e.kind == "full"


def test_excess_runtime():
    sc = preset("damping-e0").scenario
    base = simulate(replace(sc, delays=()))
    assert an.excess_runtime(base, base) == 0.0
    assert an.excess_runtime(simulate(sc), base) == pytest.approx(6000.0, rel=0.1)
    with pytest.raises(an.ScenarioMismatch):
        an.excess_runtime(simulate(sc), simulate(replace(sc, n_steps=29, delays=())))
    noisy = replace(sc, noise=NoiseSpec(0.2))
    with pytest.raises(an.ScenarioMismatch):
        an.excess_runtime(simulate(noisy), base)


def test_leading_edge_noise_insensitive():
    # forward speed under E <= 25% stays within 10% of the speed model,
    # with the period taken as the noisy system's measured step time
    sc = preset("eager-uni-open").scenario
    for E in (0.1, 0.25):
        vs, periods = [], []
        for seed in range(15):
            run = replace(sc, noise=NoiseSpec(E), seed=seed)
            base_tr = simulate(replace(run, delays=()))
            im = an.idle_matrix(simulate(run), run)
            base = an.idle_matrix(base_tr, run)
            fr = an.detect_fronts(an.excess_idle(im, base), (5, 1))
            vs.append(an.estimate_speed(fr).v_ranks_per_s)
            periods.append(base_tr.final_time_us.mean() / run.n_steps)
        v_model = 1e6 / median(periods)
        assert abs(median(vs) - v_model) / v_model <= 0.10, (E, median(vs), v_model)
