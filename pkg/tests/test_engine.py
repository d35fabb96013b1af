import itertools
import random

import numpy as np
import pytest

from idlewave import engine
from idlewave.comm import Boundary, CostModel, Direction, Protocol, ProtocolConfig, ProtocolOverride, Topology
from idlewave.engine import PhaseKind, Scenario, resolve_message, simulate
from idlewave.perturbation import DelaySpec, NoiseSpec

import oracle

FREE = CostModel(latency_us=0.0, bandwidth_bytes_per_us=1e30)


def scen(n=6, K=5, t=100.0, direction="unidirectional", boundary="open", d=1, size=8192,
         rdv=False, delays=(), E=0.0, seed=0, cost=CostModel(), cap=None):
    return Scenario(
        n_ranks=n,
        n_steps=K,
        t_exec_us=t,
        topology=Topology(Direction(direction), Boundary(boundary), d),
        protocol_cfg=ProtocolConfig(
            message_size_bytes=size,
            override=ProtocolOverride.FORCE_RENDEZVOUS if rdv else None,
            eager_buffer_cap=cap,
        ),
        cost_model=cost,
        noise=NoiseSpec(E),
        delays=tuple(delays),
        seed=seed,
    )


@pytest.mark.parametrize("direction,boundary,rdv", list(itertools.product(
    ["unidirectional", "bidirectional"], ["open", "periodic"], [False, True])))
def test_lockstep(direction, boundary, rdv):
    sc = scen(n=4, K=3, direction=direction, boundary=boundary, rdv=rdv)
    tr = simulate(sc)
    c = sc.message_cost_us
    for k in range(1, 4):
        # repeated addition vs one product: ulp-level difference only
        assert np.allclose(tr.waitall[:, k - 1], k * (100.0 + c), rtol=1e-12, atol=0)
    assert np.all(tr.idle == 0)
    assert not [r for r in tr.records if r.kind is PhaseKind.IDLE]


def test_six_rank_chain():
    D = 200.0
    sc = scen(n=6, K=8, cost=FREE, delays=[DelaySpec(0, 1, D)])
    tr = simulate(sc)
    base = simulate(scen(n=6, K=8, cost=FREE))
    for p in range(1, 6):
        first = int(np.nonzero(tr.idle[p] > 0)[0][0]) + 1
        assert first == p
        assert tr.idle[p, p - 1] == D
    assert tr.final_time_us[5] - base.final_time_us[5] == D


def test_delay_conservation_downstream():
    sc = scen(n=8, K=12, delays=[DelaySpec(2, 1, 777.0)])
    tr, base = simulate(sc), simulate(scen(n=8, K=12))
    assert np.allclose(tr.final_time_us[2:] - base.final_time_us[2:], 777.0, rtol=0, atol=1e-9)


@pytest.mark.parametrize("args,expect", [
    ((0, 0, 100, Protocol.EAGER), (0, 100)),
    ((0, 5000, 100, Protocol.RENDEZVOUS), (5100, 5100)),
    ((5000, 0, 100, Protocol.EAGER), (5000, 5100)),
])
def test_resolve_message(args, expect):
    mc = resolve_message(*args)
    assert (mc.send_complete_us, mc.recv_complete_us) == expect


def _extra(rng, n, K):
    return [[rng.choice([0.0, 0.0, 0.0, 37.0, 150.0, 333.5]) for _ in range(K)] for _ in range(n)]


def test_oracle_equivalence_randomized():
    rng = random.Random(1234)
    checked = 0
    for n in range(2, 6):
        for K in range(1, 6):
            for direction, boundary, rdv, d in itertools.product(
                ["unidirectional", "bidirectional"], ["open", "periodic"], [False, True], [1, 2]
            ):
                if d >= n:
                    continue
                extra = _extra(rng, n, K)
                delays = [DelaySpec(p, k + 1, extra[p][k]) for p in range(n) for k in range(K) if extra[p][k]]
                sc = scen(n=n, K=K, direction=direction, boundary=boundary, rdv=rdv, d=d, delays=delays)
                got = simulate(sc).waitall.tolist()
                want = oracle.evaluate(n, K, 100.0, sc.message_cost_us, d, boundary == "periodic",
                                       direction == "bidirectional", rdv, extra)
                assert got == want, (n, K, direction, boundary, rdv, d)
                checked += 1
    assert checked > 200


def test_determinism_and_independence():
    sc = scen(n=12, K=20, E=0.3, seed=99, direction="bidirectional", delays=[DelaySpec(3, 2, 900.0)])
    a, b = simulate(sc), simulate(sc)
    assert a.same_timeline(b)
    assert a.records == b.records
    c = simulate(scen(n=12, K=20, E=0.3, seed=100, direction="bidirectional", delays=[DelaySpec(3, 2, 900.0)]))
    assert not a.same_timeline(c)


def test_records_tile_each_step():
    sc = scen(n=7, K=9, E=0.2, seed=5, direction="bidirectional", boundary="periodic", delays=[DelaySpec(2, 3, 500.0)])
    tr = simulate(sc)
    by = {}
    for r in tr.records:
        by.setdefault((r.rank, r.step), []).append(r)
    for (p, k), recs in by.items():
        assert recs[0].kind is PhaseKind.EXEC and recs[0].t_start_us == tr.ready[p, k - 1]
        for x, y in zip(recs, recs[1:]):
            assert x.t_end_us == y.t_start_us
        assert recs[-1].t_end_us == tr.waitall[p, k - 1]
        comm = [r for r in recs if r.kind is PhaseKind.COMM][0]
        assert comm.duration_us <= sc.message_cost_us + 1e-9
    # next step starts when the previous waitall returns
    assert np.all(tr.ready[:, 1:] == tr.waitall[:, :-1])
    assert np.all(np.diff(tr.ready, axis=1) > 0)


def test_causality():
    sc = scen(n=6, K=6, direction="bidirectional", delays=[DelaySpec(1, 1, 400.0)])
    tr = simulate(sc)
    c = sc.message_cost_us
    for p in range(6):
        for q in (p - 1, p + 1):
            if 0 <= q < 6:
                assert np.all(tr.waitall[p] >= tr.compute_end[q] + c)


def test_eager_buffer_cap_switches_to_rendezvous():
    delays = [DelaySpec(1, 1, 2000.0)]
    unbounded = simulate(scen(n=4, K=6, delays=delays))
    capped = simulate(scen(n=4, K=6, delays=delays, cap=1))
    # with unlimited buffering rank 0 never waits for its slow receiver
    assert np.all(unbounded.idle[0] == 0)
    assert capped.idle[0].sum() > 0


def test_rejects_ill_posed():
    with pytest.raises(ValueError):
        scen(n=3, d=3, boundary="periodic")
    with pytest.raises(ValueError):
        scen(delays=[DelaySpec(9, 1, 1.0)])
    with pytest.raises(ValueError):
        scen(delays=[DelaySpec(0, 99, 1.0)])
    with pytest.raises(ValueError):
        scen(n=1)


def test_digest_tracks_content():
    assert scen().digest() == scen().digest()
    assert scen().digest() != scen(seed=1).digest()
    assert simulate(scen()).scenario_digest == scen().digest()


def test_no_shared_state_between_instances():
    sc = scen(n=5, K=4, cap=1, delays=[DelaySpec(1, 1, 900.0)])
    first = simulate(sc)
    engine._Engine(sc).run()
    assert first.same_timeline(simulate(sc))
