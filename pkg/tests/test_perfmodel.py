import pytest

from idlewave.perfmodel import TriadModelParams, model_table, network_bound, triad_performance, triad_runtime

P = TriadModelParams()


def test_model_points():
    assert triad_performance(1, P, include_network=False) / 1e9 == pytest.approx(2.5, rel=1e-4)
    assert triad_performance(2, P, include_network=False) / 1e9 == pytest.approx(5.0, rel=1e-4)
    assert triad_performance(1, P) / 1e9 == pytest.approx(2.4194, rel=1e-4)
    assert triad_performance(2, P) / 1e9 == pytest.approx(4.6875, rel=1e-4)


def test_runtime_decreases_and_saturates():
    ts = [triad_runtime(n, P) for n in range(1, 20)]
    assert ts == sorted(ts, reverse=True)
    assert triad_performance(10**6, P) < network_bound(P)
    assert network_bound(P) == pytest.approx(75e9)


def test_no_write_allocate():
    p = TriadModelParams(write_allocate_factor=1.0)
    assert triad_performance(1, p, include_network=False) / 1e9 == pytest.approx(10 / 3, rel=1e-9)


def test_table_and_validation():
    rows = model_table(range(1, 4), P)
    assert [r["processes"] for r in rows] == [10, 20, 30]
    with pytest.raises(ValueError):
        triad_runtime(0, P)
    with pytest.raises(ValueError):
        TriadModelParams(b_mem_bytes_per_s=0)
    assert network_bound(TriadModelParams(v_net_bytes=0)) == float("inf")
