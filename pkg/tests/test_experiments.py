import pytest

from causalmesh.errors import ConfigurationError
from causalmesh.schemas.config import BaselineMode, PropagationMode, SimConfig
from causalmesh.services.sim.experiments import (
    MODES,
    abort_rates,
    anomaly_rates,
    mode_config,
    single_write,
    visibility_stats,
    visibility_window,
)
from causalmesh.services.sim.simulator import sim_run


def test_mode_config():
    assert mode_config("tcc").tcc
    assert mode_config("buggy").propagation_mode == PropagationMode.SINGLE_ROUND_BUGGY
    assert mode_config("baseline", n=2).baseline_mode == BaselineMode.EVENTUAL_BASELINE
    assert set(MODES) == {"causalmesh", "tcc", "buggy", "baseline"}
    with pytest.raises(ConfigurationError):
        mode_config("nope")


def test_visibility_window_grows_by_two_hops_per_server():
    rows = visibility_window(servers=[2, 3, 4], delay=10)
    assert [r.hops for r in rows] == [3, 5, 7]
    assert [r.latency for r in rows] == [30, 50, 70]
    assert [r.marginal for r in rows] == [None, 20, 20]
    assert rows[0].cells() == ["2", "3", "30", ""]


def test_visibility_window_with_sampled_delays():
    rows = visibility_window(servers=[2, 5], delay=10, trials=4)
    assert [r.hops for r in rows] == [3, 9]
    for row in rows:
        assert row.hops <= row.latency <= row.hops * 10


def test_visibility_stats():
    result = sim_run(SimConfig(n=3, delay_range=(2, 2)), [single_write()])
    stats = visibility_stats(result.trace)
    assert stats == {"writes": 1, "integrated": 1, "mean_hops": 5.0, "mean_latency": 10.0, "max_latency": 10.0}


def test_anomaly_rates_baseline_versus_causalmesh():
    rows = anomaly_rates(servers=(1, 2), requests=80, seed=3, key_pool_size=5)
    rates = {(r.mode, r.servers): r.anomaly_rate for r in rows}
    assert rates[("baseline", 1)] == 0.0
    assert rates[("baseline", 2)] > 0.0
    assert rates[("causalmesh", 1)] == 0.0
    assert rates[("causalmesh", 2)] == 0.0
    assert rows[0].cells() == ["1", "baseline", "0.0000"]


@pytest.mark.slow
def test_anomaly_rates_full_sweep():
    rows = anomaly_rates(servers=(1, 2, 4, 8), modes=("causalmesh", "tcc"), requests=200)
    assert all(r.anomaly_rate == 0.0 for r in rows)


def test_abort_rate_falls_as_rings_grow():
    rows = abort_rates(capacities=(1, 2, 3, 4), readers=8)
    rates = [r.abort_rate for r in rows]
    assert rates == [0.75, 0.75, 0.5, 0.25]
    assert rates[0] > 0.0
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rows[2].cells() == ["3", "8", "4", "0.5000"]


def test_abort_rate_without_interleaved_commits():
    # Every reader with no commit between its reads finds a fitting version.
    rows = abort_rates(capacities=(1,), readers=1)
    assert rows[0].aborts == 0
