import math

import numpy as np
import pytest

from v2g_menu.simulator import (
    ArrivalProcess,
    METRIC_NAMES,
    SweepPoint,
    make_grid,
    replicate_seeds,
    run_day,
    sample_arrivals,
    sample_renewables,
    sweep,
    sweep_points,
)


def test_zero_rate_has_no_arrivals():
    assert sample_arrivals(ArrivalProcess((0.0,) * 10), 10, np.random.default_rng(0)) == []


def test_poisson_mean_count():
    rng = np.random.default_rng(1)
    proc = ArrivalProcess((5.0,) * 10)
    counts = np.array([len(sample_arrivals(proc, 10, rng)) for _ in range(10_000)])
    se = math.sqrt(50.0 / counts.size)
    assert abs(counts.mean() - 50.0) <= 3 * se


def test_disjoint_counts_uncorrelated():
    rng = np.random.default_rng(2)
    proc = ArrivalProcess((2.0, 2.0, 6.0, 6.0))
    a, b = [], []
    for _ in range(10_000):
        times = np.array(sample_arrivals(proc, 4, rng))
        a.append(np.sum(times < 2))
        b.append(np.sum(times >= 2))
    a, b = np.array(a, float), np.array(b, float)
    assert abs(a.mean() - 4.0) < 0.1 and abs(b.mean() - 12.0) < 0.15
    # the sample correlation of independent counts is about N(0, 1/n)
    assert abs(np.corrcoef(a, b)[0, 1]) <= 3 / math.sqrt(a.size)


def test_arrival_times_sorted_and_in_range():
    times = sample_arrivals(ArrivalProcess((1.0, 8.0, 0.0)), 3, np.random.default_rng(3))
    assert times == sorted(times)
    assert all(0 <= t < 2 for t in times)  # the last slot has zero rate


def test_renewables_non_negative(small_config):
    r = sample_renewables(small_config, np.random.default_rng(0))
    assert r.shape == (8,) and np.all(r >= 0)


def test_no_arrivals_day(small_config):
    cfg = small_config.replace(**{"arrivals.on_peak_rate": 0.0, "arrivals.off_peak_rate": 0.0})
    m = run_day(cfg, 5)
    assert m.arrivals == 0 and m.admitted == 0
    assert m.total_station_profit == 0.0 and m.admitted_fraction == 0.0
    assert np.all(np.asarray(m.traces()["storage_level"]) <= cfg.station.storage_capacity + 1e-9)


def test_huge_beta_admits_nobody(small_config):
    m = run_day(small_config.replace(**{"strategy.beta": 1000.0}), 5)
    assert m.arrivals > 0 and m.admitted == 0


def test_run_day_deterministic_and_consistent(small_config):
    a, b = run_day(small_config, 11), run_day(small_config, 11)
    assert a.scalars() == b.scalars()
    for k, v in a.traces().items():
        assert np.array_equal(np.asarray(v), np.asarray(b.traces()[k]), equal_nan=True)
    s = a.scalars()
    assert set(s) == set(METRIC_NAMES)
    assert s["total_station_profit"] == pytest.approx(a.ledger_profit(), abs=1e-9)
    assert s["grid_purchases"] == pytest.approx(s["on_peak_purchases"] + s["off_peak_purchases"])
    assert 0 <= s["admitted"] <= s["arrivals"]
    assert s["max_active_users"] >= 1 if s["admitted"] else True


def test_acceptances_respect_the_menu(small_config):
    m = run_day(small_config.replace(**{"strategy.beta": 0.5}), 4)
    for acc in m.accepted:
        assert acc.surplus >= 0
        # worst-case offset plus the fixed mark-up
        assert acc.profit >= 0.5 - 1e-9
        assert acc.deadline > acc.arrival_slot


def test_no_v2g_grid_has_single_bu(small_config):
    assert make_grid(small_config.replace(v2g_enabled=False), 0).bu_caps == (0.0,)
    m = run_day(small_config.replace(v2g_enabled=False), 6)
    assert m.avg_additional_bu == 0.0


def test_single_point_sweep_matches_run_day(small_config):
    res = sweep(small_config, [SweepPoint("only", small_config)], replicates=1)
    seed = replicate_seeds(small_config.seed, 1)[0]
    assert res.runs[0][0].scalars() == run_day(small_config, seed).scalars()
    assert res.table("admitted").shape == (1, 1)


def test_sweep_points_cross_product(small_config):
    cfg = small_config.replace(**{"sweep.beta_values": [0.0, 1.0], "sweep.bmax_values": [5.0, 20.0]})
    pts = sweep_points(cfg)
    assert [p.label for p in pts] == ["bmax=5,beta=0", "bmax=5,beta=1", "bmax=20,beta=0", "bmax=20,beta=1"]
    assert pts[3].config.station.storage_capacity == 20.0 and pts[3].config.strategy.beta == 1.0


def test_replicate_seeds_stable():
    assert replicate_seeds(1, 3) == replicate_seeds(1, 3)
    assert replicate_seeds(1, 3)[:2] == replicate_seeds(1, 2)
    assert len(set(replicate_seeds(1, 30))) == 30


def test_clairvoyant_extracts_everything(small_config):
    m = run_day(small_config.replace(**{"strategy.kind": "clairvoyant"}), 8)
    assert m.admitted > 0
    assert m.total_user_surplus == pytest.approx(0.0, abs=1e-9)


def test_other_strategies_run(small_config):
    for kind in ("cost", "beta", "zeta"):
        m = run_day(small_config.replace(**{"strategy.kind": kind, "strategy.beta": 0.3}), 9)
        assert m.total_station_profit == pytest.approx(m.ledger_profit(), abs=1e-9)
    cost_run = run_day(small_config.replace(**{"strategy.kind": "cost"}), 9)
    assert cost_run.total_station_profit == pytest.approx(0.0, abs=1e-9)
