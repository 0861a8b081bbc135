import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from oracles import hand_utility, truncated_normal_mean, truncated_normal_sd
from v2g_menu.pricing import PriceMenu
from v2g_menu.station import ContractGrid
from v2g_menu.users import (
    PopulationParams,
    UserRealization,
    UtilityTable,
    choose,
    energy_value,
    lower_endpoints,
    sample_user,
    utility_table,
)


def _menu(grid, prices):
    p = np.asarray(prices, float).reshape(grid.shape)
    return PriceMenu(np.zeros(grid.shape), p, 0.0, 0.0, grid)


def test_hand_evaluated_utility():
    # r = 4, l = 2, T_pref = 2, wait 1, alpha 0.07, BU 3
    want = 12 * (math.e - 1) / (math.e**2 - 1) - 0.21
    assert want == pytest.approx(3.0173, abs=1e-4)
    assert hand_utility(4, 2, 2, 1, 0.07, 3) == pytest.approx(want)
    grid = ContractGrid((2.0,), (1,), (3.0,))
    user = UserRealization(4.0, 2.0, 5.0, 0.07, 0)
    assert utility_table(user, grid)[next(iter(grid))] == pytest.approx(want)


def test_utility_limits():
    grid = ContractGrid((4.0,), (1, 3), (0.0, 2.0))
    user = UserRealization(4.0, 2.0, 5.0, 0.07, 0)
    u = utility_table(user, grid).values
    # the one-slot wait already discounts; a vanishing wait tends to r**2
    assert energy_value(4.0, 4.0) == 16.0
    assert u[0, 1, 0] == 0.0  # wait 3 >= T_pref
    assert u[0, 1, 1] == pytest.approx(-0.14)
    factor = (math.exp(2.0 - 1e-9) - 1) / (math.exp(2.0) - 1)
    assert 16 * factor == pytest.approx(16.0, rel=1e-8)


def test_energy_value_flat_beyond_request():
    assert energy_value(6.0, 4.0) == 16.0
    assert energy_value(3.0, 4.0) == -9 + 24


def test_discharge_cells_pay_for_energy():
    grid = ContractGrid((-2.0, 1.0), (1,), (1.0,))
    user = UserRealization(4.0, 2.0, 5.0, 0.1, 0)
    u = utility_table(user, grid).values
    assert u[0, 0, 0] == pytest.approx(-0.1 * 3)
    assert np.allclose(lower_endpoints(grid, 0.1)[:, 0, 0], [-0.3, -0.1])


def test_absolute_normalization_differs_only_after_arrival():
    grid = ContractGrid((2.0,), (4,), (0.0,))
    u0 = UserRealization(4.0, 3.0, 5.0, 0.07, 0)
    assert utility_table(u0, grid, "absolute").values == pytest.approx(utility_table(u0, grid).values)
    with pytest.raises(ValueError):
        utility_table(u0, grid, "other")


def test_choice_rules():
    grid = ContractGrid((1.0,), (1,), (0.0, 2.0))
    table = UtilityTable(grid, np.array([[[1.0, 1.0]]]))
    ch = choose(table, _menu(grid, [2.0, 3.0]))
    assert not ch.accepted and ch.surplus == 0.0
    ch = choose(table, _menu(grid, [5.0, 1.0]))
    assert ch.accepted and ch.index == (0, 0, 1) and ch.surplus == 0.0
    tied = UtilityTable(grid, np.array([[[1.5, 3.5]]]))
    ch = choose(tied, _menu(grid, [0.3, 2.3]))  # both payoffs 1.2
    assert ch.contract.bu_cap == 0.0 and ch.surplus == pytest.approx(1.2)


def test_tie_break_deadline_then_energy():
    grid = ContractGrid((1.0, 2.0), (1, 2), (0.0,))
    table = UtilityTable(grid, np.ones(grid.shape))
    ch = choose(table, _menu(grid, np.zeros(grid.shape)))
    assert ch.index == (0, 0, 0)
    table = UtilityTable(grid, np.array([[[0.0], [1.0]], [[1.0], [0.0]]]))
    ch = choose(table, _menu(grid, np.zeros(grid.shape)))
    assert ch.contract.deadline == 1 and ch.contract.energy == 2.0


def test_truncated_energy_mean_and_support():
    rng = np.random.default_rng(0)
    p = PopulationParams()
    n = 100_000
    users = [sample_user(rng, 0, p) for _ in range(n)]
    r = np.array([u.desired_energy for u in users])
    mean = truncated_normal_mean(p.energy_mean, p.energy_sd, p.energy_low, p.energy_high)
    sd = truncated_normal_sd(p.energy_mean, p.energy_sd, p.energy_low, p.energy_high)
    assert abs(r.mean() - mean) <= 3 * sd / math.sqrt(n)
    assert r.min() >= 2.0 and r.max() <= 20.0
    soc = np.array([u.initial_soc for u in users])
    assert np.all(soc + r <= 25.0 + 1e-12) and np.all(soc >= 2.0)
    t = np.array([u.preferred_deadline for u in users])
    assert np.all(t > 0) and abs(t.mean() - 2.5) <= 3 * 2.5 / math.sqrt(n)


def test_sampling_is_deterministic():
    a = [sample_user(np.random.default_rng(42), 3) for _ in range(1)]
    b = [sample_user(np.random.default_rng(42), 3) for _ in range(1)]
    assert a == b
    ra, rb = np.random.default_rng(7), np.random.default_rng(7)
    assert [sample_user(ra, 0) for _ in range(50)] == [sample_user(rb, 0) for _ in range(50)]


@settings(max_examples=200, deadline=None)
@given(
    r=hs.floats(2.0, 20.0),
    l=hs.floats(0.5, 25.0),
    t_pref=hs.floats(0.1, 10.0),
    wait=hs.integers(1, 12),
    bu=hs.integers(0, 10),
)
def test_property_utility_matches_hand_formula(r, l, t_pref, wait, bu):
    grid = ContractGrid((l,), (wait,), (float(bu),))
    u = utility_table(UserRealization(r, t_pref, 2.0, 0.07, 0), grid).values[0, 0, 0]
    assert u == pytest.approx(hand_utility(r, l, t_pref, wait, 0.07, bu), rel=1e-9, abs=1e-12)
