import math

import numpy as np
import pytest

from v2g_menu import station as st
from v2g_menu.lp_core import DenseSimplex
from v2g_menu.menu_search import ContractFamily, feasible_cells
from v2g_menu.verify import random_newcomer, random_state


def _instance(seed):
    rng = np.random.default_rng(seed)
    state = random_state(rng, 8, 3)
    while not math.isfinite(st.cost_without_user(state)):
        state = random_state(rng, 8, 3)
    ev = random_newcomer(rng, state)
    grid = st.ContractGrid.for_arrival(ev.arrival_time, state.horizon_end, energy_max=6, deadline_span=5, bu_max=3, discharge_max=2)
    return rng, state, ev, grid


@pytest.mark.parametrize("seed", range(8))
def test_family_matches_independent_dense_solves(seed):
    _, state, ev, grid = _instance(seed)
    fam = ContractFamily(state, ev, grid)
    want = st.menu_costs(state, ev, grid, DenseSimplex())
    assert fam.v_minus_k == pytest.approx(want.v_minus_k, abs=1e-7)
    got = fam.all_costs()
    ref = want.costs
    assert np.array_equal(np.isinf(got), np.isinf(ref))
    fin = np.isfinite(ref)
    assert np.allclose(got[fin], ref[fin], atol=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_lower_bounds_are_valid(seed):
    _, state, ev, grid = _instance(seed)
    fam = ContractFamily(state, ev, grid)
    fam.cost((0, 0, 0))
    fam.cost(tuple(s - 1 for s in grid.shape))
    lower = fam.lower.copy()
    exact = fam.all_costs()
    fin = np.isfinite(exact)
    assert np.all(lower[fin] <= exact[fin] + 1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_pruned_argmax_is_exact(seed):
    rng, state, ev, grid = _instance(seed)
    weight = rng.uniform(-2.0, 8.0, grid.shape)
    fam = ContractFamily(state, ev, grid)
    idx, val = fam.argmax(weight)
    exact = ContractFamily(state, ev, grid).all_costs()
    payoff = np.where(np.isfinite(exact), weight - exact, -np.inf)
    assert val == pytest.approx(payoff.max(), abs=1e-6)
    assert payoff[idx] == pytest.approx(payoff.max(), abs=1e-6)
    assert fam.n_solves <= len(grid) + 1


def test_feasible_cells_matches_scalar_check():
    _, state, ev, grid = _instance(3)
    mask = feasible_cells(state, ev, grid)
    for idx, con in zip(np.ndindex(grid.shape), grid):
        assert mask[idx] == st.contract_feasible(state, ev, con)


def test_argmax_tie_break_prefers_low_bu():
    state = st.StationState(
        clock=0, storage_level=0.0, storage_capacity=0.0, storage_initial=0.0,
        renewable_forecast=[0.0, 0.0], buy_price=[1.0, 1.0], sell_price=[1.0, 1.0], horizon_end=2,
    )
    ev = st.EvRecord(1, 0, 0.0, 1, 0.0, 5.0)
    grid = st.ContractGrid((1.0,), (2,), (0.0, 1.0, 2.0))
    fam = ContractFamily(state, ev, grid)
    # equal prices make every BU cap cost the same
    idx, _ = fam.argmax(np.full(grid.shape, 5.0))
    assert idx == (0, 0, 0)
