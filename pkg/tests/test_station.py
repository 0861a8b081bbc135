import json
import math
from dataclasses import replace

import numpy as np
import pytest

from oracles import brute_force_contract_cost, discretization_bound
from v2g_menu import station as st
from v2g_menu.lp_core import Relation
from v2g_menu.verify import random_newcomer, random_state


def two_slot(c=(1.0, 5.0), g=(0.9, 4.9), cap=0.0, renewable=(0.0, 0.0), evs=(), eta=1.0, **kw):
    return st.StationState(
        clock=0,
        storage_level=0.0,
        storage_capacity=cap,
        storage_initial=0.0,
        renewable_forecast=np.array(renewable, float),
        buy_price=np.array(c, float),
        sell_price=np.array(g, float),
        horizon_end=len(c),
        eta_c_cs=eta,
        eta_d_cs=eta,
        active_evs=evs,
        **kw,
    )


def newcomer(arrival=0, soc=5.0, eta=1.0, ev_id=7):
    return st.EvRecord(ev_id, arrival, 0.0, arrival + 1, 0.0, soc, eta_charge=eta, eta_discharge=eta)


def test_zero_demand_contract_costs_nothing():
    state = two_slot()
    cc = st.contract_cost(state, newcomer(), st.Contract(0.0, 2, 0.0))
    assert cc.cost == pytest.approx(0.0, abs=1e-9)


def test_energy_row_and_rate_bounds_present():
    state = two_slot()
    clp = st.build_contract_lp(state, newcomer(), st.Contract(2.0, 2, 0.0))
    lp = clp.lp
    row = clp.charge_rows[0]
    assert lp.relations[row] is Relation.GE
    assert lp.rhs[row] == pytest.approx(2.0)
    cols = clp.r_index[0]
    # r+ enters with +1, r- with -1
    assert np.allclose(lp.a[row, cols], 1.0) and np.allclose(lp.a[row, cols + 1], -1.0)
    assert np.allclose(lp.upper[cols], 3.3) and np.allclose(lp.upper[cols + 1], 3.3)


def test_variable_count_three_slots_one_ev():
    state = two_slot(c=(1.0, 2.0, 3.0), g=(0.5, 1.0, 1.5), renewable=(0.0, 0.0, 0.0))
    clp = st.build_contract_lp(state, newcomer(), st.Contract(1.0, 3, 1.0))
    assert clp.lp.n_vars == 4 * 3 + 2 * 3 == 18


def test_two_slot_plain_charge_costs_one():
    state = two_slot()
    assert st.contract_cost(state, newcomer(), st.Contract(1.0, 2, 0.0)).cost == pytest.approx(1.0)


def test_unreachable_energy_is_infinite():
    state = two_slot()
    cc = st.contract_cost(state, newcomer(), st.Contract(10.0, 2, 0.0))
    assert cc.cost == math.inf and not cc.feasible


def test_v_minus_k_examples():
    # flat prices leave storage nothing to arbitrage
    assert st.cost_without_user(two_slot(c=(1.0, 1.0), g=(0.9, 0.9), cap=5.0)) == pytest.approx(0.0)
    one = st.StationState(
        clock=0, storage_level=0.0, storage_capacity=0.0, storage_initial=0.0,
        renewable_forecast=[0.0], buy_price=[2.0], sell_price=[1.0], horizon_end=1,
        active_evs=(st.EvRecord(1, 0, 1.0, 1, 0.0, 5.0, eta_charge=1.0),),
    )
    assert st.cost_without_user(one) == pytest.approx(2.0)


def test_bu_never_raises_cost():
    rng = np.random.default_rng(0)
    for _ in range(30):
        state = random_state(rng, 8, 3)
        ev = random_newcomer(rng, state)
        d = state.horizon_end
        costs = [st.contract_cost(state, ev, st.Contract(3.0, d, float(b))).cost for b in range(5)]
        finite = [c for c in costs if math.isfinite(c)]
        assert len(finite) in (0, 5)
        assert all(b <= a + 1e-7 for a, b in zip(finite, finite[1:]))


def test_menu_single_cell_matches_contract_cost():
    state = two_slot()
    grid = st.ContractGrid((1.0,), (2,), (0.0,))
    mc = st.menu_costs(state, newcomer(), grid)
    assert len(mc) == 1
    assert mc[0].cost == pytest.approx(st.contract_cost(state, newcomer(), grid_cell(grid)).cost)


def grid_cell(grid):
    return next(iter(grid))


def test_menu_bu_axis_monotone_and_infeasible_family():
    rng = np.random.default_rng(1)
    state = random_state(rng, 6, 2)
    ev = random_newcomer(rng, replace(state))
    ev = replace(ev, arrival_time=0)
    grid = st.ContractGrid.for_arrival(0, state.horizon_end, energy_max=6, deadline_span=6, bu_max=3)
    costs = st.menu_costs(state, ev, grid).costs
    ok = np.isfinite(costs[:, :, 1:]) & np.isfinite(costs[:, :, :-1])
    assert np.all(costs[:, :, 1:][ok] <= costs[:, :, :-1][ok] + 1e-7)
    tight = st.ContractGrid((50.0, 60.0), (1,), (0.0, 1.0))
    assert np.all(np.isinf(st.menu_costs(two_slot(), newcomer(), tight).costs))


def test_scenario_average():
    state = two_slot(cap=2.0)
    ev, con = newcomer(), st.Contract(2.0, 2, 0.0)
    base = st.contract_cost(state, ev, con).cost
    assert st.scenario_averaged_cost(state, ev, con, [(1.0, (0.0, 0.0))]) == pytest.approx(base)
    assert st.scenario_averaged_cost(state, ev, con, [(0.5, (0.0, 0.0)), (0.5, (0.0, 0.0))]) == pytest.approx(base)
    a, b = (0.0, 0.0), (1.0, 0.0)
    va = st.contract_cost(state.with_forecast(a), ev, con).cost
    vb = st.contract_cost(state.with_forecast(b), ev, con).cost
    assert st.scenario_averaged_cost(state, ev, con, [(0.3, a), (0.7, b)]) == pytest.approx(0.3 * va + 0.7 * vb)
    with pytest.raises(ValueError):
        st.scenario_averaged_cost(state, ev, con, [(0.5, a)])


def test_commit_preserves_cost():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 20:
        state = random_state(rng, 8, 2)
        ev = random_newcomer(rng, state)
        con = st.Contract(2.0, state.horizon_end, 1.0)
        if not st.contract_feasible(state, ev, con) or not math.isfinite(st.cost_without_user(state)):
            continue
        before = st.contract_cost(state, ev, con).cost
        after = st.commit_contract(state, ev, con)
        assert st.cost_without_user(after) == pytest.approx(before, abs=1e-7)
        checked += 1


def test_zero_demand_commit_and_roster():
    state = two_slot(cap=1.0)
    vk = st.cost_without_user(state)
    s1 = st.commit_contract(state, newcomer(ev_id=1), st.Contract(0.0, 2, 0.0))
    assert st.cost_without_user(s1) == pytest.approx(vk)
    s2 = st.commit_contract(s1, newcomer(ev_id=2), st.Contract(1.0, 2, 0.0))
    assert len(s2.active_evs) == 2
    clp = st.residual_lp(s2)
    assert clp.ev_ids == (1, 2) and len(clp.charge_rows) == 2
    with pytest.raises(st.StructureError):
        st.commit_contract(s2, newcomer(ev_id=2), st.Contract(1.0, 2, 0.0))
    with pytest.raises(st.ContractRejected):
        st.commit_contract(state, newcomer(ev_id=3), st.Contract(30.0, 2, 0.0))


def test_deadline_outside_horizon_is_structural():
    with pytest.raises(st.StructureError):
        st.build_contract_lp(two_slot(), newcomer(), st.Contract(1.0, 3, 0.0))


def test_advance_time_examples():
    state = two_slot(cap=5.0)
    nxt = st.advance_time(state, st.SlotDispatch())
    assert nxt.clock == 1 and nxt.storage_level == 0.0
    sunny = two_slot(cap=5.0, renewable=(2.0, 0.0))
    assert st.advance_time(sunny, st.SlotDispatch()).storage_level == pytest.approx(2.0)
    ev = st.EvRecord(1, 0, 1.0, 2, 0.0, 5.0, eta_charge=1.0)
    s = two_slot(evs=(ev,))
    nxt = st.advance_time(s, st.SlotDispatch(q=1.0, r_plus={1: 1.0}))
    (kept,) = nxt.active_evs
    assert kept.residual_energy == pytest.approx(0.0) and kept.soc == pytest.approx(6.0)


def test_advance_time_rejects_corruption():
    ev = st.EvRecord(1, 0, 1.0, 2, 0.0, 5.0, eta_charge=1.0)
    s = two_slot(evs=(ev,))
    with pytest.raises(st.StateCorruption):
        st.advance_time(s, st.SlotDispatch(q=0.0, r_plus={1: 1.0}))  # unbalanced
    with pytest.raises(st.StateCorruption):
        st.advance_time(s, st.SlotDispatch(q=5.0, r_plus={1: 5.0}))  # above rate limit


def test_normalized_schedules_have_no_simultaneous_flows():
    rng = np.random.default_rng(3)
    for _ in range(40):
        state = random_state(rng, 8, 3)
        cc = st.residual_cost(state)
        if not cc.feasible:
            continue
        sch = cc.schedule
        assert np.all(np.minimum(sch.r_plus, sch.r_minus) <= 1e-9)
        assert np.all(np.minimum(sch.e, sch.s) <= 1e-9)
        assert cc.normalized_objective <= cc.raw_objective + 1e-7


def test_state_round_trip():
    rng = np.random.default_rng(4)
    state = random_state(rng, 6, 3)
    doc = json.loads(json.dumps(st.state_to_dict(state)))
    back = st.state_from_dict(doc)
    assert back.active_evs == state.active_evs
    assert np.array_equal(back.buy_price, state.buy_price)
    assert st.cost_without_user(back) == st.cost_without_user(state)


def test_arbitrage_prices_rejected():
    with pytest.raises(ValueError, match="arbitrage"):
        two_slot(c=(1.0, 1.0), g=(1.5, 0.5))


def _lattice_instance(rng):
    T = int(rng.integers(2, 4))
    cap = float(rng.integers(0, 4)) / 10
    c = np.round(rng.uniform(0.1, 1.0, T), 2)
    g = np.round(c - rng.uniform(0.0, 0.2, T), 2)
    state = st.StationState(
        clock=0,
        storage_level=float(rng.integers(0, round(cap * 10) + 1)) / 10,
        storage_capacity=cap,
        storage_initial=float(rng.integers(0, round(cap * 10) + 1)) / 10,
        renewable_forecast=rng.integers(0, 3, T) / 10,
        buy_price=c,
        sell_price=np.maximum(g, 0.0),
        horizon_end=T,
        rate_limits=(-0.4, 0.4),
        eta_c_cs=1.0,
        eta_d_cs=1.0,
    )
    arrival = int(rng.integers(0, T))
    ev = st.EvRecord(9, arrival, 0.0, arrival + 1, 0.0, 10.0, eta_charge=1.0, eta_discharge=1.0)
    deadline = int(rng.integers(arrival + 1, T + 1))
    con = st.Contract(float(rng.integers(-2, 5)) / 10, deadline, float(rng.integers(0, 3)) / 10)
    return state, ev, con


def test_lp_matches_lattice_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(50):
        state, ev, con = _lattice_instance(rng)
        lp_val = st.contract_cost(state, ev, con).cost
        bf = brute_force_contract_cost(state, ev, con)
        if math.isinf(bf):
            assert math.isinf(lp_val)
            continue
        assert lp_val <= bf + 1e-7
        assert bf - lp_val <= discretization_bound(state)
