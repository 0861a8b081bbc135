"""Executable property suites for the station model and the pricing rules.

Each suite draws randomised desk-scale instances, counts the checks it made
and reports the worst slack seen (positive slack means the property held with
room to spare).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import station as st
from .lp_core import DEFAULT_SOLVER, HighsSolver, Solver, solve
from .menu_search import ContractFamily
from .pricing import (
    Discrete,
    NoiseDistribution,
    TruncNormal,
    Uniform,
    compute_zeta,
    price_clairvoyant,
    price_cost_based,
    price_fixed_beta,
    price_worst_case,
)
from .users import UtilityTable, choose


@dataclass
class PropertyResult:
    name: str
    checks: int = 0
    failures: int = 0
    worst_slack: float = math.inf
    vacuous: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, slack: float, ok: bool | None = None, note: str | None = None) -> None:
        self.checks += 1
        self.worst_slack = min(self.worst_slack, float(slack))
        if not (slack >= 0 if ok is None else ok):
            self.failures += 1
            if note and len(self.notes) < 5:
                self.notes.append(note)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = " (vacuous)" if self.vacuous else ""
        slack = "n/a" if math.isinf(self.worst_slack) else f"{self.worst_slack:.3g}"
        return f"{status} {self.name}: {self.checks} checks, {self.failures} failures, worst slack {slack}{extra}"


# ---------------------------------------------------------------------------
# random instances


def random_state(rng: np.random.Generator, max_horizon: int = 12, max_evs: int = 4) -> st.StationState:
    T = int(rng.integers(2, max_horizon + 1))
    c = rng.uniform(0.1, 0.5, T)
    g = c - rng.uniform(0.0, 0.05, T)
    cap = float(rng.uniform(0.0, 10.0))
    evs = []
    for i in range(int(rng.integers(0, max_evs + 1))):
        a = int(rng.integers(0, T))
        b = int(rng.integers(a + 1, T + 1))
        soc = float(rng.uniform(2.0, 20.0))
        room = min(3.3 * (b - a), 25.0 - soc)
        n = float(rng.uniform(-min(2.0, soc - 2.0), 0.8 * room))
        # a valid roster keeps residual_energy + residual_bu >= 0
        evs.append(st.EvRecord(i, a, n, b, float(rng.uniform(0.0, 6.0)) + max(-n, 0.0), soc))
    return st.StationState(
        clock=0,
        storage_level=float(rng.uniform(0.0, cap)),
        storage_capacity=cap,
        storage_initial=float(rng.uniform(0.0, cap)),
        renewable_forecast=rng.uniform(0.0, 2.0, T),
        buy_price=c,
        sell_price=g,
        horizon_end=T,
        active_evs=tuple(evs),
    )


def random_newcomer(rng: np.random.Generator, state: st.StationState) -> st.EvRecord:
    a = int(rng.integers(0, state.horizon_end))
    return st.EvRecord(100, a, 0.0, a + 1, 0.0, float(rng.uniform(2.0, 15.0)))


def random_contract(rng: np.random.Generator, state: st.StationState, ev: st.EvRecord) -> st.Contract:
    d = int(rng.integers(ev.arrival_time + 1, state.horizon_end + 1))
    return st.Contract(float(rng.integers(-2, 9)), d, float(rng.integers(0, 7)))


def balance_residual(state: st.StationState, clp: st.ContractLp, sched: st.Schedule) -> np.ndarray:
    """Per-slot energy balance with the physically correct signs."""
    charge = (sched.r_plus / clp.etas_charge[:, None]).sum(axis=0) if clp.ev_ids else 0.0
    discharge = (sched.r_minus * clp.etas_discharge[:, None]).sum(axis=0) if clp.ev_ids else 0.0
    return sched.q - sched.x + sched.e - sched.s - charge + discharge


def storage_trace(state: st.StationState, sched: st.Schedule) -> np.ndarray:
    level = state.storage_level
    out = []
    for k in range(sched.q.size):
        t = sched.start + k
        level = state.leakage * level + state.renewable_forecast[t] * state.eta_c_cs - sched.e[k] / state.eta_d_cs + sched.s[k] * state.eta_c_cs
        out.append(level)
    return np.array(out)


# ---------------------------------------------------------------------------
# suites


def check_no_simultaneous(n: int = 500, seed: int = 0, solver: Solver | None = None, max_horizon: int = 12, max_evs: int = 4) -> PropertyResult:
    """Normalised optimal schedules never charge and discharge at once, cost no more, and stay physical."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("no simultaneous charge/discharge")
    solver = solver or DEFAULT_SOLVER
    while res.checks < n:
        state = random_state(rng, max_horizon, max_evs)
        ev = random_newcomer(rng, state)
        con = random_contract(rng, state, ev)
        clp = st.build_contract_lp(state, ev, con)
        sol = solve(clp.lp, solver)
        if not sol.optimal:
            continue
        raw = clp.schedule(sol.primal)
        norm = st.normalize_schedule(state, clp, raw)
        worst = 0.0
        worst = min(worst, -float(np.abs(norm.r_plus * norm.r_minus).max(initial=0.0)))
        worst = min(worst, -float(np.abs(norm.e * norm.s).max()))
        worst = min(worst, 1e-9 - (norm.objective(state) - raw.objective(state)))
        tol = 1e-7 * max(1.0, float(np.abs(raw.q).max() + np.abs(raw.x).max()))
        worst = min(worst, tol - float(np.abs(balance_residual(state, clp, norm)).max()))
        lv = storage_trace(state, norm)
        worst = min(worst, float(lv.min()) + 1e-7, state.storage_capacity + 1e-7 - float(lv.max()))
        worst = min(worst, 1e-7 - abs(float(lv[-1]) - state.storage_initial))
        exact = bool(np.all(norm.r_plus * norm.r_minus == 0) and np.all(norm.e * norm.s == 0))
        res.record(worst, ok=exact and worst >= 0, note=f"contract {con} slack {worst:.3g}")
    return res


def _two_slot_state(c, g, evs=(), cap=0.0, renewable=(0.0, 0.0)) -> st.StationState:
    return st.StationState(
        clock=0,
        storage_level=0.0,
        storage_capacity=cap,
        storage_initial=0.0,
        renewable_forecast=np.array(renewable, float),
        buy_price=np.array(c, float),
        sell_price=np.array(g, float),
        horizon_end=len(c),
        active_evs=tuple(evs),
    )


def reference_instances() -> list[tuple[str, st.StationState, st.EvRecord, st.Contract, float]]:
    """Instances whose optimal cost is known in closed form."""
    eta = 0.95
    out = []
    # buy 2 kWh for the EV in the cheaper slot
    s = _two_slot_state((1.0, 0.5), (0.9, 0.4))
    ev = st.EvRecord(1, 0, 0.0, 1, 0.0, 5.0, eta_charge=1.0)
    out.append(("plain charge", s, ev, st.Contract(2.0, 2, 0.0), 1.0))
    # discharge 1 kWh at the peak, recharge it off-peak
    s = _two_slot_state((0.40, 0.10), (0.399, 0.099))
    ev = st.EvRecord(1, 0, 0.0, 1, 0.0, 10.0)
    out.append(("V2G arbitrage", s, ev, st.Contract(0.0, 2, 2.0), -0.399 * eta + 0.10 / eta))
    # discharge-only contract sells |l| at the better slot
    out.append(("discharge only", s, ev, st.Contract(-1.0, 2, 0.0), -0.399 * eta))
    return out


def check_reference_costs(solver: Solver | None = None) -> PropertyResult:
    res = PropertyResult("closed-form reference costs")
    for name, state, ev, con, want in reference_instances():
        got = st.contract_cost(state, ev, con, solver).cost
        res.record(1e-7 - abs(got - want), note=f"{name}: {got} != {want}")
    return res


def check_mutation_detected(n: int = 100, seed: int = 0) -> PropertyResult:
    """Flipping the discharge sign in the balance row must be caught."""
    res = PropertyResult("mutation of balance row detected")
    saved = st._BALANCE_DISCHARGE_SIGN
    st._BALANCE_DISCHARGE_SIGN = -saved
    try:
        failures = check_no_simultaneous(n, seed, HighsSolver()).failures + check_reference_costs().failures
    finally:
        st._BALANCE_DISCHARGE_SIGN = saved
    res.record(failures - 0.5, ok=failures > 0, note="mutant survived")
    return res


def check_bu_monotone(n: int = 200, seed: int = 1, bu_max: int = 5, max_horizon: int = 12, max_evs: int = 4) -> PropertyResult:
    """A larger utilisation cap never raises the contract cost."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("cost non-increasing in BU")
    res.vacuous = bu_max == 0
    for _ in range(n):
        state = random_state(rng, max_horizon, max_evs)
        ev = random_newcomer(rng, state)
        a = ev.arrival_time
        grid = st.ContractGrid(
            tuple(float(l) for l in (-1, 2, 5)),
            tuple(sorted({a + 1, state.horizon_end})),
            tuple(float(b) for b in range(bu_max + 1)),
        )
        v = ContractFamily(state, ev, grid).all_costs()
        if bu_max == 0:
            res.checks += 1
            continue
        for b1 in range(1, bu_max + 1):
            for b2 in range(b1):
                both = np.isfinite(v[:, :, b2])
                slack = v[:, :, b2][both] + 1e-7 - v[:, :, b1][both]
                res.record(float(slack.min()) if slack.size else 0.0)
    return res


def _random_tables(rng, shape):
    v = rng.uniform(0.0, 10.0, shape)
    v[rng.random(shape) < 0.1] = math.inf
    if not np.isfinite(v).any():
        v.flat[0] = rng.uniform(0.0, 10.0)
    u = rng.uniform(-2.0, 12.0, shape)
    vk = float(rng.uniform(0.0, 5.0))
    return u, v, vk


def _grid(shape) -> st.ContractGrid:
    a, b, c = shape
    return st.ContractGrid(tuple(float(i + 1) for i in range(a)), tuple(range(1, b + 1)), tuple(float(i) for i in range(c)))


def realized_welfare(u, menu, choice) -> float:
    if not choice.accepted:
        return 0.0
    i = choice.index
    return float(u[i] - menu.costs[i] + menu.v_minus_k)


def check_welfare(n: int = 10_000, seed: int = 2) -> PropertyResult:
    """Cost-based and worst-case prices realise the best achievable welfare."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("ex-post welfare optimal")
    for _ in range(n):
        shape = tuple(int(s) for s in rng.integers(1, 4, 3))
        u, v, vk = _random_tables(rng, shape)
        grid = _grid(shape)
        table = UtilityTable(grid, u)
        target = max(float(np.max(np.where(np.isfinite(v), u - v + vk, -math.inf))), 0.0)
        low = u - rng.uniform(0.0, 3.0, shape)
        for menu in (price_cost_based(v, vk, grid), price_worst_case(v, vk, low, grid)):
            w = realized_welfare(u, menu, choose(table, menu))
            res.record(1e-9 - abs(w - target))
    return res


def check_clairvoyant(n: int = 10_000, seed: int = 3) -> PropertyResult:
    """Clairvoyant prices leave no surplus and collect the best cell gain."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("clairvoyant extraction")
    for _ in range(n):
        shape = tuple(int(s) for s in rng.integers(1, 4, 3))
        u, v, vk = _random_tables(rng, shape)
        grid = _grid(shape)
        menu = price_clairvoyant(v, vk, u, grid)
        ch = choose(UtilityTable(grid, u), menu)
        gain = max(float(np.max(np.where(np.isfinite(v), u - v + vk, -math.inf))), 0.0)
        profit = menu.offset if ch.accepted else 0.0
        surplus_ok = (not ch.accepted) or ch.surplus <= 1e-9
        res.record(1e-9 - abs(profit - gain), ok=surplus_ok and abs(profit - gain) <= 1e-9)
    return res


def _additive_instance(rng, n_cells: int):
    v = rng.uniform(0.0, 3.0, (n_cells, 1, 1))
    y = rng.uniform(-1.0, 2.0, (n_cells, 1, 1))
    return v, y, float(rng.uniform(0.0, 1.0))


def simulate_fixed_offset(v, vk, y, noise: NoiseDistribution, beta: float, x: np.ndarray) -> np.ndarray:
    """Per-user profit under ``price_fixed_beta`` when utilities are ``y + x``."""
    grid = _grid(v.shape)
    menu = price_fixed_beta(v, vk, beta, grid)
    p = np.where(np.isfinite(menu.prices), menu.prices, math.inf).ravel()
    best = np.max(y.ravel()[None, :] + x[:, None] - p[None, :], axis=1)
    return np.where(best >= -1e-9, beta, 0.0)


def check_profit_law(n_users: int = 100_000, betas=(0.3, 0.8, 1.5), seed: int = 4) -> PropertyResult:
    """Fixed-offset profit equals beta times the best acceptance probability."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("fixed-offset profit law")
    v, y, vk = _additive_instance(rng, 6)
    noise = Uniform(0.0, 3.0)
    x = noise.sample(rng, n_users)
    need = float(np.min(v - vk - y))
    for beta in betas:
        prof = simulate_fixed_offset(v, vk, y, noise, beta, x)
        expect = beta * float(noise.prob_at_least(beta + need))
        se = max(prof.std(ddof=1) / math.sqrt(n_users), 1e-12)
        res.record(3 * se - abs(prof.mean() - expect))
        # the vectorised acceptance rule must agree with choose()
        grid = _grid(v.shape)
        menu = price_fixed_beta(v, vk, beta, grid)
        for xi, pi in zip(x[:200], prof[:200]):
            ch = choose(UtilityTable(grid, y + xi), menu)
            res.record(0.0, ok=(pi > 0) == ch.accepted)
    return res


def check_zeta_dominance(n_users: int = 100_000, seed: int = 5, step: float = 0.05) -> PropertyResult:
    """The optimal fixed offset beats every other offset on a grid."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("zeta dominates fixed offsets")
    for noise in (Uniform(0.0, 3.0), TruncNormal(1.5, 0.8, 0.0, 3.0)):
        v, y, vk = _additive_instance(rng, 6)
        x = noise.sample(rng, n_users)
        zeta = compute_zeta(v, vk, y, noise)
        pz = simulate_fixed_offset(v, vk, y, noise, zeta, x)
        beta_hi = noise.support()[1] - float(np.min(v - vk - y))
        for beta in np.arange(0.0, beta_hi + step / 2, step):
            pb = simulate_fixed_offset(v, vk, y, noise, float(beta), x)
            d = pz - pb
            se = d.std(ddof=1) / math.sqrt(n_users)
            res.record(float(d.mean() + 2 * se))
    return res


def check_zeta_search(n: int = 200, seed: int = 6) -> PropertyResult:
    """compute_zeta is at least as good as any offset on a 0.01 grid."""
    rng = np.random.default_rng(seed)
    res = PropertyResult("zeta search optimal")
    for i in range(n):
        v, y, vk = _additive_instance(rng, 4)
        if i % 3 == 0:
            noise = Uniform(0.0, float(rng.uniform(0.5, 3.0)))
        elif i % 3 == 1:
            noise = TruncNormal(1.0, float(rng.uniform(0.3, 1.5)), 0.0, 3.0)
        else:
            vals = tuple(np.sort(rng.uniform(0, 3, 4)))
            noise = Discrete(vals, (0.25, 0.25, 0.25, 0.25))
        need = float(np.min(v - vk - y))

        def f(b):
            return np.asarray(b) * noise.prob_at_least(np.asarray(b) + need)

        z = compute_zeta(v, vk, y, noise)
        grid = np.arange(0.0, max(noise.support()[1] - need, 0.0) + 0.01, 0.01)
        # evaluate at the returned offset less a rounding allowance
        res.record(float(f(max(z - 1e-12, 0.0)) - f(grid).max()) + 1e-6)
    return res


def participation_condition(u, p) -> bool:
    """Some BU >= 1 cell strictly beats every BU = 0 cell and pays at least zero."""
    pay = np.where(np.isfinite(p), u - p, -math.inf)
    best_v2g = float(pay[:, :, 1:].max()) if pay.shape[2] > 1 else -math.inf
    best_plain = float(pay[:, :, :1].max())
    return best_v2g >= -1e-9 and best_v2g > best_plain + 1e-9


def check_participation(n: int = 10_000, seed: int = 7) -> PropertyResult:
    """choose() opts into V2G exactly when the participation condition holds.

    Half of the instances have a single (l, t) pair, where the condition is
    the per-pair statement; the rest have full grids.
    """
    rng = np.random.default_rng(seed)
    res = PropertyResult("V2G participation condition")
    for i in range(n):
        nb = int(rng.integers(2, 5))
        shape = (1, 1, nb) if i % 2 == 0 else (int(rng.integers(1, 4)), int(rng.integers(1, 4)), nb)
        grid = _grid(shape)
        u0 = rng.uniform(0.0, 8.0, shape[:2])[:, :, None]
        alpha = float(rng.uniform(0.0, 0.5))
        u = u0 - alpha * np.arange(nb)[None, None, :]
        v = rng.uniform(0.0, 8.0, shape)
        vk = float(rng.uniform(0.0, 3.0))
        if rng.random() < 0.3:
            # exact ties between the BU = 0 and a V2G cell
            v[:, :, 1] = v[:, :, 0] - alpha
        menu = price_fixed_beta(v, vk, float(rng.uniform(0.0, 2.0)), grid)
        ch = choose(UtilityTable(grid, u), menu)
        picked = ch.accepted and ch.contract.bu_cap >= 1
        res.record(0.0, ok=picked == participation_condition(u, menu.prices), note=f"instance {i}")
        # a V2G cell cheaper than its plain cell by more than the wear cost hides the plain cell
        dom = v[:, :, 1:] < v[:, :, :1] - alpha * np.arange(1, nb)[None, None, :]
        if ch.accepted and ch.contract.bu_cap == 0:
            li, ti, _ = ch.index
            res.record(0.0, ok=not dom[li, ti].any(), note=f"dominated plain cell chosen in {i}")
    return res


SUITES: dict[str, Callable[[], PropertyResult]] = {
    "no_simultaneous": check_no_simultaneous,
    "reference": check_reference_costs,
    "mutation": check_mutation_detected,
    "bu_monotone": check_bu_monotone,
    "welfare": check_welfare,
    "clairvoyant": check_clairvoyant,
    "profit_law": check_profit_law,
    "zeta_search": check_zeta_search,
    "zeta_dominance": check_zeta_dominance,
    "participation": check_participation,
}


def run_all(scale: float = 1.0, log=print) -> list[PropertyResult]:
    """Run every suite; ``scale`` shrinks instance counts for quick runs."""

    def k(x):
        return max(1, int(x * scale))

    runs = [
        lambda: check_no_simultaneous(k(500)),
        lambda: check_reference_costs(),
        lambda: check_mutation_detected(k(100)),
        lambda: check_bu_monotone(k(200)),
        lambda: check_welfare(k(10_000)),
        lambda: check_clairvoyant(k(10_000)),
        lambda: check_profit_law(k(100_000)),
        lambda: check_zeta_search(k(200)),
        lambda: check_zeta_dominance(k(100_000)),
        lambda: check_participation(k(10_000)),
    ]
    out = []
    for r in runs:
        result = r()
        log(result.line())
        out.append(result)
    return out
