"""Charging-station state and the contract-cost linear program.

The station holds a storage battery fed by a renewable source, buys energy at
``buy_price[t]`` and sells at ``sell_price[t]``.  Every committed EV carries a
residual energy obligation, a deadline and a residual utilisation allowance.
Pricing a new contract means solving the station-wide dispatch LP with and
without the newcomer.

All states are immutable values; ``commit_contract`` and ``advance_time``
return new states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .lp_core import (
    EPS_FEAS,
    LinearProgram,
    LpSolution,
    Relation,
    Solver,
    SolverFailure,
    solve,
    solve_batch,
)

# Sign applied to EV discharge inflow in the per-slot energy balance.  Only
# ever flipped by mutation tests of the verification suite.
_BALANCE_DISCHARGE_SIGN = 1.0


class StructureError(ValueError):
    """Request that does not fit the station's horizon or roster."""


class ContractRejected(ValueError):
    """Attempt to commit a contract the station cannot fulfil."""


class StateCorruption(RuntimeError):
    """A realised dispatch would break a physical bound."""


@dataclass(frozen=True)
class EvRecord:
    """An EV at the station.

    ``residual_energy`` may become negative after the EV has been charged past
    its obligation (the surplus can still be discharged); the utilisation
    allowance of the residual problem is always
    ``residual_energy + residual_bu``.
    """

    id: int
    arrival_time: int
    residual_energy: float
    deadline: int
    residual_bu: float
    soc: float
    soc_min: float = 2.0
    soc_max: float = 25.0
    eta_charge: float = 0.95
    eta_discharge: float = 0.95

    def __post_init__(self):
        if not self.soc_min - EPS_FEAS <= self.soc <= self.soc_max + EPS_FEAS:
            raise ValueError(f"EV {self.id}: soc {self.soc} outside [{self.soc_min}, {self.soc_max}]")
        if self.residual_bu < -EPS_FEAS:
            raise ValueError(f"EV {self.id}: negative residual_bu {self.residual_bu}")
        if not (0 < self.eta_charge <= 1 and 0 < self.eta_discharge <= 1):
            raise ValueError(f"EV {self.id}: efficiencies must lie in (0, 1]")

    @property
    def utilization_budget(self) -> float:
        return self.residual_energy + self.residual_bu


@dataclass(frozen=True, eq=False)
class StationState:
    clock: int
    storage_level: float
    storage_capacity: float
    storage_initial: float
    renewable_forecast: np.ndarray
    buy_price: np.ndarray
    sell_price: np.ndarray
    horizon_end: int = 24
    rate_limits: tuple[float, float] = (-3.3, 3.3)
    eta_c_cs: float = 0.95
    eta_d_cs: float = 0.95
    active_evs: tuple[EvRecord, ...] = ()
    leakage: float = 1.0  # per-slot retention factor of stored energy

    def __post_init__(self):
        T = self.horizon_end
        for name in ("renewable_forecast", "buy_price", "sell_price"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != T:
                raise ValueError(f"{name} must have {T} entries, got {arr.size}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "active_evs", tuple(self.active_evs))
        object.__setattr__(self, "rate_limits", tuple(float(r) for r in self.rate_limits))
        bad = np.nonzero(self.buy_price < self.sell_price)[0]
        if bad.size:
            raise ValueError(f"sell price exceeds buy price (arbitrage) in slots {bad.tolist()}")
        if not -EPS_FEAS <= self.storage_level <= self.storage_capacity + EPS_FEAS:
            raise ValueError(f"storage level {self.storage_level} outside [0, {self.storage_capacity}]")
        if not 0 <= self.storage_initial <= self.storage_capacity:
            raise ValueError("storage_initial outside [0, storage_capacity]")
        r_min, r_max = self.rate_limits
        if not r_min < 0 < r_max:
            raise ValueError("rate limits must satisfy R_min < 0 < R_max")
        if not (0 < self.eta_c_cs <= 1 and 0 < self.eta_d_cs <= 1):
            raise ValueError("storage efficiencies must lie in (0, 1]")
        if not 0 <= self.clock <= T:
            raise ValueError(f"clock {self.clock} outside [0, {T}]")

    @property
    def slots(self) -> range:
        return range(self.clock, self.horizon_end)

    def with_forecast(self, forecast: Sequence[float]) -> "StationState":
        return replace(self, renewable_forecast=np.asarray(forecast, float))


@dataclass(frozen=True)
class Contract:
    energy: float
    deadline: int
    bu_cap: float

    def __post_init__(self):
        if self.bu_cap < 0:
            raise ValueError("bu_cap must be non-negative")


@dataclass(frozen=True)
class ContractGrid:
    """Cartesian menu grid; cells are ordered energy-major, then deadline, then BU."""

    energies: tuple[float, ...]
    deadlines: tuple[int, ...]
    bu_caps: tuple[float, ...]

    def __post_init__(self):
        for name in ("energies", "deadlines", "bu_caps"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (self.energies and self.deadlines and self.bu_caps):
            raise ValueError("contract grid axes must be non-empty")

    @classmethod
    def for_arrival(
        cls,
        arrival_slot: int,
        horizon_end: int,
        energy_max: int = 20,
        deadline_span: int = 12,
        bu_max: int = 10,
        bu_step: float = 1.0,
        energy_min: int = 1,
        discharge_max: int = 0,
    ) -> "ContractGrid":
        last = min(arrival_slot + deadline_span, horizon_end)
        if last <= arrival_slot:
            raise StructureError("no deadline fits before the end of the horizon")
        energies = [-float(d) for d in range(discharge_max, 0, -1)] + [float(l) for l in range(energy_min, energy_max + 1)]
        n_bu = int(round(bu_max / bu_step)) if bu_step > 0 else 0
        return cls(tuple(energies), tuple(range(arrival_slot + 1, last + 1)), tuple(bu_step * b for b in range(n_bu + 1)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.energies), len(self.deadlines), len(self.bu_caps)

    def __len__(self) -> int:
        a, b, c = self.shape
        return a * b * c

    def __iter__(self) -> Iterator[Contract]:
        for l in self.energies:
            for t in self.deadlines:
                for b in self.bu_caps:
                    yield Contract(l, t, b)

    def index(self, contract: Contract) -> tuple[int, int, int]:
        return (
            self.energies.index(contract.energy),
            self.deadlines.index(contract.deadline),
            self.bu_caps.index(contract.bu_cap),
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcast (energy, deadline, bu) arrays of the grid shape."""
        return np.meshgrid(
            np.array(self.energies, float), np.array(self.deadlines, int), np.array(self.bu_caps, float), indexing="ij"
        )


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-slot dispatch over ``[start, start + len(q))``.

    ``r_plus``/``r_minus`` rows follow ``ev_ids`` and are zero outside each
    EV's window.
    """

    start: int
    q: np.ndarray
    x: np.ndarray
    e: np.ndarray
    s: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    ev_ids: tuple[int, ...]

    def objective(self, state: StationState) -> float:
        sl = slice(self.start, self.start + self.q.size)
        return float(state.buy_price[sl] @ self.q - state.sell_price[sl] @ self.x)

    def charge_draw(self, etas_c: np.ndarray) -> np.ndarray:
        return (self.r_plus / etas_c[:, None]).sum(axis=0) if self.ev_ids else np.zeros_like(self.q)

    def discharge_inflow(self, etas_dc: np.ndarray) -> np.ndarray:
        return (self.r_minus * etas_dc[:, None]).sum(axis=0) if self.ev_ids else np.zeros_like(self.q)

    def slot(self, k: int = 0) -> "SlotDispatch":
        return SlotDispatch(
            float(self.q[k]),
            float(self.x[k]),
            float(self.e[k]),
            float(self.s[k]),
            {i: float(self.r_plus[n, k]) for n, i in enumerate(self.ev_ids)},
            {i: float(self.r_minus[n, k]) for n, i in enumerate(self.ev_ids)},
        )


@dataclass(frozen=True)
class SlotDispatch:
    q: float = 0.0
    x: float = 0.0
    e: float = 0.0
    s: float = 0.0
    r_plus: dict = field(default_factory=dict)
    r_minus: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ContractCost:
    contract: Contract | None
    cost: float
    schedule: Schedule | None
    raw_objective: float = math.inf
    normalized_objective: float = math.inf

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.cost)


# ---------------------------------------------------------------------------
# LP construction


@dataclass(frozen=True)
class _Obligation:
    ev: EvRecord
    energy: float  # sum of net energy over the window must reach this
    budget: float  # sum of |r| over the window may not exceed this
    end: int  # exclusive window end


@dataclass(frozen=True, eq=False)
class ContractLp:
    """The LP plus the index bookkeeping needed to read a schedule back."""

    lp: LinearProgram
    start: int
    horizon: int
    ev_ids: tuple[int, ...]
    ev_slots: tuple[tuple[int, int], ...]  # (first slot, end slot) per EV
    r_index: tuple[np.ndarray, ...]  # column of r+ for each EV slot; r- follows at +1
    charge_rows: tuple[int, ...]
    budget_rows: tuple[int, ...]
    etas_charge: np.ndarray
    etas_discharge: np.ndarray

    def station_index(self, k: int) -> int:
        return 4 * k

    def schedule(self, x: np.ndarray) -> Schedule:
        H = self.horizon
        x = np.maximum(np.asarray(x, float), 0.0)
        block = x[: 4 * H].reshape(H, 4)
        rp = np.zeros((len(self.ev_ids), H))
        rm = np.zeros((len(self.ev_ids), H))
        for n, ((a, b), idx) in enumerate(zip(self.ev_slots, self.r_index)):
            rp[n, a - self.start : b - self.start] = x[idx]
            rm[n, a - self.start : b - self.start] = x[idx + 1]
        return Schedule(self.start, block[:, 0].copy(), block[:, 1].copy(), block[:, 2].copy(), block[:, 3].copy(), rp, rm, self.ev_ids)


def _obligations(state: StationState, extra: _Obligation | None) -> list[_Obligation]:
    obs = []
    for ev in state.active_evs:
        if ev.deadline <= state.clock:
            raise StructureError(f"EV {ev.id} is past its deadline")
        obs.append(_Obligation(ev, ev.residual_energy, ev.utilization_budget, ev.deadline))
    if extra is not None:
        obs.append(extra)
    return obs


def _build(state: StationState, obligations: list[_Obligation], t0: int | None = None) -> ContractLp:
    t0 = state.clock if t0 is None else t0
    T = state.horizon_end
    H = T - t0
    if H <= 0:
        raise StructureError("no slots left in the horizon")
    r_min, r_max = state.rate_limits
    eta_c, eta_d, rho = state.eta_c_cs, state.eta_d_cs, state.leakage

    n_station = 4 * H
    r_index = []
    ev_slots = []
    col = n_station
    for ob in obligations:
        a = max(t0, ob.ev.arrival_time)
        b = min(ob.end, T)
        if b <= a:
            raise StructureError(f"EV {ob.ev.id} has an empty charging window")
        ev_slots.append((a, b))
        r_index.append(col + 2 * np.arange(b - a))
        col += 2 * (b - a)
    n = col

    c = np.zeros(n)
    c[0:n_station:4] = state.buy_price[t0:]
    c[1:n_station:4] = -state.sell_price[t0:]
    lo = np.zeros(n)
    up = np.full(n, math.inf)
    for idx in r_index:
        up[idx] = r_max
        up[idx + 1] = -r_min

    rows: list[np.ndarray] = []
    rels: list[Relation] = []
    rhs: list[float] = []

    def add(row, rel, b):
        rows.append(row)
        rels.append(rel)
        rhs.append(b)

    # energy balance: q - x + e - s - charge + discharge = 0
    for k in range(H):
        row = np.zeros(n)
        row[4 * k] = 1.0
        row[4 * k + 1] = -1.0
        row[4 * k + 2] = 1.0
        row[4 * k + 3] = -1.0
        for ob, (a, b), idx in zip(obligations, ev_slots, r_index):
            t = t0 + k
            if a <= t < b:
                j = idx[t - a]
                row[j] = -1.0 / ob.ev.eta_charge
                row[j + 1] = _BALANCE_DISCHARGE_SIGN * ob.ev.eta_discharge
        add(row, Relation.EQ, 0.0)

    # storage level after each slot: rho^m B + sum rho^(t-tau) (E eta_c - e/eta_d + s eta_c)
    acc = np.zeros(n)
    base = state.storage_level
    for k in range(H):
        acc *= rho
        acc[4 * k + 2] = -1.0 / eta_d
        acc[4 * k + 3] = eta_c
        base = rho * base + state.renewable_forecast[t0 + k] * eta_c
        if k == H - 1:
            add(acc.copy(), Relation.EQ, state.storage_initial - base)
        else:
            add(acc.copy(), Relation.LE, state.storage_capacity - base)
            add(acc.copy(), Relation.GE, -base)

    charge_rows, budget_rows = [], []
    for ob, (a, b), idx in zip(obligations, ev_slots, r_index):
        row = np.zeros(n)
        row[idx] = 1.0
        row[idx + 1] = -1.0
        charge_rows.append(len(rows))
        add(row, Relation.GE, ob.energy)
        row = np.zeros(n)
        row[idx] = 1.0
        row[idx + 1] = 1.0
        budget_rows.append(len(rows))
        add(row, Relation.LE, ob.budget)
        soc = ob.ev.soc
        cum = np.zeros(n)
        for m, j in enumerate(idx):
            cum[j] = 1.0
            cum[j + 1] = -1.0
            if soc + r_max * (m + 1) > ob.ev.soc_max:
                add(cum.copy(), Relation.LE, ob.ev.soc_max - soc)
            if soc + r_min * (m + 1) < ob.ev.soc_min:
                add(cum.copy(), Relation.GE, ob.ev.soc_min - soc)

    lp = LinearProgram(c, np.array(rows), tuple(rels), np.array(rhs), lo, up)
    return ContractLp(
        lp,
        t0,
        H,
        tuple(ob.ev.id for ob in obligations),
        tuple(ev_slots),
        tuple(r_index),
        tuple(charge_rows),
        tuple(budget_rows),
        np.array([ob.ev.eta_charge for ob in obligations]),
        np.array([ob.ev.eta_discharge for ob in obligations]),
    )


def _check_contract(state: StationState, ev: EvRecord, contract: Contract) -> None:
    if any(e.id == ev.id for e in state.active_evs):
        raise StructureError(f"EV {ev.id} is already committed")
    start = max(state.clock, ev.arrival_time)
    if not start < contract.deadline <= state.horizon_end:
        raise StructureError(
            f"deadline {contract.deadline} outside ({start}, {state.horizon_end}]"
        )


def _new_obligation(ev: EvRecord, contract: Contract) -> _Obligation:
    return _Obligation(ev, contract.energy, abs(contract.energy) + contract.bu_cap, contract.deadline)


def build_contract_lp(state: StationState, ev: EvRecord, contract: Contract) -> ContractLp:
    """Dispatch LP serving every committed EV plus ``ev`` under ``contract``.

    For discharge-only contracts (``energy <= 0``) the net-energy row reads
    "discharge at most ``|energy|``" and the utilisation row uses ``|energy|``.
    """
    _check_contract(state, ev, contract)
    return _build(state, _obligations(state, _new_obligation(ev, contract)))


def contract_feasible(state: StationState, ev: EvRecord, contract: Contract) -> bool:
    """Exact feasibility of the newcomer's own constraints.

    The station side (unbounded grid trade and storage rates) is always
    feasible, so this decides whether the contract LP is feasible whenever the
    committed roster is.
    """
    start = max(state.clock, ev.arrival_time)
    n = contract.deadline - start
    if n <= 0 or contract.deadline > state.horizon_end:
        return False
    if contract.energy <= 0:
        return True
    return contract.energy <= state.rate_limits[1] * n + 1e-12 and ev.soc + contract.energy <= ev.soc_max + 1e-12


# ---------------------------------------------------------------------------
# Schedule normalisation


def normalize_schedule(state: StationState, clp: ContractLp, sched: Schedule) -> Schedule:
    """Remove simultaneous charge/discharge without raising the cost.

    EV pairs keep their net flow.  The storage pair keeps the stored-energy
    change exactly, and the grid trade absorbs whatever energy that frees up,
    buying less before selling more.
    """
    etas_c, etas_d = clp.etas_charge, clp.etas_discharge
    rp = np.maximum(sched.r_plus - sched.r_minus, 0.0)
    rm = np.maximum(sched.r_minus - sched.r_plus, 0.0)
    charge = (rp / etas_c[:, None]).sum(axis=0) if len(etas_c) else np.zeros_like(sched.q)
    discharge = (rm * etas_d[:, None]).sum(axis=0) if len(etas_d) else np.zeros_like(sched.q)
    ec, ed = state.eta_c_cs, state.eta_d_cs
    stored = sched.s * ec - sched.e / ed
    s_new = np.where(stored >= 0, stored / ec, 0.0)
    e_new = np.where(stored < 0, -stored * ed, 0.0)
    target = e_new - s_new - charge + _BALANCE_DISCHARGE_SIGN * discharge  # x - q after the change
    inc = target - (sched.x - sched.q)
    q_new = sched.q.copy()
    x_new = sched.x.copy()
    up = inc >= 0
    take = np.minimum(inc, sched.q)
    q_new[up] = sched.q[up] - take[up]
    x_new[up] = sched.x[up] + (inc - take)[up]
    dn = ~up
    give = np.maximum(inc, -sched.x)
    x_new[dn] = sched.x[dn] + give[dn]
    q_new[dn] = sched.q[dn] - (inc - give)[dn]
    return Schedule(sched.start, q_new, x_new, e_new, s_new, rp, rm, sched.ev_ids)


def _cost_from_solution(state: StationState, clp: ContractLp, sol: LpSolution, contract: Contract | None) -> ContractCost:
    if not sol.optimal:
        if sol.status.value == "unbounded":
            raise SolverFailure("contract LP reported unbounded")
        return ContractCost(contract, math.inf, None)
    raw = clp.schedule(sol.primal)
    norm = normalize_schedule(state, clp, raw)
    return ContractCost(contract, float(sol.objective_value), norm, raw.objective(state), norm.objective(state))


def contract_cost(state: StationState, ev: EvRecord, contract: Contract, solver: Solver | None = None) -> ContractCost:
    """Optimal station cost ``v`` of serving the roster plus ``contract`` (+inf if infeasible)."""
    clp = build_contract_lp(state, ev, contract)
    return _cost_from_solution(state, clp, solve(clp.lp, solver), contract)


def residual_lp(state: StationState) -> ContractLp:
    """LP serving only the committed roster (the newcomer's dispatch fixed at zero)."""
    return _build(state, _obligations(state, None))


def residual_cost(state: StationState, solver: Solver | None = None) -> ContractCost:
    clp = residual_lp(state)
    return _cost_from_solution(state, clp, solve(clp.lp, solver), None)


def cost_without_user(state: StationState, solver: Solver | None = None) -> float:
    """``v_{-k}``: optimal cost of serving the committed EVs alone."""
    return residual_cost(state, solver).cost


@dataclass(frozen=True, eq=False)
class MenuCosts(Sequence):
    """One ``ContractCost`` per grid cell plus the shared ``v_minus_k``."""

    grid: ContractGrid
    cells: tuple[ContractCost, ...]
    v_minus_k: float

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    @property
    def costs(self) -> np.ndarray:
        return np.array([c.cost for c in self.cells]).reshape(self.grid.shape)


def menu_costs(
    state: StationState, ev: EvRecord, grid: ContractGrid, solver: Solver | None = None
) -> MenuCosts:
    """Costs of every cell of ``grid`` for newcomer ``ev``."""
    contracts = list(grid)
    clps = [build_contract_lp(state, ev, c) for c in contracts]
    sols = solve_batch([c.lp for c in clps], solver)
    cells = []
    for clp, sol, con in zip(clps, sols, contracts):
        if isinstance(sol, Exception):
            raise sol
        cells.append(_cost_from_solution(state, clp, sol, con))
    return MenuCosts(grid, tuple(cells), cost_without_user(state, solver))


def scenario_averaged_cost(
    state: StationState,
    ev: EvRecord,
    contract: Contract,
    scenarios: Sequence[tuple[float, Sequence[float]]],
    solver: Solver | None = None,
) -> float:
    """Probability-weighted contract cost over renewable scenarios."""
    weights = np.array([w for w, _ in scenarios], float)
    if weights.size == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("scenario weights must be non-negative and sum to 1")
    total = 0.0
    for w, trace in scenarios:
        if w == 0:
            continue
        v = contract_cost(state.with_forecast(trace), ev, contract, solver).cost
        if not math.isfinite(v):
            return math.inf
        total += w * v
    return total


# ---------------------------------------------------------------------------
# State evolution


def commit_contract(state: StationState, ev: EvRecord, contract: Contract, price: float | None = None) -> StationState:
    """Add ``ev`` to the roster with the obligations of ``contract``.

    ``price`` is accepted for symmetry with the pricing layer; the physical
    state does not depend on it.
    """
    _check_contract(state, ev, contract)
    if not contract_feasible(state, ev, contract):
        raise ContractRejected(f"contract {contract} cannot be fulfilled (infinite cost)")
    # the residual allowance satisfies residual_energy + residual_bu = |l| + BU
    rec = replace(
        ev,
        arrival_time=max(ev.arrival_time, state.clock),
        residual_energy=contract.energy,
        deadline=contract.deadline,
        residual_bu=contract.bu_cap + abs(contract.energy) - contract.energy,
    )
    return replace(state, active_evs=state.active_evs + (rec,))


def advance_time(state: StationState, dispatch: SlotDispatch, tol: float = 1e-6) -> StationState:
    """Execute ``dispatch`` for the current slot and move the clock forward."""
    t = state.clock
    if t >= state.horizon_end:
        raise StructureError("horizon already exhausted")
    r_min, r_max = state.rate_limits
    for name in ("q", "x", "e", "s"):
        if getattr(dispatch, name) < -tol:
            raise StateCorruption(f"negative {name} in dispatch")
    charge = discharge = 0.0
    evs = []
    for ev in state.active_evs:
        rp = max(dispatch.r_plus.get(ev.id, 0.0), 0.0)
        rm = max(dispatch.r_minus.get(ev.id, 0.0), 0.0)
        if t < ev.arrival_time and (rp > tol or rm > tol):
            raise StateCorruption(f"EV {ev.id} dispatched before arrival")
        if rp > r_max + tol or rm > -r_min + tol:
            raise StateCorruption(f"EV {ev.id} rate limit exceeded")
        soc = ev.soc + rp - rm
        if not ev.soc_min - tol <= soc <= ev.soc_max + tol:
            raise StateCorruption(f"EV {ev.id} battery level {soc} out of bounds")
        bu = ev.residual_bu - 2.0 * rm
        if bu < -tol:
            raise StateCorruption(f"EV {ev.id} exceeded its utilisation allowance")
        charge += rp / ev.eta_charge
        discharge += rm * ev.eta_discharge
        evs.append(
            replace(
                ev,
                soc=min(max(soc, ev.soc_min), ev.soc_max),
                residual_energy=ev.residual_energy - (rp - rm),
                residual_bu=max(bu, 0.0),
            )
        )
    unknown = (set(dispatch.r_plus) | set(dispatch.r_minus)) - {e.id for e in state.active_evs}
    if any(dispatch.r_plus.get(i, 0.0) > tol or dispatch.r_minus.get(i, 0.0) > tol for i in unknown):
        raise StateCorruption(f"dispatch for unknown EVs {sorted(unknown)}")
    q, x, e, s = (max(getattr(dispatch, n), 0.0) for n in ("q", "x", "e", "s"))
    imbalance = q - x + e - s - charge + discharge
    if abs(imbalance) > tol * max(1.0, q + x + e + s + charge + discharge):
        raise StateCorruption(f"energy balance violated by {imbalance:.3g} in slot {t}")
    level = state.leakage * state.storage_level + state.renewable_forecast[t] * state.eta_c_cs - e / state.eta_d_cs + s * state.eta_c_cs
    if not -tol <= level <= state.storage_capacity + tol:
        raise StateCorruption(f"storage level {level} out of [0, {state.storage_capacity}]")
    level = min(max(level, 0.0), state.storage_capacity)
    clock = t + 1
    evs = [ev for ev in evs if ev.deadline > clock]
    return replace(state, clock=clock, storage_level=level, active_evs=tuple(evs))


# ---------------------------------------------------------------------------
# JSON-compatible documents


def state_to_dict(state: StationState) -> dict:
    return {
        "clock": state.clock,
        "storage_level": state.storage_level,
        "storage_capacity": state.storage_capacity,
        "storage_initial": state.storage_initial,
        "renewable_forecast": state.renewable_forecast.tolist(),
        "buy_price": state.buy_price.tolist(),
        "sell_price": state.sell_price.tolist(),
        "horizon_end": state.horizon_end,
        "rate_limits": list(state.rate_limits),
        "eta_c_cs": state.eta_c_cs,
        "eta_d_cs": state.eta_d_cs,
        "leakage": state.leakage,
        "active_evs": [
            {f: getattr(ev, f) for f in EvRecord.__dataclass_fields__} for ev in state.active_evs
        ],
    }


def state_from_dict(doc: dict) -> StationState:
    doc = dict(doc)
    evs = tuple(EvRecord(**ev) for ev in doc.pop("active_evs", ()))
    if "rate_limits" in doc:
        doc["rate_limits"] = tuple(doc["rate_limits"])
    return StationState(active_evs=evs, **doc)
