"""Day simulation of a menu-pricing charging station.

Each replicate draws a renewable trace, a Poisson stream of arrivals and one
user per arrival from independent child streams of a single seed, so sweep
points that share a seed see identical days (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .lp_core import HighsSolver, SolverFailure
from .menu_search import ContractFamily
from .pricing import PointMass, TruncNormal, Uniform, compute_zeta
from .station import (
    Contract,
    ContractGrid,
    EvRecord,
    StationState,
    advance_time,
    commit_contract,
    residual_cost,
)
from .users import PopulationParams, lower_endpoints, sample_user, tie_break, utility_table

METRIC_NAMES = (
    "arrivals",
    "admitted",
    "admitted_fraction",
    "total_user_surplus",
    "total_station_profit",
    "avg_dwell_time",
    "avg_additional_bu",
    "max_active_users",
    "grid_purchases",
    "on_peak_purchases",
    "off_peak_purchases",
    "grid_sales",
    "operating_cost",
)


@dataclass(frozen=True)
class ArrivalProcess:
    """Piecewise-constant arrival rate per slot (vehicles per hour)."""

    rates: tuple[float, ...]

    def __post_init__(self):
        if any(r < 0 for r in self.rates):
            raise ValueError("arrival rates must be non-negative")

    @classmethod
    def from_config(cls, config: SimConfig) -> "ArrivalProcess":
        a = config.arrivals
        return cls(
            tuple(
                a.on_peak_rate if a.on_peak_start <= t < a.on_peak_end else a.off_peak_rate
                for t in range(config.station.horizon)
            )
        )

    def rate(self, t: float) -> float:
        i = int(math.floor(t))
        return self.rates[i] if 0 <= i < len(self.rates) else 0.0


def sample_arrivals(process: ArrivalProcess, horizon: float, rng: np.random.Generator) -> list[float]:
    """Arrival times on ``[0, horizon)`` by thinning a homogeneous process."""
    lam_max = max(process.rates, default=0.0)
    if lam_max <= 0:
        return []
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / lam_max)
        if t >= horizon:
            return times
        if rng.uniform() * lam_max < process.rate(t):
            times.append(t)


@dataclass(frozen=True)
class Acceptance:
    ev_id: int
    arrival_slot: int
    energy: float
    deadline: int
    bu_cap: float
    price: float
    cost: float
    v_minus_k: float
    surplus: float

    @property
    def profit(self) -> float:
        return self.price - (self.cost - self.v_minus_k)


@dataclass
class SimMetrics:
    arrivals: int = 0
    admitted: int = 0
    total_user_surplus: float = 0.0
    total_station_profit: float = 0.0
    max_active_users: int = 0
    grid_purchases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grid_sales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    storage_level: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_users: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_price: np.ndarray = field(default_factory=lambda: np.zeros(0))
    arrivals_per_slot: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accepted: list[Acceptance] = field(default_factory=list)
    operating_cost: float = 0.0
    on_peak: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def admitted_fraction(self) -> float:
        return self.admitted / self.arrivals if self.arrivals else 0.0

    @property
    def avg_dwell_time(self) -> float:
        return float(np.mean([a.deadline - a.arrival_slot for a in self.accepted])) if self.accepted else 0.0

    @property
    def avg_additional_bu(self) -> float:
        return float(np.mean([a.bu_cap for a in self.accepted])) if self.accepted else 0.0

    @property
    def on_peak_purchases(self) -> float:
        return float(self.grid_purchases[self.on_peak].sum())

    @property
    def off_peak_purchases(self) -> float:
        return float(self.grid_purchases[~self.on_peak].sum())

    def ledger_profit(self) -> float:
        return float(sum(a.profit for a in self.accepted))

    def scalars(self) -> dict[str, float]:
        out = {}
        for name in METRIC_NAMES:
            v = getattr(self, name)
            out[name] = float(v.sum()) if isinstance(v, np.ndarray) else float(v)
        return out

    def traces(self) -> dict[str, np.ndarray]:
        return {
            "grid_purchases": self.grid_purchases,
            "grid_sales": self.grid_sales,
            "storage_level": self.storage_level,
            "active_users": self.active_users,
            "mean_price": self.mean_price,
            "arrivals": self.arrivals_per_slot,
        }


class _Pricer:
    """Per-arrival offset rule operating on a ``ContractFamily``."""

    def __init__(self, config: SimConfig):
        s = config.strategy
        self.kind = s.kind
        self.beta = s.beta
        self.shift = s.endpoint_shift
        self.alpha = config.population.alpha
        n = s.noise
        if n.kind == "uniform":
            self.noise = Uniform(n.low, n.high)
        elif n.kind == "truncnormal":
            self.noise = TruncNormal(n.mean, n.sd, n.low, n.high)
        else:
            self.noise = PointMass(n.mean)

    def offset(self, fam: ContractFamily, utilities: np.ndarray) -> float:
        vk = fam.v_minus_k
        if self.kind == "cost":
            return 0.0
        if self.kind == "beta":
            return self.beta
        if self.kind == "worst":
            low = lower_endpoints(fam.grid, self.alpha) + self.shift
            idx, gain = fam.argmax(low)
            return (max(gain + vk, 0.0) if idx is not None else 0.0) + self.beta
        if self.kind == "clairvoyant":
            idx, gain = fam.argmax(utilities)
            return max(gain + vk, 0.0) if idx is not None else 0.0
        # zeta: the station believes U = Y + X with Y the degradation term
        y = lower_endpoints(fam.grid, self.alpha)
        idx, gain = fam.argmax(y)
        if idx is None:
            return 0.0
        costs = np.full(fam.grid.shape, math.inf)
        costs[idx] = fam.values[idx]
        return compute_zeta(costs, vk, y, self.noise)


def make_grid(config: SimConfig, arrival_slot: int) -> ContractGrid:
    g = config.grid
    return ContractGrid.for_arrival(
        arrival_slot,
        config.station.horizon,
        energy_max=g.energy_max,
        deadline_span=g.deadline_span,
        bu_max=g.bu_max if config.v2g_enabled else 0,
        bu_step=g.bu_step,
        energy_min=g.energy_min,
        discharge_max=g.discharge_max if config.discharge_only_enabled else 0,
    )


def initial_state(config: SimConfig, renewable: np.ndarray) -> StationState:
    st = config.station
    c, g = config.prices()
    return StationState(
        clock=0,
        storage_level=st.storage_initial,
        storage_capacity=st.storage_capacity,
        storage_initial=st.storage_initial,
        renewable_forecast=renewable,
        buy_price=c,
        sell_price=g,
        horizon_end=st.horizon,
        rate_limits=(st.rate_min, st.rate_max),
        eta_c_cs=st.eta_charge,
        eta_d_cs=st.eta_discharge,
        leakage=st.leakage,
    )


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    arr, users, ren = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(arr), np.random.default_rng(users), np.random.default_rng(ren)


def sample_renewables(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    st = config.station
    out = np.empty(st.horizon)
    for t in range(st.horizon):
        v = rng.normal(st.renewable_mean, st.renewable_sd)
        while v < 0:
            v = rng.normal(st.renewable_mean, st.renewable_sd)
        out[t] = v
    return out


class ReplicateAborted(RuntimeError):
    pass


def run_day(config: SimConfig, seed: int) -> SimMetrics:
    """Simulate one day; arrivals of slot ``t`` are priced before slot ``t`` is dispatched."""
    try:
        return _run_day(config, seed)
    except SolverFailure as exc:
        raise ReplicateAborted(f"seed {seed}: {exc}") from exc


def _run_day(config: SimConfig, seed: int) -> SimMetrics:
    rng_arr, rng_user, rng_ren = _streams(seed)
    T = config.station.horizon
    renewable = sample_renewables(config, rng_ren)
    times = sample_arrivals(ArrivalProcess.from_config(config), T, rng_arr)
    pop = config.population
    params = PopulationParams(
        pop.energy_mean, pop.energy_sd, pop.energy_low, pop.energy_high, pop.deadline_mean, pop.soc_min, pop.soc_max, pop.alpha
    )
    users = [sample_user(rng_user, int(math.ceil(t)), params) for t in times]
    pricer = _Pricer(config)
    solver = HighsSolver()
    state = initial_state(config, renewable)
    c, _ = config.prices()
    m = SimMetrics(
        arrivals=len(times),
        grid_purchases=np.zeros(T),
        grid_sales=np.zeros(T),
        storage_level=np.zeros(T),
        active_users=np.zeros(T, int),
        mean_price=np.full(T, math.nan),
        arrivals_per_slot=np.zeros(T, int),
        on_peak=np.asarray(
            [config.tariff.on_peak_start <= t < config.tariff.on_peak_end for t in range(T)], bool
        ),
    )
    profit = 0.0
    queue = iter(sorted(zip((u.arrival_time for u in users), range(len(users)), users)))
    pending = next(queue, None)
    for t in range(T):
        prices_t = []
        while pending is not None and pending[0] == t:
            _, k, user = pending
            pending = next(queue, None)
            m.arrivals_per_slot[t] += 1
            acc = _serve(config, state, k, user, pricer)
            if acc is not None:
                ev = EvRecord(
                    k, t, 0.0, acc.deadline, 0.0, user.initial_soc, pop.soc_min, pop.soc_max,
                    config.station.ev_eta_charge, config.station.ev_eta_discharge,
                )
                state = commit_contract(state, ev, Contract(acc.energy, acc.deadline, acc.bu_cap), acc.price)
                m.accepted.append(acc)
                m.admitted += 1
                m.total_user_surplus += acc.surplus
                profit += acc.profit
                prices_t.append(acc.price)
        if prices_t:
            m.mean_price[t] = float(np.mean(prices_t))
        m.active_users[t] = len(state.active_evs)
        m.max_active_users = max(m.max_active_users, len(state.active_evs))
        plan = residual_cost(state, solver)
        if plan.schedule is None:
            raise SolverFailure(f"residual dispatch infeasible in slot {t}")
        d = plan.schedule.slot(0)
        m.grid_purchases[t] = d.q
        m.grid_sales[t] = d.x
        m.operating_cost += c[t] * d.q - state.sell_price[t] * d.x
        state = advance_time(state, d)
        m.storage_level[t] = state.storage_level
    # arrivals whose slot falls past the horizon are turned away
    m.total_station_profit = profit
    if abs(profit - m.ledger_profit()) > 1e-6:
        raise AssertionError("profit accumulator disagrees with the acceptance ledger")
    return m


def _serve(config: SimConfig, state: StationState, k: int, user, pricer: _Pricer) -> Acceptance | None:
    t = state.clock
    if t >= config.station.horizon:
        return None
    grid = make_grid(config, t)
    ev = EvRecord(
        k, t, 0.0, t + 1, 0.0, user.initial_soc, config.population.soc_min, config.population.soc_max,
        config.station.ev_eta_charge, config.station.ev_eta_discharge,
    )
    fam = ContractFamily(state, ev, grid)
    u = utility_table(user, grid, config.population.deadline_normalization).values
    delta = pricer.offset(fam, u)
    idx, gain = fam.argmax(u)
    if idx is None:
        return None
    vk = fam.v_minus_k
    payoff = gain + vk - delta
    if payoff < -1e-9:
        return None
    # argmax already applies the menu tie-break; re-run it over exact ties for safety
    ties = np.argwhere(fam.feasible & ~np.isnan(fam.values) & (u - fam.values >= gain - 1e-9))
    idx = tie_break(grid, ties)
    cost = float(fam.values[idx])
    price = cost - vk + delta
    return Acceptance(
        k, t, grid.energies[idx[0]], grid.deadlines[idx[1]], grid.bu_caps[idx[2]],
        price, cost, vk, max(float(u[idx]) - price, 0.0),
    )


@dataclass(frozen=True)
class SweepPoint:
    label: str
    config: SimConfig


@dataclass
class SweepResult:
    points: list[SweepPoint]
    seeds: list[int]
    runs: list[list[SimMetrics]]  # runs[point][replicate]

    def table(self, metric: str) -> np.ndarray:
        return np.array([[r.scalars()[metric] for r in row] for row in self.runs])

    def summary(self) -> list[dict]:
        out = []
        for p, row in zip(self.points, self.runs):
            entry = {"point": p.label}
            for name in METRIC_NAMES:
                vals = np.array([r.scalars()[name] for r in row])
                entry[name] = {
                    "mean": float(vals.mean()),
                    "se": float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0,
                }
            out.append(entry)
        return out


def replicate_seeds(seed: int, replicates: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(replicates)]


def sweep_points(config: SimConfig) -> list[SweepPoint]:
    betas = config.sweep.beta_values
    bmaxes = config.sweep.bmax_values
    points = []
    for b in bmaxes if bmaxes is not None else [None]:
        for beta in betas if betas is not None else [None]:
            cfg = config
            parts = []
            if b is not None:
                cfg = cfg.replace(**{"station.storage_capacity": float(b)})
                parts.append(f"bmax={b:g}")
            if beta is not None:
                cfg = cfg.replace(**{"strategy.beta": float(beta)})
                parts.append(f"beta={beta:g}")
            points.append(SweepPoint(",".join(parts) or "base", cfg))
    return points


def sweep(config: SimConfig, points: list[SweepPoint] | None = None, replicates: int | None = None, progress=None) -> SweepResult:
    """Run every point on the same replicate seeds."""
    points = points if points is not None else sweep_points(config)
    n = replicates if replicates is not None else config.replicates
    if n < 1:
        raise ValueError("need at least one replicate")
    seeds = replicate_seeds(config.seed, n)
    runs = []
    for p in points:
        row = []
        for s in seeds:
            row.append(run_day(p.config, s))
            if progress is not None:
                progress(p, s)
        runs.append(row)
    return SweepResult(points, seeds, runs)
