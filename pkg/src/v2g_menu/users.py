"""User population, utilities over a contract grid, and contract choice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pricing import PriceMenu
from .station import Contract, ContractGrid, StructureError

TIE_TOL = 1e-9


@dataclass(frozen=True)
class PopulationParams:
    energy_mean: float = 6.9
    energy_sd: float = 4.9
    energy_low: float = 2.0
    energy_high: float = 20.0
    deadline_mean: float = 2.5
    soc_min: float = 2.0
    soc_max: float = 25.0
    alpha: float = 0.07


@dataclass(frozen=True)
class UserRealization:
    desired_energy: float
    preferred_deadline: float
    initial_soc: float
    degradation_rate: float
    arrival_time: int

    def __post_init__(self):
        if self.preferred_deadline <= 0:
            raise ValueError("preferred deadline must be positive")
        if self.degradation_rate < 0:
            raise ValueError("degradation rate must be non-negative")
        if self.desired_energy < 0:
            raise ValueError("desired energy must be non-negative")


def energy_value(l, r):
    """Concave value of receiving ``l`` kWh when ``r`` are wanted; flat at ``r**2`` beyond."""
    l = np.asarray(l, float)
    return np.where(l <= r, -(l**2) + 2.0 * r * l, r * r)


def deadline_factor(wait, t_pref, mode: str = "relative"):
    """Discount for a deadline ``wait`` hours after arrival.

    ``relative`` is 1 at zero wait and 0 once the wait reaches ``t_pref``.
    ``absolute`` divides by ``exp(t_pref - arrival) - 1`` instead and is
    selected by passing ``wait`` and ``arrival`` through ``utility_table``.
    """
    wait = np.asarray(wait, float)
    num = np.maximum(np.expm1(t_pref - wait), 0.0)
    return num / math.expm1(t_pref)


@dataclass(frozen=True, eq=False)
class UtilityTable:
    grid: ContractGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise StructureError("utility table shape does not match its grid")

    def __getitem__(self, contract: Contract) -> float:
        return float(self.values[self.grid.index(contract)])


def utility_table(user: UserRealization, grid: ContractGrid, normalization: str = "relative") -> UtilityTable:
    """Realised utility of every cell of ``grid``.

    Charging cells get ``energy_value(l, r)`` times the deadline discount;
    cells with ``l <= 0`` carry no energy value.  Every cell then pays the
    degradation cost ``alpha * BU``, and discharge cells also pay for the
    ``|l|`` they give up.
    """
    L, D, B = grid.arrays()
    wait = D - user.arrival_time
    if normalization == "relative":
        factor = deadline_factor(wait, user.preferred_deadline)
    elif normalization == "absolute":
        denom = math.expm1(user.preferred_deadline - user.arrival_time)
        num = np.maximum(np.expm1(user.preferred_deadline - wait), 0.0)
        factor = num / denom if denom > 0 else np.zeros_like(num)
    else:
        raise ValueError(f"unknown deadline normalization {normalization!r}")
    base = np.where(L > 0, energy_value(L, user.desired_energy) * factor, 0.0)
    cost = user.degradation_rate * (B + np.where(L < 0, -L, 0.0))
    return UtilityTable(grid, base - cost)


def lower_endpoints(grid: ContractGrid, alpha: float) -> np.ndarray:
    """Lowest possible utility of each cell for the sampled population (deadline factor can be 0)."""
    L, _, B = grid.arrays()
    return -alpha * (B + np.where(L < 0, -L, 0.0))


@dataclass(frozen=True)
class Choice:
    contract: Contract | None
    index: tuple[int, int, int] | None
    surplus: float

    @property
    def accepted(self) -> bool:
        return self.contract is not None


def tie_break(grid: ContractGrid, candidates) -> tuple[int, int, int]:
    """Lowest BU, then earliest deadline, then smallest energy."""
    return min((tuple(int(i) for i in c) for c in candidates), key=lambda c: (grid.bu_caps[c[2]], grid.deadlines[c[1]], grid.energies[c[0]]))


def choose(table: UtilityTable, menu: PriceMenu, tie_tol: float = TIE_TOL) -> Choice:
    """Best cell for the user, or rejection when every payoff is negative.

    A best payoff of exactly zero is accepted.
    """
    if menu.grid is not None and menu.grid != table.grid:
        raise StructureError("utility table and price menu use different grids")
    if menu.prices.shape != table.values.shape:
        raise StructureError("utility table and price menu shapes differ")
    payoff = np.where(np.isfinite(menu.prices), table.values - menu.prices, -math.inf)
    best = float(payoff.max())
    if not best >= -tie_tol:
        return Choice(None, None, 0.0)
    idx = tie_break(table.grid, np.argwhere(payoff >= best - tie_tol))
    l, t, b = (table.grid.energies[idx[0]], table.grid.deadlines[idx[1]], table.grid.bu_caps[idx[2]])
    return Choice(Contract(l, t, b), idx, max(float(payoff[idx]), 0.0))


def _truncnorm_rejection(rng: np.random.Generator, mean, sd, low, high) -> float:
    while True:
        v = rng.normal(mean, sd)
        if low <= v <= high:
            return float(v)


def sample_user(rng: np.random.Generator, clock: int, params: PopulationParams = PopulationParams()) -> UserRealization:
    r = _truncnorm_rejection(rng, params.energy_mean, params.energy_sd, params.energy_low, params.energy_high)
    t_pref = float(rng.exponential(params.deadline_mean))
    while t_pref <= 0:
        t_pref = float(rng.exponential(params.deadline_mean))
    soc = float(rng.uniform(params.soc_min, params.soc_max - r))
    return UserRealization(r, t_pref, soc, params.alpha, clock)
