"""Menu pricing strategies.

Every strategy prices a cell as its marginal cost ``v - v_minus_k`` plus one
offset shared by all cells; they differ only in how the offset is chosen.
Cells with infinite cost keep an infinite price so the menu shape never
changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import stats

from .station import Contract, ContractGrid, MenuCosts


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PriceMenu:
    costs: np.ndarray
    prices: np.ndarray
    v_minus_k: float
    offset: float
    grid: ContractGrid | None = None

    @property
    def marginal(self) -> np.ndarray:
        return self.costs - self.v_minus_k

    def entries(self) -> Iterator[tuple[Contract, float, float]]:
        if self.grid is None:
            raise ConfigurationError("menu has no grid attached")
        for contract, c, p in zip(self.grid, self.costs.ravel(), self.prices.ravel()):
            yield contract, float(c), float(p)

    def price_of(self, contract: Contract) -> float:
        return float(self.prices[self.grid.index(contract)])


def _unpack(menu_costs, grid=None) -> tuple[np.ndarray, ContractGrid | None]:
    if isinstance(menu_costs, MenuCosts):
        return menu_costs.costs, menu_costs.grid
    return np.asarray(menu_costs, float), grid


def _with_offset(costs, v_minus_k, offset, grid) -> PriceMenu:
    if not math.isfinite(v_minus_k):
        raise ConfigurationError("v_minus_k must be finite")
    if not math.isfinite(offset):
        raise ConfigurationError("price offset must be finite")
    prices = np.where(np.isfinite(costs), costs - v_minus_k + offset, math.inf)
    return PriceMenu(costs, prices, float(v_minus_k), float(offset), grid)


def price_cost_based(menu_costs, v_minus_k: float, grid: ContractGrid | None = None) -> PriceMenu:
    """Price at marginal cost; maximises ex-post welfare with zero station profit."""
    costs, grid = _unpack(menu_costs, grid)
    return _with_offset(costs, v_minus_k, 0.0, grid)


def worst_case_offset(costs: np.ndarray, v_minus_k: float, lower_endpoints: np.ndarray) -> float:
    lower_endpoints = np.broadcast_to(np.asarray(lower_endpoints, float), costs.shape)
    finite = np.isfinite(costs)
    if np.any(np.isnan(lower_endpoints[finite])):
        raise ConfigurationError("lower endpoint missing for an offerable cell")
    if not finite.any():
        return 0.0
    gain = lower_endpoints[finite] - costs[finite] + v_minus_k
    return max(float(gain.max()), 0.0)


def price_worst_case(
    menu_costs, v_minus_k: float, lower_endpoints, grid: ContractGrid | None = None, beta: float = 0.0
) -> PriceMenu:
    """Marginal cost plus the best guaranteed gain over the utility lower endpoints.

    ``beta`` adds a further fixed mark-up on top (the combined strategy used in
    the day simulations).
    """
    costs, grid = _unpack(menu_costs, grid)
    if beta < 0:
        raise ConfigurationError("beta must be non-negative")
    return _with_offset(costs, v_minus_k, worst_case_offset(costs, v_minus_k, lower_endpoints) + beta, grid)


def clairvoyant_offset(costs: np.ndarray, v_minus_k: float, utilities: np.ndarray) -> float:
    finite = np.isfinite(costs)
    if not finite.any():
        return 0.0
    gain = np.where(finite, np.asarray(utilities, float) - costs, -math.inf)
    return max(float(gain.max()) + v_minus_k, 0.0)


def price_clairvoyant(menu_costs, v_minus_k: float, realized_utilities, grid: ContractGrid | None = None) -> PriceMenu:
    """Extract the whole surplus of a user whose utilities are known."""
    costs, grid = _unpack(menu_costs, grid)
    u = getattr(realized_utilities, "values", realized_utilities)
    return _with_offset(costs, v_minus_k, clairvoyant_offset(costs, v_minus_k, u), grid)


def price_fixed_beta(menu_costs, v_minus_k: float, beta: float, grid: ContractGrid | None = None) -> PriceMenu:
    costs, grid = _unpack(menu_costs, grid)
    if beta < 0:
        raise ConfigurationError("beta must be non-negative")
    return _with_offset(costs, v_minus_k, beta, grid)


def price_zeta(menu_costs, v_minus_k: float, zeta: float, grid: ContractGrid | None = None) -> PriceMenu:
    return price_fixed_beta(menu_costs, v_minus_k, zeta, grid)


# ---------------------------------------------------------------------------
# additive-noise utilities and the optimal fixed offset


class NoiseDistribution:
    """User-private additive utility noise ``X``."""

    discrete = False

    def prob_at_least(self, x):
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def atoms(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(NoiseDistribution):
    value: float
    discrete = True

    def prob_at_least(self, x):
        return np.where(np.asarray(x, float) <= self.value, 1.0, 0.0)

    def support(self):
        return self.value, self.value

    def sample(self, rng, size=None):
        return np.full(size, self.value) if size is not None else self.value

    def atoms(self):
        return np.array([self.value])


@dataclass(frozen=True)
class Discrete(NoiseDistribution):
    values: tuple[float, ...]
    probs: tuple[float, ...]
    discrete = True

    def __post_init__(self):
        if len(self.values) != len(self.probs) or abs(sum(self.probs) - 1) > 1e-9 or min(self.probs) < 0:
            raise ConfigurationError("discrete noise needs matching values and probabilities summing to 1")

    def prob_at_least(self, x):
        v = np.asarray(self.values)
        p = np.asarray(self.probs)
        x = np.asarray(x, float)
        return (p[None, :] * (v[None, :] >= x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)

    def support(self):
        return min(self.values), max(self.values)

    def sample(self, rng, size=None):
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))

    def atoms(self):
        return np.asarray(self.values, float)


@dataclass(frozen=True)
class Uniform(NoiseDistribution):
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ConfigurationError("uniform noise needs high > low")

    def prob_at_least(self, x):
        return np.clip((self.high - np.asarray(x, float)) / (self.high - self.low), 0.0, 1.0)

    def support(self):
        return self.low, self.high

    def sample(self, rng, size=None):
        return rng.uniform(self.low, self.high, size)


@dataclass(frozen=True)
class TruncNormal(NoiseDistribution):
    mean: float
    sd: float
    low: float
    high: float
    _dist: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.sd > 0 and self.high > self.low):
            raise ConfigurationError("truncated normal needs sd > 0 and high > low")
        a, b = (self.low - self.mean) / self.sd, (self.high - self.mean) / self.sd
        object.__setattr__(self, "_dist", stats.truncnorm(a, b, loc=self.mean, scale=self.sd))

    def prob_at_least(self, x):
        return self._dist.sf(np.asarray(x, float))

    def support(self):
        return self.low, self.high

    def sample(self, rng, size=None):
        return self._dist.rvs(size=size, random_state=rng)


def _headroom(costs, v_minus_k, y_table) -> float:
    """min over offerable cells of ``v - v_minus_k - Y``: the noise level needed to accept."""
    finite = np.isfinite(costs)
    if not finite.any():
        raise ConfigurationError("menu has no offerable cell")
    y = np.broadcast_to(np.asarray(y_table, float), costs.shape)
    return float(np.min(costs[finite] - v_minus_k - y[finite]))


def fixed_offset_expected_profit(beta, costs, v_minus_k, y_table, noise: NoiseDistribution):
    """``beta * max_cells P(Y + X >= beta + v - v_minus_k)`` for additive-noise utilities."""
    need = _headroom(np.asarray(costs, float), v_minus_k, y_table)
    beta = np.asarray(beta, float)
    return beta * noise.prob_at_least(beta + need)


def compute_zeta(menu_costs, v_minus_k: float, y_table, noise: NoiseDistribution, tol: float = 1e-4) -> float:
    """Largest offset maximising the expected fixed-offset profit.

    Discrete noise is searched exhaustively over the offsets that make an atom
    exactly marginal.  Continuous noise gets a coarse grid followed by
    golden-section refinement around the best grid point.
    """
    costs, _ = _unpack(menu_costs)
    need = _headroom(costs, v_minus_k, y_table)
    lo, hi = noise.support()
    beta_hi = hi - need
    if beta_hi <= 0:
        return 0.0

    def f(b):
        return float(b * noise.prob_at_least(b + need))

    if noise.discrete:
        # the atom itself, not the rounded ``beta + need``, decides the acceptance probability
        atoms = np.unique(noise.atoms())
        cand = atoms - need
        keep = cand >= 0
        vals = cand[keep] * noise.prob_at_least(atoms[keep])
        if not keep.any() or vals.max() <= 0:
            return 0.0
        top = vals.max()
        return float(cand[keep][np.nonzero(vals >= top - 1e-15 * max(1.0, abs(top)))[0].max()])

    grid = np.linspace(0.0, beta_hi, 2001)
    vals = grid * noise.prob_at_least(grid + need)
    top = vals.max()
    i = int(np.nonzero(vals >= top)[0].max())
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol / 4:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    best = (a + b) / 2
    return best if f(best) >= top else float(grid[i])


# ---------------------------------------------------------------------------
# strategy selection

STRATEGIES = ("cost", "worst", "clairvoyant", "beta", "zeta")


@dataclass(frozen=True, eq=False)
class StrategyConfig:
    """Which offset rule to apply.

    ``lower_endpoints`` feeds ``worst``; ``y_table`` and ``noise`` feed
    ``zeta``.  Tables may be arrays of the grid shape or callables of the grid.
    """

    kind: str = "worst"
    beta: float = 0.0
    lower_endpoints: object = None
    y_table: object = None
    noise: NoiseDistribution | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.kind == "zeta" and self.noise is None:
            raise ConfigurationError("zeta strategy needs a noise distribution")


def price_menu(strategy: StrategyConfig, menu_costs, v_minus_k: float, utilities=None, grid=None) -> PriceMenu:
    """Dispatch to the strategy named in ``strategy.kind``."""
    costs, grid = _unpack(menu_costs, grid)

    def table(t):
        return t(grid) if callable(t) else (0.0 if t is None else t)

    k = strategy.kind
    if k == "cost":
        return price_cost_based(costs, v_minus_k, grid)
    if k == "worst":
        if strategy.lower_endpoints is None:
            raise ConfigurationError("worst-case strategy needs lower endpoints")
        return price_worst_case(costs, v_minus_k, table(strategy.lower_endpoints), grid, strategy.beta)
    if k == "clairvoyant":
        if utilities is None:
            raise ConfigurationError("clairvoyant strategy needs realised utilities")
        return price_clairvoyant(costs, v_minus_k, utilities, grid)
    if k == "beta":
        return price_fixed_beta(costs, v_minus_k, strategy.beta, grid)
    zeta = compute_zeta(costs, v_minus_k, table(strategy.y_table), strategy.noise)
    return price_zeta(costs, v_minus_k, zeta, grid)
