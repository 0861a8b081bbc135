"""Exact menu search without solving every cell.

Every cell of a contract grid shares one LP; cells differ only in the
newcomer's energy row, utilisation row and the rate bounds that encode the
deadline.  ``ContractFamily`` keeps a single warm-started HiGHS model and, for
each cell it solves, records the supporting hyperplane given by the optimal
duals.  By weak duality each hyperplane is a global lower bound on the cost of
every other cell, so ``argmax(weight - cost)`` can be settled exactly after
solving only the cells whose bound still competes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lp_core import SolverFailure, make_highs
from .station import (
    Contract,
    ContractGrid,
    EvRecord,
    StationState,
    _build,
    _check_contract,
    _Obligation,
    _obligations,
)

TIE_TOL = 1e-9
_BOUND_MARGIN = 1e-6


@dataclass(frozen=True)
class _Tangent:
    value: float
    energy: float
    budget: float
    slots: int
    d_energy: float
    d_budget: float
    prefix: np.ndarray  # prefix[n] = bound change for n open slots, relative to 0


def feasible_cells(state: StationState, ev: EvRecord, grid: ContractGrid) -> np.ndarray:
    """Array form of ``contract_feasible`` over the whole grid."""
    L, D, _ = grid.arrays()
    n = D - max(state.clock, ev.arrival_time)
    charge_ok = (L <= state.rate_limits[1] * n + 1e-12) & (ev.soc + L <= ev.soc_max + 1e-12)
    return (n > 0) & (D <= state.horizon_end) & ((L <= 0) | charge_ok)


class ContractFamily:
    """All cells of ``grid`` for newcomer ``ev`` as one parametric LP."""

    def __init__(self, state: StationState, ev: EvRecord, grid: ContractGrid):
        import highspy

        self._inf = highspy.kHighsInf
        self.state = state
        self.ev = ev
        self.grid = grid
        _check_contract(state, ev, Contract(grid.energies[0], max(grid.deadlines), 0.0))
        self.start = max(state.clock, ev.arrival_time)
        last = max(grid.deadlines)
        newcomer = _Obligation(ev, 0.0, 0.0, last)
        self.clp = _build(state, _obligations(state, newcomer))
        self._h = make_highs(self.clp.lp)
        self._charge_row = self.clp.charge_rows[-1]
        self._budget_row = self.clp.budget_rows[-1]
        self._cols = self.clp.r_index[-1]
        self._n_slots = len(self._cols)
        r_min, r_max = state.rate_limits
        self._r_max, self._r_min = r_max, r_min

        L, D, B = grid.arrays()
        self.energy = L
        self.budget = np.abs(L) + B
        self.open_slots = D - self.start
        self.bu = B
        self.feasible = feasible_cells(state, ev, grid)
        self.values = np.full(grid.shape, np.nan)
        self.lower = np.full(grid.shape, -math.inf)
        self.values[~self.feasible] = math.inf
        self.n_solves = 0
        self.v_minus_k = self._solve_point(0.0, 0.0, 0)
        if not math.isfinite(self.v_minus_k):
            raise SolverFailure("committed roster is infeasible")

    # -- single LP -----------------------------------------------------------

    def _solve_point(self, energy: float, budget: float, slots: int) -> float:
        import highspy

        h = self._h
        inf = self._inf
        h.changeRowBounds(self._charge_row, energy, inf)
        h.changeRowBounds(self._budget_row, -inf, budget)
        ub_p = np.where(np.arange(self._n_slots) < slots, self._r_max, 0.0)
        ub_m = np.where(np.arange(self._n_slots) < slots, -self._r_min, 0.0)
        cols = np.concatenate([self._cols, self._cols + 1]).astype(np.int32)
        h.changeColsBounds(cols.size, cols, np.zeros(cols.size), np.concatenate([ub_p, ub_m]))
        h.run()
        self.n_solves += 1
        st = h.getModelStatus()
        if st == highspy.HighsModelStatus.kInfeasible:
            return math.inf
        if st != highspy.HighsModelStatus.kOptimal:
            raise SolverFailure(f"HiGHS returned {st} for a contract cell")
        sol = h.getSolution()
        value = float(h.getInfo().objective_function_value)
        y = np.asarray(sol.row_dual)
        d = np.asarray(sol.col_dual)
        coef = np.minimum(d[self._cols], 0.0) * self._r_max + np.minimum(d[self._cols + 1], 0.0) * (-self._r_min)
        tangent = _Tangent(
            value,
            energy,
            budget,
            slots,
            max(float(y[self._charge_row]), 0.0),
            min(float(y[self._budget_row]), 0.0),
            np.concatenate([[0.0], np.cumsum(coef)]),
        )
        self._add_tangent(tangent)
        return value

    def _add_tangent(self, tg: _Tangent) -> None:
        n = np.clip(self.open_slots, 0, self._n_slots)
        bound = (
            tg.value
            + tg.d_energy * (self.energy - tg.energy)
            + tg.d_budget * (self.budget - tg.budget)
            + tg.prefix[n]
            - tg.prefix[tg.slots]
        )
        np.maximum(self.lower, bound, out=self.lower)

    def cost(self, idx: tuple[int, int, int]) -> float:
        """Exact cost of one cell (cached)."""
        v = self.values[idx]
        if np.isnan(v):
            v = self._solve_point(float(self.energy[idx]), float(self.budget[idx]), int(self.open_slots[idx]))
            self.values[idx] = v
        return float(v)

    def all_costs(self) -> np.ndarray:
        for idx in np.ndindex(self.grid.shape):
            self.cost(idx)
        return self.values.copy()

    # -- pruned maximisation --------------------------------------------------

    def argmax(self, weight: np.ndarray, tie_tol: float = TIE_TOL) -> tuple[tuple[int, int, int] | None, float]:
        """Cell maximising ``weight - cost`` with the menu tie-break.

        Ties within ``tie_tol`` go to the lowest BU, then the earliest
        deadline, then the smallest energy.  Returns ``(None, -inf)`` when no
        cell is feasible.
        """
        weight = np.asarray(weight, float)
        best = -math.inf
        while True:
            exact = weight - self.values
            known = ~np.isnan(self.values) & self.feasible
            if known.any():
                best = max(best, float(np.max(np.where(known, exact, -math.inf))))
            pending = np.isnan(self.values)
            if not pending.any():
                break
            optimistic = np.where(pending, weight - self.lower, -math.inf)
            top = float(optimistic.max())
            if top < best - tie_tol - _BOUND_MARGIN * max(1.0, abs(best)):
                break
            flat = int(np.argmax(optimistic))
            self.cost(np.unravel_index(flat, self.grid.shape))
        if not math.isfinite(best):
            return None, -math.inf
        payoff = np.where(self.feasible & ~np.isnan(self.values), weight - self.values, -math.inf)
        tied = np.argwhere(payoff >= best - tie_tol)
        # tie-break key: (BU, deadline, energy)
        pick = min(map(tuple, tied), key=lambda c: (c[2], c[1], c[0]))
        return pick, float(payoff[pick])
