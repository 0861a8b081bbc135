"""Small dense linear-programming core.

``LinearProgram`` is an immutable minimisation problem with general row
relations and per-variable bounds.  ``solve`` runs a dense two-phase tableau
simplex with Bland's anti-cycling rule, which is slow but exact enough and
fully deterministic for the desk-scale problems built in this package.
``HighsSolver`` exposes the same interface on top of HiGHS for bulk work.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

EPS_FEAS = 1e-7
EPS_OBJ = 1e-7
_PIVOT_TOL = 1e-9


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpStructureError(ValueError):
    """Malformed LP (dimension mismatch, crossed bounds, bad relation)."""


class SolverFailure(RuntimeError):
    """The solver stalled or hit its iteration limit."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """minimize ``objective @ x`` subject to ``a[i] @ x (rel_i) rhs[i]`` and bounds."""

    objective: np.ndarray
    a: np.ndarray
    relations: tuple[Relation, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        c = _frozen(self.objective)
        if c.ndim != 1:
            raise LpStructureError("objective must be a vector")
        n = c.size
        a = np.array(self.a, dtype=float)
        if a.size == 0:
            a = a.reshape(0, n)
        if a.ndim != 2 or a.shape[1] != n:
            raise LpStructureError(f"constraint rows must have {n} columns, got shape {a.shape}")
        a.setflags(write=False)
        rels = tuple(Relation(r) for r in self.relations)
        rhs = _frozen(self.rhs).reshape(-1)
        if len(rels) != a.shape[0] or rhs.size != a.shape[0]:
            raise LpStructureError("relations/rhs length must equal the number of rows")
        lo = _frozen(self.lower).reshape(-1)
        up = _frozen(self.upper).reshape(-1)
        if lo.size != n or up.size != n:
            raise LpStructureError("bounds must have one entry per variable")
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise LpStructureError(f"variable {bad}: lower bound {lo[bad]} exceeds upper {up[bad]}")
        if np.any(np.isnan(a)) or np.any(np.isnan(rhs)) or np.any(np.isnan(c)):
            raise LpStructureError("NaN in LP data")
        if self.names is not None and len(self.names) != n:
            raise LpStructureError("names must have one entry per variable")
        for k, v in (("objective", c), ("a", a), ("relations", rels), ("rhs", rhs), ("lower", lo), ("upper", up)):
            object.__setattr__(self, k, v)

    @classmethod
    def from_rows(
        cls,
        objective: Sequence[float],
        constraints: Iterable[tuple[Sequence[float], Relation | str, float]] = (),
        bounds: Sequence[tuple[float | None, float | None]] | None = None,
    ) -> "LinearProgram":
        """Build from ``(row, relation, rhs)`` triples; default bounds are ``[0, inf)``."""
        objective = list(objective)
        n = len(objective)
        rows, rels, rhs = [], [], []
        for row, rel, b in constraints:
            row = list(row)
            if len(row) != n:
                raise LpStructureError(f"constraint row has {len(row)} entries, expected {n}")
            rows.append(row)
            rels.append(Relation(rel))
            rhs.append(b)
        if bounds is None:
            bounds = [(0.0, math.inf)] * n
        if len(bounds) != n:
            raise LpStructureError("bounds must have one entry per variable")
        lo = [-math.inf if b[0] is None else b[0] for b in bounds]
        up = [math.inf if b[1] is None else b[1] for b in bounds]
        return cls(np.array(objective, float), np.array(rows, float).reshape(len(rows), n), tuple(rels), rhs, lo, up)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @property
    def constraints(self) -> list[tuple[np.ndarray, Relation, float]]:
        return [(self.a[i], self.relations[i], float(self.rhs[i])) for i in range(self.n_rows)]

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 if feasible)."""
        x = np.asarray(x, float)
        worst = 0.0
        if self.n_rows:
            act = self.a @ x
            for i, rel in enumerate(self.relations):
                d = act[i] - self.rhs[i]
                if rel is Relation.LE:
                    worst = max(worst, d)
                elif rel is Relation.GE:
                    worst = max(worst, -d)
                else:
                    worst = max(worst, abs(d))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    objective_value: float
    primal: np.ndarray
    dual: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def lagrangian_bound(lp: LinearProgram, y: np.ndarray) -> float:
    """Weak-duality lower bound on ``lp`` from row multipliers ``y``.

    Multipliers with the wrong sign for their row are clipped to zero, so any
    vector gives a valid (possibly -inf) bound.
    """
    y = np.array(y, float)
    for i, rel in enumerate(lp.relations):
        if rel is Relation.GE:
            y[i] = max(y[i], 0.0)
        elif rel is Relation.LE:
            y[i] = min(y[i], 0.0)
    d = lp.objective - lp.a.T @ y if lp.n_rows else lp.objective.copy()
    total = float(y @ lp.rhs)
    for j in range(lp.n_vars):
        if d[j] > 0:
            if not np.isfinite(lp.lower[j]):
                return -math.inf
            total += d[j] * lp.lower[j]
        elif d[j] < 0:
            if not np.isfinite(lp.upper[j]):
                return -math.inf
            total += d[j] * lp.upper[j]
    return total


class Solver(Protocol):
    def solve(self, lp: LinearProgram) -> LpSolution: ...


# ---------------------------------------------------------------------------
# dense two-phase simplex


@dataclass
class _StandardForm:
    a: np.ndarray  # rows x cols, rhs >= 0
    b: np.ndarray
    c: np.ndarray
    basis: list[int]
    n_struct: int  # columns that are not artificial
    row_sign: np.ndarray  # +1/-1 flip applied to each standard row
    n_orig_rows: int
    # x_orig = offset + sum_k coef[k] * z[col[k]] for each original variable
    var_map: list[list[tuple[int, float]]]
    offset: np.ndarray


def _to_standard(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    cols: list[np.ndarray] = []  # columns over original rows
    costs: list[float] = []
    var_map: list[list[tuple[int, float]]] = []
    offset = np.zeros(n)
    bound_rows: list[tuple[int, float]] = []  # (column, rhs) for z_col <= rhs
    for j in range(n):
        lo, up = lp.lower[j], lp.upper[j]
        col = lp.a[:, j]
        if np.isfinite(lo):
            offset[j] = lo
            var_map.append([(len(cols), 1.0)])
            cols.append(col)
            costs.append(lp.objective[j])
            if np.isfinite(up):
                bound_rows.append((len(cols) - 1, up - lo))
        elif np.isfinite(up):
            offset[j] = up
            var_map.append([(len(cols), -1.0)])
            cols.append(-col)
            costs.append(-lp.objective[j])
        else:
            var_map.append([(len(cols), 1.0), (len(cols) + 1, -1.0)])
            cols.extend([col, -col])
            costs.extend([lp.objective[j], -lp.objective[j]])
    m0 = lp.n_rows
    m = m0 + len(bound_rows)
    nz = len(cols)
    a_orig = np.column_stack(cols) if cols else np.zeros((m0, 0))
    rhs = np.array(lp.rhs, float) - (lp.a @ offset if m0 else 0.0)
    rels = list(lp.relations)
    a = np.zeros((m, nz))
    a[:m0] = a_orig
    b = np.zeros(m)
    b[:m0] = rhs
    for k, (cidx, ub) in enumerate(bound_rows):
        a[m0 + k, cidx] = 1.0
        b[m0 + k] = ub
        rels.append(Relation.LE)
    sign = np.where(b < 0, -1.0, 1.0)
    a *= sign[:, None]
    b *= sign
    rels = [
        rel if s > 0 else {Relation.LE: Relation.GE, Relation.GE: Relation.LE, Relation.EQ: Relation.EQ}[rel]
        for rel, s in zip(rels, sign)
    ]
    n_slack = sum(1 for r in rels if r is not Relation.EQ)
    n_art = sum(1 for r in rels if r is not Relation.LE)
    total = nz + n_slack + n_art
    tab = np.zeros((m, total))
    tab[:, :nz] = a
    basis = [-1] * m
    k_s, k_a = nz, nz + n_slack
    for i, rel in enumerate(rels):
        if rel is Relation.LE:
            tab[i, k_s] = 1.0
            basis[i] = k_s
            k_s += 1
        elif rel is Relation.GE:
            tab[i, k_s] = -1.0
            k_s += 1
            tab[i, k_a] = 1.0
            basis[i] = k_a
            k_a += 1
        else:
            tab[i, k_a] = 1.0
            basis[i] = k_a
            k_a += 1
    c = np.zeros(total)
    c[:nz] = costs
    return _StandardForm(tab, b, c, basis, nz + n_slack, sign, m0, var_map, offset)


def _pivot(t: np.ndarray, row: int, col: int) -> None:
    t[row] /= t[row, col]
    col_vals = t[:, col].copy()
    col_vals[row] = 0.0
    nzr = np.nonzero(col_vals)[0]
    if nzr.size:
        t[nzr] -= np.outer(col_vals[nzr], t[row])
    t[:, col] = 0.0
    t[row, col] = 1.0


def _bland_loop(t: np.ndarray, basis: list[int], allowed: int, budget: list[int]) -> Status:
    """Iterate on tableau ``t`` (last row = reduced costs, last col = rhs)."""
    m = t.shape[0] - 1
    while True:
        if budget[0] <= 0:
            raise SolverFailure("simplex iteration limit reached")
        red = t[-1, :allowed]
        cand = np.nonzero(red < -_PIVOT_TOL)[0]
        if cand.size == 0:
            return Status.OPTIMAL
        col = int(cand[0])
        colv = t[:m, col]
        pos = np.nonzero(colv > _PIVOT_TOL)[0]
        if pos.size == 0:
            return Status.UNBOUNDED
        ratios = t[pos, -1] / colv[pos]
        rmin = ratios.min()
        tied = pos[ratios <= rmin + 1e-12 * max(1.0, abs(rmin))]
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(t, row, col)
        basis[row] = col
        budget[0] -= 1


class DenseSimplex:
    """Two-phase tableau simplex with Bland's rule."""

    def __init__(self, max_iter_factor: int = 50):
        self.max_iter_factor = max_iter_factor

    def solve(self, lp: LinearProgram) -> LpSolution:
        if not isinstance(lp, LinearProgram):
            raise LpStructureError("expected a LinearProgram")
        n = lp.n_vars
        if n == 0:
            ok = all(
                (rel is Relation.LE and 0 <= b + EPS_FEAS)
                or (rel is Relation.GE and 0 >= b - EPS_FEAS)
                or (rel is Relation.EQ and abs(b) <= EPS_FEAS)
                for rel, b in zip(lp.relations, lp.rhs)
            )
            if ok:
                return LpSolution(Status.OPTIMAL, 0.0, np.zeros(0), np.zeros(lp.n_rows))
            return LpSolution(Status.INFEASIBLE, math.inf, np.full(0, np.nan))
        sf = _to_standard(lp)
        m, total = sf.a.shape
        budget = [self.max_iter_factor * (n + lp.n_rows)]
        t = np.zeros((m + 1, total + 1))
        t[:m, :total] = sf.a
        t[:m, -1] = sf.b
        basis = list(sf.basis)
        art = [j for j in range(sf.n_struct, total)]
        if art:
            # phase 1 objective: sum of artificials, priced out
            t[-1, sf.n_struct:total] = 1.0
            for i, bj in enumerate(basis):
                if bj >= sf.n_struct:
                    t[-1] -= t[i]
            _bland_loop(t, basis, total, budget)
            if -t[-1, -1] > EPS_FEAS * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
                return LpSolution(Status.INFEASIBLE, math.inf, np.full(n, np.nan), iterations=self._used(lp, budget))
            keep = []
            for i in range(m):
                if basis[i] >= sf.n_struct:
                    row = t[i, : sf.n_struct]
                    nzc = np.nonzero(np.abs(row) > _PIVOT_TOL)[0]
                    if nzc.size:
                        col = int(nzc[0])
                        _pivot(t, i, col)
                        basis[i] = col
                        keep.append(i)
                    # otherwise the row is redundant and is dropped
                else:
                    keep.append(i)
            t = np.vstack([t[keep], t[-1:]])
            basis = [basis[i] for i in keep]
            kept_rows = keep
        else:
            kept_rows = list(range(m))
        t = np.delete(t, np.s_[sf.n_struct:total], axis=1)
        m2 = len(basis)
        t[-1, :] = 0.0
        t[-1, : sf.n_struct] = sf.c[: sf.n_struct]
        for i, bj in enumerate(basis):
            cb = sf.c[bj]
            if cb != 0.0:
                t[-1] -= cb * t[i]
        status = _bland_loop(t, basis, sf.n_struct, budget)
        iters = self._used(lp, budget)
        if status is Status.UNBOUNDED:
            return LpSolution(Status.UNBOUNDED, -math.inf, np.full(n, np.nan), iterations=iters)
        z = np.zeros(sf.n_struct)
        for i, bj in enumerate(basis):
            z[bj] = t[i, -1]
        x = sf.offset.copy()
        for j, parts in enumerate(sf.var_map):
            for col, coef in parts:
                x[j] += coef * z[col]
        x = np.clip(x, lp.lower, lp.upper)
        dual = self._duals(sf, basis, kept_rows, m2)
        return LpSolution(Status.OPTIMAL, float(lp.objective @ x), x, dual, iters)

    def _used(self, lp: LinearProgram, budget: list[int]) -> int:
        return self.max_iter_factor * (lp.n_vars + lp.n_rows) - budget[0]

    @staticmethod
    def _duals(sf: _StandardForm, basis: list[int], kept_rows: list[int], m2: int) -> np.ndarray:
        y_orig = np.zeros(sf.n_orig_rows)
        if not m2:
            return y_orig
        bmat = sf.a[np.ix_(kept_rows, basis)]
        try:
            y = np.linalg.solve(bmat.T, sf.c[basis])
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(bmat.T, sf.c[basis], rcond=None)[0]
        for k, i in enumerate(kept_rows):
            if i < sf.n_orig_rows:
                y_orig[i] = y[k] * sf.row_sign[i]
        return y_orig


class HighsSolver:
    """``Solver`` backed by HiGHS dual simplex."""

    def solve(self, lp: LinearProgram) -> LpSolution:
        h = make_highs(lp)
        h.run()
        return read_highs(h, lp.n_vars, lp.n_rows)


def make_highs(lp: LinearProgram):
    import highspy

    inf = highspy.kHighsInf
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    model = highspy.HighsLp()
    model.num_col_ = lp.n_vars
    model.num_row_ = lp.n_rows
    model.col_cost_ = np.asarray(lp.objective, float)
    model.col_lower_ = np.where(np.isfinite(lp.lower), lp.lower, -inf)
    model.col_upper_ = np.where(np.isfinite(lp.upper), lp.upper, inf)
    lo = np.full(lp.n_rows, -inf)
    up = np.full(lp.n_rows, inf)
    for i, rel in enumerate(lp.relations):
        if rel is not Relation.LE:
            lo[i] = lp.rhs[i]
        if rel is not Relation.GE:
            up[i] = lp.rhs[i]
    model.row_lower_ = lo
    model.row_upper_ = up
    from scipy.sparse import csc_matrix

    mat = csc_matrix(lp.a)
    model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    model.a_matrix_.start_ = mat.indptr
    model.a_matrix_.index_ = mat.indices
    model.a_matrix_.value_ = mat.data
    h.passModel(model)
    return h


def read_highs(h, n: int, m: int) -> LpSolution:
    import highspy

    st = h.getModelStatus()
    if st == highspy.HighsModelStatus.kOptimal:
        sol = h.getSolution()
        x = np.array(sol.col_value)
        return LpSolution(
            Status.OPTIMAL,
            float(h.getInfo().objective_function_value),
            x,
            np.array(sol.row_dual) if m else np.zeros(0),
            int(h.getInfo().simplex_iteration_count),
        )
    if st == highspy.HighsModelStatus.kInfeasible:
        return LpSolution(Status.INFEASIBLE, math.inf, np.full(n, np.nan))
    if st in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
        return LpSolution(Status.UNBOUNDED, -math.inf, np.full(n, np.nan))
    raise SolverFailure(f"HiGHS returned {st}")


DEFAULT_SOLVER: Solver = DenseSimplex()


def solve(lp: LinearProgram, solver: Solver | None = None) -> LpSolution:
    """Solve ``lp``; dense simplex unless another ``solver`` is passed."""
    return (solver or DEFAULT_SOLVER).solve(lp)


def solve_batch(lps: Sequence[LinearProgram], solver: Solver | None = None) -> list[LpSolution | Exception]:
    """Element-wise :func:`solve`.

    A failing element yields its exception object in place so the rest of the
    batch still runs.
    """
    out: list[LpSolution | Exception] = []
    for lp in lps:
        try:
            out.append(solve(lp, solver))
        except (LpStructureError, SolverFailure) as exc:
            out.append(exc)
    return out
