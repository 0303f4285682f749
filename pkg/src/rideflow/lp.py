"""Dense linear programming for the relaxation of the sharing ILP.

The in-house solver is a two-phase tableau simplex with Dantzig pricing and a
Bland's-rule fallback against cycling.  Instances too large for a dense
tableau can be routed to scipy's HiGHS backend through the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

FEAS_TOL = 1e-7
COST_TOL = 1e-9


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """min c @ x subject to A x (<=, >=, =) b and lower <= x <= upper."""

    c: np.ndarray
    a: object  # dense ndarray or scipy sparse, rows x n
    relations: list[str]  # "<=", ">=", "=" per row
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray  # np.inf for unbounded above

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.c)
        if self.a.shape != (len(self.b), n):
            raise ValueError("constraint matrix shape mismatch")
        if len(self.relations) != len(self.b):
            raise ValueError("one relation per row required")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return len(self.c)


@dataclass
class LpResult:
    status: LpStatus
    values: np.ndarray | None
    objective: float | None
    iterations: int = 0

    def __bool__(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def dump_lp(lp: LinearProgram) -> str:
    """Plain-text standard form, for debugging."""
    lines = ["min " + " + ".join(f"{ci:g} x{i}" for i, ci in enumerate(lp.c) if ci)]
    a = lp.a.toarray() if sp.issparse(lp.a) else np.asarray(lp.a)
    for row, rel, rhs in zip(a, lp.relations, lp.b):
        terms = " + ".join(f"{v:g} x{i}" for i, v in enumerate(row) if v)
        lines.append(f"  {terms} {rel} {rhs:g}")
    for i, (lo, hi) in enumerate(zip(lp.lower, lp.upper)):
        lines.append(f"  {lo:g} <= x{i} <= {hi:g}")
    return "\n".join(lines)


def residuals(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest constraint or bound violation of ``x``."""
    a = lp.a
    ax = a @ x
    worst = 0.0
    for val, rel, rhs in zip(ax, lp.relations, lp.b):
        if rel == "<=":
            worst = max(worst, val - rhs)
        elif rel == ">=":
            worst = max(worst, rhs - val)
        else:
            worst = max(worst, abs(val - rhs))
    worst = max(worst, float(np.max(lp.lower - x, initial=0.0)))
    finite = np.isfinite(lp.upper)
    if finite.any():
        worst = max(worst, float(np.max((x - lp.upper)[finite], initial=0.0)))
    return worst


def solve(lp: LinearProgram, method: str = "auto") -> LpResult:
    """Solve to optimality; never fails silently.

    ``method`` is "simplex" (in-house dense tableau), "highs" (scipy), or
    "auto" which picks the dense solver for small instances.
    """
    if method == "auto":
        method = "simplex" if lp.n_vars <= 600 and len(lp.b) <= 600 else "highs"
    if method == "simplex":
        return _solve_simplex(lp)
    if method == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown method: {method}")


def _solve_highs(lp: LinearProgram) -> LpResult:
    a = sp.csr_matrix(lp.a)
    rels = np.array(lp.relations)
    ub_mask = rels == "<="
    ge_mask = rels == ">="
    eq_mask = rels == "="
    a_ub = sp.vstack([a[ub_mask], -a[ge_mask]]) if (ub_mask.any() or ge_mask.any()) else None
    b_ub = np.concatenate([lp.b[ub_mask], -lp.b[ge_mask]]) if a_ub is not None else None
    a_eq = a[eq_mask] if eq_mask.any() else None
    b_eq = lp.b[eq_mask] if a_eq is not None else None
    res = linprog(
        lp.c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=list(zip(lp.lower, np.where(np.isfinite(lp.upper), lp.upper, None))),
        method="highs",
    )
    if res.status == 2:
        return LpResult(LpStatus.INFEASIBLE, None, None)
    if res.status == 3:
        return LpResult(LpStatus.UNBOUNDED, None, None)
    if not res.success:
        raise RuntimeError(f"LP backend failure: {res.message}")
    return LpResult(LpStatus.OPTIMAL, res.x, float(res.fun), int(res.nit))


def _solve_simplex(lp: LinearProgram) -> LpResult:
    """Two-phase dense tableau simplex on the shifted standard form."""
    if not np.all(np.isfinite(lp.lower)):
        raise ValueError("dense simplex requires finite lower bounds")
    n = lp.n_vars
    a = lp.a.toarray() if sp.issparse(lp.a) else np.array(lp.a, dtype=float)
    # Shift x = lower + xs with xs >= 0; finite uppers become extra rows.
    b = lp.b - a @ lp.lower
    rows = [a]
    rels = list(lp.relations)
    rhs = list(b)
    finite_up = np.nonzero(np.isfinite(lp.upper))[0]
    ub_rows = np.zeros((len(finite_up), n))
    for r, j in enumerate(finite_up):
        ub_rows[r, j] = 1.0
        rels.append("<=")
        rhs.append(lp.upper[j] - lp.lower[j])
    a_std = np.vstack([a, ub_rows]) if len(finite_up) else a
    b_std = np.array(rhs)

    m = a_std.shape[0]
    neg = b_std < 0
    a_std = np.where(neg[:, None], -a_std, a_std)
    b_std = np.abs(b_std)
    flipped = {"<=": ">=", ">=": "<=", "=": "="}
    rels = [flipped[r] if f else r for r, f in zip(rels, neg)]

    n_slack = sum(r != "=" for r in rels)
    n_art = sum(r != "<=" for r in rels)
    width = n + n_slack + n_art
    tab = np.zeros((m, width + 1))
    tab[:, :n] = a_std
    tab[:, -1] = b_std
    basis = np.full(m, -1, dtype=int)
    s_col, a_col = n, n + n_slack
    art_cols = []
    for i, rel in enumerate(rels):
        if rel == "<=":
            tab[i, s_col] = 1.0
            basis[i] = s_col
            s_col += 1
        elif rel == ">=":
            tab[i, s_col] = -1.0
            s_col += 1
            tab[i, a_col] = 1.0
            basis[i] = a_col
            art_cols.append(a_col)
            a_col += 1
        else:
            tab[i, a_col] = 1.0
            basis[i] = a_col
            art_cols.append(a_col)
            a_col += 1

    iterations = 0
    if n_art:
        cost1 = np.zeros(width)
        cost1[art_cols] = 1.0
        z = _reduced_costs(tab, basis, cost1)
        status, it = _iterate(tab, basis, z, cost1, allowed=np.ones(width, bool))
        iterations += it
        if status == "unbounded":  # cannot happen for phase 1, defensive
            raise RuntimeError("phase 1 unbounded")
        phase1_obj = sum(tab[i, -1] for i in range(m) if basis[i] in art_cols)
        if phase1_obj > FEAS_TOL:
            return LpResult(LpStatus.INFEASIBLE, None, None, iterations)

    allowed = np.ones(width, dtype=bool)
    allowed[art_cols] = False
    # Pivot any artificial still basic (at zero level) out if possible.
    for i in range(m):
        if basis[i] in art_cols:
            cand = np.nonzero(allowed & (np.abs(tab[i, :width]) > 1e-10))[0]
            if len(cand):
                _pivot(tab, basis, i, int(cand[0]))

    cost2 = np.zeros(width)
    cost2[:n] = lp.c
    z = _reduced_costs(tab, basis, cost2)
    status, it = _iterate(tab, basis, z, cost2, allowed)
    iterations += it
    if status == "unbounded":
        return LpResult(LpStatus.UNBOUNDED, None, None, iterations)

    xs = np.zeros(width)
    xs[basis] = tab[:, -1]
    x = xs[:n] + lp.lower
    return LpResult(LpStatus.OPTIMAL, x, float(lp.c @ x), iterations)


def _reduced_costs(tab, basis, cost):
    z = cost.copy()
    for i, bj in enumerate(basis):
        if cost[bj] != 0.0:
            z -= cost[bj] * tab[i, :-1]
    return z


def _pivot(tab, basis, row, col):
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    basis[row] = col


def _iterate(tab, basis, z, cost, allowed):
    """Run simplex pivots until optimal or unbounded.

    Dantzig pricing by default; switches to Bland's rule after a stall so
    degenerate instances cannot cycle.  ``z`` is updated in place alongside
    the tableau.
    """
    m, width = tab.shape[0], tab.shape[1] - 1
    max_iter = 200 * (m + width) + 1000
    stall, bland = 0, False
    last_obj = None
    for it in range(max_iter):
        zv = np.where(allowed, z, np.inf)
        if bland:
            neg = np.nonzero(zv < -COST_TOL)[0]
            if len(neg) == 0:
                return "optimal", it
            col = int(neg[0])
        else:
            col = int(np.argmin(zv))
            if zv[col] >= -COST_TOL:
                return "optimal", it
        colvals = tab[:, col]
        pos = colvals > 1e-10
        if not pos.any():
            return "unbounded", it
        ratios = np.where(pos, tab[:, -1] / np.where(pos, colvals, 1.0), np.inf)
        row = int(np.argmin(ratios))
        if bland:
            best = ratios[row]
            ties = np.nonzero(ratios <= best + 1e-12)[0]
            row = int(ties[np.argmin(basis[ties])])
        piv = tab[row, col]
        tab[row] /= piv
        factors = colvals.copy()
        factors[row] = 0.0
        tab -= np.outer(factors, tab[row])
        z -= z[col] * tab[row, :-1]
        basis[row] = col
        obj = float(cost[basis] @ tab[:, -1])
        if last_obj is not None and obj >= last_obj - 1e-12:
            stall += 1
            if stall > m + width:
                bland = True
        else:
            stall = 0
        last_obj = obj
    raise RuntimeError("simplex iteration limit exceeded")
