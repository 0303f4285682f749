"""Selective information sharing: who gets the fleet snapshot.

Each driver has two candidate waiting vertices: the best response with the
full fleet snapshot and the best response knowing nothing.  Choosing one per
driver to minimize demand-weighted response distance is NP-hard (it encodes
CNF-SAT), so the production path solves the LP relaxation of the natural ILP
and rounds it; a brute-force enumerator serves as the oracle at small sizes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from rideflow import lp as lp_mod
from rideflow.drivers import (
    CandidatePair,
    DriverState,
    EconomicParams,
    ProfitModel,
    candidate_locations,
)
from rideflow.graph import MetricGraph
from rideflow.lp import LinearProgram, LpResult, LpStatus

BRUTEFORCE_MAX_PAIRS = 20
HALF_TOL = 1e-9


@dataclass
class InfoSharingInstance:
    """One-vertex-per-driver selection problem over candidate pairs.

    Candidate ``2*i`` is driver ``i``'s full-information vertex, ``2*i + 1``
    the no-information vertex.  ``cand_cost[k, v]`` is the travel time from
    candidate ``k`` to demand vertex ``v``; colliding waiting locations simply
    occupy distinct candidate rows with identical costs (duplicate vertices).
    """

    cand_cost: np.ndarray  # (2m, n_demand)
    pa: np.ndarray  # (n_demand,)
    cand_vertex: np.ndarray  # source vertex id (or literal code) per candidate
    driver_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.cand_cost.shape[0] % 2 != 0:
            raise ValueError("candidates must come in pairs")
        if not self.driver_ids:
            self.driver_ids = list(range(self.n_pairs))

    @property
    def n_pairs(self) -> int:
        return self.cand_cost.shape[0] // 2

    @property
    def n_demand(self) -> int:
        return self.cand_cost.shape[1]

    def objective(self, share_full: np.ndarray) -> float:
        """Demand-weighted nearest-candidate distance for a FULL/NONE choice."""
        chosen = self.chosen_candidates(share_full)
        return float(self.pa @ self.cand_cost[chosen].min(axis=0))

    def chosen_candidates(self, share_full) -> np.ndarray:
        share_full = np.asarray(share_full, dtype=bool)
        return np.where(share_full, 0, 1) + 2 * np.arange(self.n_pairs)

    def to_json(self) -> str:
        return json.dumps(
            {
                "cand_cost": self.cand_cost.tolist(),
                "pa": self.pa.tolist(),
                "cand_vertex": self.cand_vertex.tolist(),
                "driver_ids": self.driver_ids,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "InfoSharingInstance":
        d = json.loads(text)
        return cls(
            np.array(d["cand_cost"]),
            np.array(d["pa"]),
            np.array(d["cand_vertex"]),
            list(d["driver_ids"]),
        )


@dataclass
class SharingDecision:
    """Per-driver share flag plus the induced configuration and objective."""

    share_full: np.ndarray  # bool per driver; True = send the fleet snapshot
    chosen_vertices: np.ndarray  # vertex id per driver
    objective: float
    lp_bound: float | None = None
    driver_ids: list[int] = field(default_factory=list)

    @property
    def gap(self) -> float | None:
        if self.lp_bound is None or self.lp_bound <= 0:
            return None
        return (self.objective - self.lp_bound) / self.lp_bound

    def to_json(self) -> str:
        return json.dumps(
            {
                "share_full": [bool(s) for s in self.share_full],
                "chosen_vertices": [int(v) for v in self.chosen_vertices],
                "objective": self.objective,
                "lp_bound": self.lp_bound,
                "driver_ids": self.driver_ids,
            }
        )


def build_instance(
    drivers: list[DriverState],
    params: EconomicParams,
    graph: MetricGraph,
    pairs: list[CandidatePair] | None = None,
    model: ProfitModel | None = None,
) -> InfoSharingInstance:
    """Candidate pairs from each driver's two best responses.

    ``pairs`` may be supplied when candidate locations were already computed
    (the simulator does this); otherwise they are derived here.
    """
    if not drivers:
        raise ValueError("no drivers")
    if pairs is None:
        if model is None:
            model = ProfitModel(graph, params, m_max=len(drivers))
        pairs = [candidate_locations(d, drivers, params, graph, model) for d in drivers]
    rows = []
    cand_vertex = []
    for pair in pairs:
        rows.append(graph.cost[pair.v_full])
        rows.append(graph.cost[pair.v_none])
        cand_vertex.extend([pair.v_full, pair.v_none])
    return InfoSharingInstance(
        np.array(rows), graph.pa.copy(), np.array(cand_vertex), [d.id for d in drivers]
    )


def build_ilp(instance: InfoSharingInstance) -> tuple[LinearProgram, list[int]]:
    """The assignment ILP; returns the program and its integer variables.

    Variables: ``y_k`` per candidate (0..2m-1), then ``x_{k,v}`` per
    (candidate, demand vertex).  Constraints: every demand vertex covered,
    assignment only to open candidates, exactly one candidate open per pair.
    Integrality markers list every variable; dropping them gives the
    relaxation.
    """
    m, nv = instance.n_pairs, instance.n_demand
    n_y = 2 * m
    n_x = n_y * nv
    n = n_y + n_x

    def xvar(k: int, v: int) -> int:
        return n_y + k * nv + v

    c = np.zeros(n)
    for k in range(n_y):
        c[xvar(k, 0) : xvar(k, nv - 1) + 1] = instance.pa * instance.cand_cost[k]

    data, rows, cols, rels, rhs = [], [], [], [], []
    r = 0
    for v in range(nv):  # coverage
        for k in range(n_y):
            rows.append(r)
            cols.append(xvar(k, v))
            data.append(1.0)
        rels.append(">=")
        rhs.append(1.0)
        r += 1
    for k in range(n_y):  # linking y_k - x_{k,v} >= 0
        for v in range(nv):
            rows.extend([r, r])
            cols.extend([k, xvar(k, v)])
            data.extend([1.0, -1.0])
            rels.append(">=")
            rhs.append(0.0)
            r += 1
    for i in range(m):  # one candidate per pair
        rows.extend([r, r])
        cols.extend([2 * i, 2 * i + 1])
        data.extend([1.0, 1.0])
        rels.append("=")
        rhs.append(1.0)
        r += 1

    a = sp.csr_matrix((data, (rows, cols)), shape=(r, n))
    program = LinearProgram(c, a, rels, np.array(rhs), np.zeros(n), np.ones(n))
    return program, list(range(n))


def solve_relaxation(instance: InfoSharingInstance, method: str = "auto") -> LpResult:
    program, _ = build_ilp(instance)
    return lp_mod.solve(program, method=method)


def round_solution(instance: InfoSharingInstance, lp_result: LpResult) -> SharingDecision:
    """Threshold the pair variables at one half and re-assign demand.

    The candidate with ``y > 1/2`` opens; an exact half-half tie opens the
    no-information vertex.  Every demand vertex is then served by its nearest
    open candidate, which can only improve on the fractional assignment.
    """
    if lp_result.status is not LpStatus.OPTIMAL:
        raise ValueError(f"LP not optimal: {lp_result.status}")
    m = instance.n_pairs
    y = lp_result.values[: 2 * m]
    share = np.empty(m, dtype=bool)
    for i in range(m):
        y_full, y_none = y[2 * i], y[2 * i + 1]
        if abs(y_full - y_none) <= HALF_TOL:
            share[i] = False  # tie: keep the driver uninformed
        else:
            share[i] = y_full > y_none
    chosen = instance.chosen_candidates(share)
    return SharingDecision(
        share,
        instance.cand_vertex[chosen],
        instance.objective(share),
        lp_bound=float(lp_result.objective),
        driver_ids=list(instance.driver_ids),
    )


def prune_decision(instance: InfoSharingInstance, decision: SharingDecision) -> SharingDecision:
    """Withdraw shares that do not lower the objective.

    Rounding can leave a driver informed even though her relocation no longer
    matters once the other open candidates are fixed.  Flipping such drivers
    back to uninformed keeps the objective (flips are only accepted when it
    does not increase) while minimizing interference with the fleet.
    Deterministic: drivers are visited in index order until a fixed point.
    """
    share = decision.share_full.copy()
    obj = instance.objective(share)
    changed = True
    while changed:
        changed = False
        for i in range(instance.n_pairs):
            if not share[i]:
                continue
            share[i] = False
            trial = instance.objective(share)
            if trial <= obj + 1e-12:
                obj = trial
                changed = True
            else:
                share[i] = True
    chosen = instance.chosen_candidates(share)
    return SharingDecision(
        share,
        instance.cand_vertex[chosen],
        obj,
        lp_bound=decision.lp_bound,
        driver_ids=list(decision.driver_ids),
    )


def solve_lp_rounding(instance: InfoSharingInstance, method: str = "auto") -> SharingDecision:
    return prune_decision(instance, round_solution(instance, solve_relaxation(instance, method=method)))


def solve_bruteforce(instance: InfoSharingInstance) -> SharingDecision:
    """Exact optimum by enumerating all share patterns; small m only."""
    m = instance.n_pairs
    if m > BRUTEFORCE_MAX_PAIRS:
        raise ValueError(f"too many pairs for enumeration: {m} > {BRUTEFORCE_MAX_PAIRS}")
    best, best_share = None, None
    for bits in itertools.product([True, False], repeat=m):
        share = np.array(bits)
        obj = instance.objective(share)
        if best is None or obj < best - 1e-15:
            best, best_share = obj, share
    chosen = instance.chosen_candidates(best_share)
    return SharingDecision(
        best_share,
        instance.cand_vertex[chosen],
        best,
        driver_ids=list(instance.driver_ids),
    )


def parse_dimacs(text: str) -> tuple[int, list[list[int]]]:
    """DIMACS CNF: returns (variable count, clauses as signed 1-based ints)."""
    n_vars = 0
    clauses: list[list[int]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("c", "%")):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) < 4 or parts[1] != "cnf":
                raise ValueError(f"bad problem line: {line}")
            n_vars = int(parts[2])
            continue
        lits = [int(tok) for tok in line.split()]
        if lits and lits[-1] == 0:
            lits = lits[:-1]
        if lits:
            clauses.append(lits)
            n_vars = max(n_vars, max(abs(l) for l in lits))
    if not clauses:
        raise ValueError("no clauses")
    return n_vars, clauses


def sat_to_instance(clauses: list[list[int]], n_vars: int | None = None) -> InfoSharingInstance:
    """Selection instance whose optimum is 1 exactly when the CNF is satisfiable.

    Pair ``i`` holds the true/false literals of variable ``i + 1``; each
    clause is a demand vertex with weight ``1/m``.  A literal is at distance
    1 from clauses it appears in and 2 from the rest, which is metric.
    Candidate labels are the signed literals.
    """
    if not clauses:
        raise ValueError("no clauses")
    if n_vars is None:
        n_vars = max(abs(l) for cl in clauses for l in cl)
    m = len(clauses)
    cost = np.full((2 * n_vars, m), 2.0)
    for j, clause in enumerate(clauses):
        for lit in clause:
            var = abs(lit) - 1
            k = 2 * var if lit > 0 else 2 * var + 1
            cost[k, j] = 1.0
    labels = np.array([lit for v in range(1, n_vars + 1) for lit in (v, -v)])
    return InfoSharingInstance(cost, np.full(m, 1.0 / m), labels)


def assignment_from_decision(decision: SharingDecision) -> list[bool]:
    """Truth assignment encoded by a SAT-reduction decision (True = positive)."""
    return [bool(s) for s in decision.share_full]
