"""Pay-to-relocate control: minimum incentives and target assignment.

The provider's cost of a target configuration is the incentive bill plus a
weighted response time.  Folding each driver's opportunity cost into the
relocation edge turns the problem into a facility-movement instance whose
cost equals the provider cost up to the per-minute driving cost factor, so
any assignment heuristic on the instance is directly auditable against the
exact provider cost.  The production solver is a deterministic best-improving
single-move local search with exact driver-to-target rematching; a guarded
exhaustive enumerator is the oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from rideflow.drivers import (
    DriverState,
    EconomicParams,
    ProfitTable,
    best_response_from_table,
)
from rideflow.graph import MetricGraph

BRUTEFORCE_MAX_ASSIGNMENTS = 1_000_000
LOCAL_SEARCH_REL_TOL = 1e-6
MAX_SWEEPS = 500


def best_profit(
    driver: DriverState, table: ProfitTable, params: EconomicParams, graph: MetricGraph
) -> float:
    """The driver's profit if left alone: value of her own best response."""
    return best_response_from_table(driver.location, driver.budget, table, params, graph)[1]


def offered_profit(
    driver: DriverState,
    target: int,
    table: ProfitTable,
    params: EconomicParams,
    graph: MetricGraph,
) -> float:
    """Unpaid net profit of relocating to ``target`` instead."""
    move = graph.cost[driver.location, target]
    bq = table.budget_quanta(driver.budget)
    travel_q = int(np.ceil(move / params.budget_quantum - 1e-9))
    return -params.drive_cost_per_min * move + table.value_q(target, bq - travel_q)


def relocation_weight(
    driver: DriverState,
    target: int,
    table: ProfitTable,
    params: EconomicParams,
    graph: MetricGraph,
) -> float:
    """Opportunity-cost credit folded into the relocation edge.

    ``w = (V_at_target - best_profit) / sigma`` so that
    ``sigma * (c(q, target) - w)`` is exactly the minimum payment that makes
    the driver accept ``target``; with a valueless continuation (V == 0 and
    best profit 0) the relocation edge reduces to the plain travel time.
    """
    move = graph.cost[driver.location, target]
    bq = table.budget_quanta(driver.budget)
    travel_q = int(np.ceil(move / params.budget_quantum - 1e-9))
    v_target = table.value_q(target, bq - travel_q)
    return (v_target - best_profit(driver, table, params, graph)) / params.drive_cost_per_min


def min_incentive(
    driver: DriverState,
    target: int,
    table: ProfitTable,
    params: EconomicParams,
    graph: MetricGraph,
) -> tuple[float | None, float]:
    """Minimum acceptable offer for ``target``: (per-distance rate, lump sum).

    The lump sum makes the driver exactly indifferent between accepting and
    her best response.  The rate form divides by the relocation time and is
    undefined (None) for zero-distance targets.
    """
    lump = max(
        0.0,
        best_profit(driver, table, params, graph)
        - offered_profit(driver, target, table, params, graph),
    )
    move = graph.cost[driver.location, target]
    if move <= 0:
        return None, lump
    return lump / (params.drive_cost_per_min * move), lump


def provider_cost(
    drivers: list[DriverState],
    targets,
    tables: dict[int, ProfitTable],
    beta: float,
    params: EconomicParams,
    graph: MetricGraph,
) -> float:
    """Provider cost of a target configuration, from the definition.

    Relocation compensation plus beta-weighted expected response time plus
    the (constant) sum of best profits minus the drivers' value at their
    targets.  Computed directly so it can audit the reduction's cost.
    """
    targets = np.asarray(targets)
    sigma = params.drive_cost_per_min
    total = 0.0
    for driver, target in zip(drivers, targets):
        table = tables[driver.id]
        move = graph.cost[driver.location, target]
        total += sigma * move
        total += best_profit(driver, table, params, graph)
        bq = table.budget_quanta(driver.budget)
        travel_q = int(np.ceil(move / params.budget_quantum - 1e-9))
        total -= table.value_q(int(target), bq - travel_q)
    nearest = graph.cost[targets].min(axis=0)
    return total + beta * float(graph.pa @ nearest)


@dataclass
class MflInstance:
    """Facility-movement form of the pay-to-relocate problem.

    ``reloc[i, f]`` is the adjusted cost of moving driver ``i`` to candidate
    ``f`` (travel minus opportunity credit; equals payment / sigma);
    ``service[f, v]`` is plain travel time.  ``cost`` of an assignment equals
    the provider cost divided by the per-minute driving cost.
    """

    reloc: np.ndarray  # (m, n_cand)
    service: np.ndarray  # (n_cand, n_demand)
    pa: np.ndarray
    beta: float
    sigma: float
    candidates: np.ndarray  # vertex id per candidate column
    initial: np.ndarray  # vertex per driver
    driver_ids: list[int] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.reloc.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.reloc.shape[1]

    def cost(self, assignment) -> float:
        assignment = np.asarray(assignment)
        move = float(self.reloc[np.arange(self.m), assignment].sum())
        nearest = self.service[assignment].min(axis=0)
        return move + (self.beta / self.sigma) * float(self.pa @ nearest)

    def payments(self, assignment) -> np.ndarray:
        """Lump incentives per driver; relocation edges are payments / sigma."""
        assignment = np.asarray(assignment)
        return np.maximum(self.sigma * self.reloc[np.arange(self.m), assignment], 0.0)


@dataclass
class IncentivePlan:
    assignment: np.ndarray  # target vertex id per driver
    payments: np.ndarray  # dollars per driver
    total_pay: float
    provider_cost: float
    response_time: float
    reduction_cost: float
    decomposition: dict = field(default_factory=dict)
    driver_ids: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "driver_ids": self.driver_ids,
                "targets": [int(t) for t in self.assignment],
                "payments": [float(p) for p in self.payments],
                "total_pay": self.total_pay,
                "provider_cost": self.provider_cost,
                "response_time": self.response_time,
                "decomposition": self.decomposition,
            }
        )


def build_mfl(
    drivers: list[DriverState],
    tables: dict[int, ProfitTable],
    beta: float,
    params: EconomicParams,
    graph: MetricGraph,
    candidates: np.ndarray | None = None,
) -> MflInstance:
    """Fold opportunity costs into relocation edges over candidate vertices."""
    if candidates is None:
        candidates = np.arange(graph.n)
    candidates = np.asarray(candidates)
    sigma = params.drive_cost_per_min
    m = len(drivers)
    reloc = np.empty((m, len(candidates)))
    for i, driver in enumerate(drivers):
        table = tables[driver.id]
        bq = table.budget_quanta(driver.budget)
        move = graph.cost[driver.location, candidates]
        travel_q = np.ceil(move / params.budget_quantum - 1e-9).astype(np.int64)
        left = np.clip(bq - travel_q, 0, table.n_quanta)
        v_target = np.where(left > 0, table.values[candidates, left], 0.0)
        best = best_profit(driver, table, params, graph)
        reloc[i] = move - (v_target - best) / sigma
    service = graph.cost[candidates]
    return MflInstance(
        reloc,
        service,
        graph.pa.copy(),
        beta,
        sigma,
        candidates,
        np.array([d.location for d in drivers]),
        [d.id for d in drivers],
    )


def _plan_from_assignment(instance: MflInstance, assignment: np.ndarray) -> IncentivePlan:
    payments = instance.payments(assignment)
    cost = instance.cost(assignment)
    nearest = instance.service[assignment].min(axis=0)
    response = float(instance.pa @ nearest)
    h = instance.sigma * cost
    return IncentivePlan(
        assignment=instance.candidates[assignment],
        payments=payments,
        total_pay=float(payments.sum()),
        provider_cost=h,
        response_time=response,
        reduction_cost=cost,
        decomposition={
            "pay_term": float(payments.sum()),
            "response_term": instance.beta * response,
            "constant_term": h - float(payments.sum()) - instance.beta * response,
        },
        driver_ids=list(instance.driver_ids),
    )


def _rematch(instance: MflInstance, assignment: np.ndarray) -> np.ndarray:
    """Optimal driver-to-target matching for a fixed target multiset."""
    cols = instance.reloc[:, assignment]
    rows, order = linear_sum_assignment(cols)
    new = np.empty_like(assignment)
    new[rows] = assignment[order]
    return new


def solve_local_search(instance: MflInstance) -> IncentivePlan:
    """Best-improving single-target moves with exact rematching.

    Starts from the identity assignment (every driver keeps its vertex),
    repeatedly applies the single (driver, candidate) retargeting with the
    largest cost decrease, re-matching drivers to the chosen target multiset
    after each move, and stops when the best improvement falls below a
    relative tolerance.  Deterministic.
    """
    cand_index = {int(v): k for k, v in enumerate(instance.candidates)}
    try:
        assignment = np.array([cand_index[int(q)] for q in instance.initial])
    except KeyError as exc:
        raise ValueError(f"initial vertex not among candidates: {exc}") from None
    assignment = _rematch(instance, assignment)
    current = instance.cost(assignment)
    for _ in range(MAX_SWEEPS):
        served = instance.service[assignment]  # (m, n_demand)
        base_resp = float(instance.pa @ served.min(axis=0))
        best_delta, best_move = 0.0, None
        for i in range(instance.m):
            if instance.m > 1:
                without = np.min(np.delete(served, i, axis=0), axis=0)
                new_service = np.minimum(instance.service, without[None, :])
            else:
                new_service = instance.service
            resp = new_service @ instance.pa  # per candidate target for driver i
            reloc_delta = instance.reloc[i] - instance.reloc[i, assignment[i]]
            delta = reloc_delta + (instance.beta / instance.sigma) * (resp - base_resp)
            k = int(np.argmin(delta))
            if delta[k] < best_delta - 1e-15:
                best_delta, best_move = delta[k], (i, k)
        if best_move is None:
            break
        i, k = best_move
        assignment = assignment.copy()
        assignment[i] = k
        assignment = _rematch(instance, assignment)
        new_cost = instance.cost(assignment)
        if current - new_cost <= LOCAL_SEARCH_REL_TOL * max(abs(current), 1e-9):
            current = min(current, new_cost)
            break
        current = new_cost
    return _plan_from_assignment(instance, assignment)


def solve_bruteforce(instance: MflInstance) -> IncentivePlan:
    """Exact minimum over every target assignment; guarded by instance size."""
    if instance.n_candidates**instance.m > BRUTEFORCE_MAX_ASSIGNMENTS:
        raise ValueError("instance too large for exhaustive enumeration")
    best_cost, best_assignment = None, None
    for combo in itertools.product(range(instance.n_candidates), repeat=instance.m):
        assignment = np.array(combo)
        cost = instance.cost(assignment)
        if best_cost is None or cost < best_cost - 1e-15:
            best_cost, best_assignment = cost, assignment
    return _plan_from_assignment(instance, best_assignment)


def extract_offers(
    plan: IncentivePlan,
    drivers: list[DriverState],
) -> list[tuple[int, int, float]]:
    """(driver id, target vertex, payment) for every driver asked to act.

    Drivers already at their target with nothing owed get no offer.
    """
    offers = []
    for driver, target, pay in zip(drivers, plan.assignment, plan.payments):
        if pay <= 1e-12 and int(target) == driver.location:
            continue
        offers.append((driver.id, int(target), float(pay)))
    return offers
