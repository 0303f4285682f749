"""Driver behavior model: perceived pickup odds, expected profit, best response.

A driver waiting at a vertex values it by a budget-recursive expected profit:
the chance of winning the next request at each demand vertex (which depends on
how many known drivers are closer), times the ride's net fare, plus the value
of the drop-off position with the remaining work budget.  Budgets live on a
fixed quantum grid so the recursion is finite and memoizable.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betainc

from rideflow.graph import MetricGraph

KM_PER_MILE = 1.609344

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


class Info(str, Enum):
    """What a driver knows about the fleet: every position, or nothing."""

    FULL = "full"
    NONE = "none"


@dataclass(frozen=True)
class EconomicParams:
    drive_cost_per_min: float = 0.30
    fare_per_min: float = 1.06 * 30.0 / (60.0 * KM_PER_MILE)
    budget_quantum: float = 1.0  # minutes

    def __post_init__(self):
        if self.drive_cost_per_min <= 0 or self.fare_per_min <= 0 or self.budget_quantum <= 0:
            raise ValueError("economic parameters must be positive")

    @classmethod
    def from_per_mile(
        cls,
        fare_per_mile: float = 1.06,
        drive_cost_per_min: float = 0.30,
        speed_kmh: float = 30.0,
        budget_quantum: float = 1.0,
    ) -> "EconomicParams":
        """Convert a per-mile fare to per-minute at the given travel speed."""
        miles_per_min = speed_kmh / (60.0 * KM_PER_MILE)
        return cls(drive_cost_per_min, fare_per_mile * miles_per_min, budget_quantum)


@dataclass
class DriverState:
    id: int
    location: int
    budget: float  # remaining work time, minutes
    info: Info = Info.NONE

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")


@dataclass
class ProfitTable:
    """Expected profit per (vertex, budget quantum) for one driver context."""

    values: np.ndarray  # (n_vertices, n_quanta + 1); column 0 is all zeros
    quantum: float
    info: Info
    driver_id: int | None = None

    @property
    def n_quanta(self) -> int:
        return self.values.shape[1] - 1

    def budget_quanta(self, budget: float) -> int:
        return min(int(budget / self.quantum + 1e-9), self.n_quanta)

    def value_q(self, vertex: int, quanta: int) -> float:
        if quanta <= 0:
            return 0.0
        return float(self.values[vertex, min(quanta, self.n_quanta)])

    def value(self, vertex: int, budget: float) -> float:
        return self.value_q(vertex, self.budget_quanta(budget))

    def to_json(self) -> str:
        vals = {
            f"{u},{b}": float(self.values[u, b])
            for u in range(self.values.shape[0])
            for b in range(self.values.shape[1])
            if self.values[u, b] != 0.0
        }
        return json.dumps(
            {
                "driver_id": self.driver_id,
                "info": self.info.value,
                "quantum": self.quantum,
                "shape": list(self.values.shape),
                "values": vals,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ProfitTable":
        payload = json.loads(text)
        values = np.zeros(tuple(payload["shape"]))
        for key, val in payload["values"].items():
            u, b = key.split(",")
            values[int(u), int(b)] = val
        return cls(values, payload["quantum"], Info(payload["info"]), payload["driver_id"])


@dataclass(frozen=True)
class CandidatePair:
    """Best-response vertices under full and under no fleet information."""

    v_full: int
    v_none: int

    @property
    def indifferent(self) -> bool:
        return self.v_full == self.v_none


def count_closer_drivers(
    driver: DriverState,
    known: list[DriverState],
    v: int,
    u: int,
    graph: MetricGraph,
) -> int:
    """Known drivers that would beat this driver to a request at ``v``.

    The driver is hypothetically at ``u``.  Equidistant drivers count only
    when their id is lower.  With no information the count is zero.
    """
    own = graph.cost[u, v]
    count = 0
    for other in known:
        if other.id == driver.id:
            continue
        d = graph.cost[other.location, v]
        if d < own or (d == own and other.id < driver.id):
            count += 1
    return count


def binomial_tail(k: int, n: int, p: float) -> float:
    """P[Binomial(n, p) >= k]."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return float(betainc(k, n - k + 1, p))


def pickup_probability(s_values: np.ndarray, rates: np.ndarray, v: int) -> float:
    """Chance the next request this driver wins arrives at ``v``.

    ``s_values[w]`` is the closer-driver count for demand vertex ``w`` at the
    driver's hypothetical position.  Each competing vertex ``w`` contributes
    the probability that, among the next ``s_v + s_w + 1`` arrivals split
    between ``v`` and ``w``, at least ``s_v + 1`` land on ``v``.  Zero-rate
    pickup vertices have probability zero; the empty product is one.
    """
    rates = np.asarray(rates, dtype=float)
    if rates[v] <= 0:
        return 0.0
    s_v = int(s_values[v])
    prob = 1.0
    for w in range(len(rates)):
        if w == v or rates[w] <= 0:
            continue
        n = s_v + int(s_values[w]) + 1
        prob *= binomial_tail(s_v + 1, n, rates[v] / (rates[v] + rates[w]))
    return prob


def closer_count_matrix(
    driver_id: int,
    known_ids: np.ndarray,
    known_locs: np.ndarray,
    graph: MetricGraph,
) -> np.ndarray:
    """Closer-driver counts for every (demand vertex, hypothetical vertex).

    Returns ``S[v, u]``; the subject driver is excluded by id.
    """
    n = graph.n
    s = np.zeros((n, n), dtype=np.int64)
    ct = graph.cost.T  # (v, u)
    for other_id, loc in zip(known_ids, known_locs):
        if other_id == driver_id:
            continue
        d = graph.cost[loc][:, None]  # (v, 1)
        s += d < ct
        if other_id < driver_id:
            s += d == ct
    return s


def _log_tail_table(m_max: int, rates: np.ndarray) -> np.ndarray:
    """log P[Bin(sv+sw+1, r_vw) >= sv+1] for sv, sw in [0, m_max].

    Shape (m_max+1, m_max+1, n, n); the (v == v) diagonal and zero-rate
    pickup columns are left at log(1) so the caller can mask them separately.
    """
    n = len(rates)
    denom = rates[:, None] + rates[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, rates[:, None] / np.where(denom > 0, denom, 1.0), 0.0)
    table = np.ones((m_max + 1, m_max + 1, n, n))
    for sv in range(m_max + 1):
        for sw in range(m_max + 1):
            table[sv, sw] = betainc(sv + 1, sw + 1, ratio)
    # Competing vertices with zero rate can never outdraw v: factor 1.
    table[:, :, :, rates <= 0] = 1.0
    idx = np.arange(n)
    table[:, :, idx, idx] = 1.0
    with np.errstate(divide="ignore"):
        return np.log(table)


def _pickup_matrix_from_counts(s: np.ndarray, log_tail: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """p_i(v, u) for all vertices from a closer-count matrix ``S[v, u]``."""
    n = s.shape[0]
    out = np.empty((n, n))
    vg, wg = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for u in range(n):
        col = s[:, u]
        logs = log_tail[col[vg], col[wg], vg, wg]
        out[:, u] = np.exp(logs.sum(axis=1))
    out[rates <= 0, :] = 0.0
    return out


def ride_quanta(graph: MetricGraph, quantum: float) -> np.ndarray:
    """Budget quanta consumed by a ride: pickup leg u->v plus ride v->w.

    Rounded up to the grid, with a one-quantum floor so zero-length rides
    still consume time and the profit recursion terminates.
    """
    total = graph.cost[:, :, None] + graph.cost.T[None, :, :]  # (u, v, w)
    q = np.ceil(total / quantum - 1e-9).astype(np.int64)
    return np.maximum(q, 1)


def ride_gain(graph: MetricGraph, params: EconomicParams) -> np.ndarray:
    """Immediate ride profit: fare for v->w minus deadhead cost u->v."""
    return (
        params.fare_per_min * graph.cost.T[None, :, :]
        - params.drive_cost_per_min * graph.cost[:, :, None]
    )


@njit(cache=True)
def _recursion_loop(p, gain, quanta, dropoff, nq):  # pragma: no cover - numba
    n = p.shape[0]
    values = np.zeros((n, nq + 1))
    for b in range(1, nq + 1):
        for u in range(n):
            acc = 0.0
            for v in range(n):
                pvu = p[v, u]
                if pvu == 0.0:
                    continue
                inner = 0.0
                for w in range(n):
                    left = b - quanta[u, v, w]
                    cont = values[w, left] if left > 0 else 0.0
                    term = gain[u, v, w] + cont
                    if term > 0.0:
                        inner += dropoff[v, w] * term
                acc += pvu * inner
            values[u, b] = acc
    return values


def _recursion_numpy(p, gain, quanta, dropoff, nq):
    n = p.shape[0]
    values = np.zeros((n, nq + 1))
    w_idx = np.broadcast_to(np.arange(n)[None, None, :], (n, n, n))
    for b in range(1, nq + 1):
        left = np.maximum(b - quanta, 0)  # column 0 is zero, so clipping is safe
        cont = values[w_idx, left]
        term = np.maximum(gain + cont, 0.0)
        inner = (term * dropoff[None, :, :]).sum(axis=2)  # (u, v)
        values[:, b] = (inner * p.T).sum(axis=1)
    return values


def _run_recursion(p, gain, quanta, dropoff, nq):
    if _HAVE_NUMBA and not os.environ.get("RIDEFLOW_NO_NUMBA"):
        return _recursion_loop(p, gain, quanta, dropoff, nq)
    return _recursion_numpy(p, gain, quanta, dropoff, nq)


class ProfitModel:
    """Shared precomputation for profit tables on one (graph, params) pair.

    Immutable once built; tables for many drivers can be computed from the
    same model.  The no-information table is cached since it is independent
    of the fleet configuration.
    """

    def __init__(self, graph: MetricGraph, params: EconomicParams, m_max: int):
        self.graph = graph
        self.params = params
        self.m_max = m_max
        self.quanta = ride_quanta(graph, params.budget_quantum)
        self.gain = ride_gain(graph, params)
        self.log_tail = _log_tail_table(m_max, graph.rates)
        self._none_table: ProfitTable | None = None

    def pickup_matrix(self, s: np.ndarray) -> np.ndarray:
        return _pickup_matrix_from_counts(s, self.log_tail, self.graph.rates)

    def table_from_counts(self, s: np.ndarray, nq: int, info: Info, driver_id=None) -> ProfitTable:
        p = self.pickup_matrix(s)
        values = _run_recursion(p, self.gain, self.quanta, self.graph.dropoff, nq)
        return ProfitTable(values, self.params.budget_quantum, info, driver_id)

    def none_table(self, nq: int) -> ProfitTable:
        if self._none_table is None or self._none_table.n_quanta < nq:
            s = np.zeros((self.graph.n, self.graph.n), dtype=np.int64)
            self._none_table = self.table_from_counts(s, nq, Info.NONE)
        return self._none_table

    def full_table(self, driver: DriverState, fleet: list[DriverState], nq: int) -> ProfitTable:
        ids = np.array([d.id for d in fleet])
        locs = np.array([d.location for d in fleet])
        s = closer_count_matrix(driver.id, ids, locs, self.graph)
        return self.table_from_counts(s, nq, Info.FULL, driver.id)

    def table(self, driver: DriverState, fleet: list[DriverState], info: Info, nq: int) -> ProfitTable:
        if info is Info.NONE:
            return self.none_table(nq)
        return self.full_table(driver, fleet, nq)


def expected_profit(
    u: int,
    budget: float,
    driver: DriverState,
    fleet: list[DriverState],
    info: Info,
    params: EconomicParams,
    graph: MetricGraph,
) -> float:
    """Expected profit of waiting at ``u`` with the given remaining budget."""
    model = ProfitModel(graph, params, m_max=len(fleet))
    nq = int(budget / params.budget_quantum + 1e-9)
    if nq <= 0:
        return 0.0
    return model.table(driver, fleet, info, nq).value(u, budget)


def travel_quanta(cost: float, quantum: float) -> int:
    return int(math.ceil(cost / quantum - 1e-9))


def best_response(
    driver: DriverState,
    fleet: list[DriverState],
    info: Info,
    params: EconomicParams,
    graph: MetricGraph,
    table: ProfitTable | None = None,
) -> tuple[int, float]:
    """Waiting vertex maximizing relocation cost plus continuation profit.

    Ties (within 1e-9) break toward the cheaper relocation, then the lower
    vertex id.  Returns ``(vertex, expected net profit)``.
    """
    if table is None:
        model = ProfitModel(graph, params, m_max=len(fleet))
        nq = int(driver.budget / params.budget_quantum + 1e-9)
        table = model.table(driver, fleet, info, max(nq, 1))
    return best_response_from_table(driver.location, driver.budget, table, params, graph)


def best_response_from_table(
    location: int,
    budget: float,
    table: ProfitTable,
    params: EconomicParams,
    graph: MetricGraph,
) -> tuple[int, float]:
    move_cost = graph.cost[location]
    bq = int(budget / params.budget_quantum + 1e-9)
    q = np.ceil(move_cost / params.budget_quantum - 1e-9).astype(np.int64)
    left = np.clip(bq - q, 0, table.n_quanta)
    cont = np.where(left > 0, table.values[np.arange(graph.n), left], 0.0)
    scores = -params.drive_cost_per_min * move_cost + cont
    best = scores.max()
    tied = np.nonzero(scores >= best - 1e-9)[0]
    order = np.lexsort((tied, move_cost[tied]))
    choice = int(tied[order[0]])
    return choice, float(scores[choice])


def candidate_locations(
    driver: DriverState,
    fleet: list[DriverState],
    params: EconomicParams,
    graph: MetricGraph,
    model: ProfitModel | None = None,
) -> CandidatePair:
    """Best responses under full information and under none."""
    if model is None:
        model = ProfitModel(graph, params, m_max=len(fleet))
    nq = max(int(driver.budget / params.budget_quantum + 1e-9), 1)
    v_full, _ = best_response(driver, fleet, Info.FULL, params, graph, model.full_table(driver, fleet, nq))
    v_none, _ = best_response(driver, fleet, Info.NONE, params, graph, model.none_table(nq))
    return CandidatePair(v_full, v_none)
