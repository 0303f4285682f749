"""Poisson dispatch simulation with per-step relocation control.

Requests arrive by superposition sampling over the vertex rates and are
served first-come-first-serve by the closest idle driver.  Between arrivals
the chosen control (none, information sharing, or incentive pay) relocates
idle drivers instantaneously; relocation and rides consume each driver's
work budget and exhausted drivers leave the fleet.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from rideflow import incentives, info_sharing
from rideflow.drivers import (
    CandidatePair,
    DriverState,
    EconomicParams,
    Info,
    ProfitModel,
    best_response_from_table,
)
from rideflow.graph import MetricGraph

CONTROLS = ("none", "info", "pay")
SCENARIOS = ("random", "jammed")


@dataclass
class SimConfig:
    num_drivers: int = 20
    scenario: str = "jammed"
    jam_center: int | None = None  # default: vertex nearest the demand centroid
    jam_k: int = 20
    num_requests: int = 100
    control: str = "none"
    beta: float = 1.0
    seed: int = 0
    params: EconomicParams = field(default_factory=EconomicParams)
    budget_rides: float = 5.0  # workday budget in mean-ride units
    control_before_dispatch: bool = True
    consistency_check: bool = False
    lp_method: str = "auto"

    def validate(self, graph: MetricGraph | None = None) -> list[str]:
        errors = []
        if self.num_drivers < 1:
            errors.append("num_drivers must be >= 1")
        if self.scenario not in SCENARIOS:
            errors.append(f"scenario must be one of {SCENARIOS}")
        if self.control not in CONTROLS:
            errors.append(f"control must be one of {CONTROLS}")
        if self.num_requests < 0:
            errors.append("num_requests must be >= 0")
        if self.beta < 0:
            errors.append("beta must be >= 0")
        if self.jam_k < 1:
            errors.append("jam_k must be >= 1")
        if self.budget_rides <= 0:
            errors.append("budget_rides must be > 0")
        if graph is not None and self.scenario == "jammed" and self.jam_k > graph.n:
            errors.append(f"jam_k ({self.jam_k}) exceeds vertex count ({graph.n})")
        if graph is not None and self.jam_center is not None and not 0 <= self.jam_center < graph.n:
            errors.append(f"jam_center {self.jam_center} is not a vertex")
        return errors

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["params"] = dataclasses.asdict(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "params" in d and isinstance(d["params"], dict):
            d["params"] = EconomicParams(**d["params"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Request:
    time: float  # minutes from episode start
    pickup: int
    dropoff: int


@dataclass
class EpisodeResult:
    """Per-request trace plus episode aggregates."""

    times: np.ndarray
    pickups: np.ndarray
    dropoffs: np.ndarray
    waits: np.ndarray
    driver_ids: np.ndarray
    payments: np.ndarray  # disbursed just before each request
    d_before: np.ndarray  # expected response time before each arrival
    share_counts: np.ndarray
    idle_counts: np.ndarray
    served: int
    truncated: bool
    total_pay: float
    consistency_max_diff: float | None = None

    @property
    def mean_d(self) -> float:
        vals = self.d_before[: self.served]
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if len(vals) else float("nan")

    @property
    def share_fraction(self) -> float:
        idle = self.idle_counts[: self.served]
        mask = idle > 0
        if not mask.any():
            return 0.0
        return float((self.share_counts[: self.served][mask] / idle[mask]).mean())

    def rows(self) -> list[dict]:
        return [
            {
                "request": i,
                "time": float(self.times[i]),
                "pickup": int(self.pickups[i]),
                "dropoff": int(self.dropoffs[i]),
                "driver": int(self.driver_ids[i]),
                "wait": float(self.waits[i]),
                "payment": float(self.payments[i]),
                "d_before": float(self.d_before[i]),
                "shared": int(self.share_counts[i]),
                "idle": int(self.idle_counts[i]),
            }
            for i in range(self.served)
        ]

    def summary(self) -> dict:
        return {
            "served": self.served,
            "truncated": self.truncated,
            "mean_d": self.mean_d,
            "total_pay": self.total_pay,
            "share_fraction": self.share_fraction,
        }


def expected_response_time(positions, graph: MetricGraph) -> float:
    """Demand-weighted distance to the nearest waiting driver."""
    positions = np.asarray(positions)
    if len(positions) == 0:
        raise ValueError("no drivers")
    return float(graph.pa @ graph.cost[positions].min(axis=0))


def default_jam_center(graph: MetricGraph) -> int:
    """Vertex closest to the demand-weighted centroid."""
    xs = np.array([v.x for v in graph.vertices])
    ys = np.array([v.y for v in graph.vertices])
    cx, cy = graph.pa @ xs, graph.pa @ ys
    return int(np.argmin((xs - cx) ** 2 + (ys - cy) ** 2))


def init_scenario(config: SimConfig, graph: MetricGraph, rng: np.random.Generator) -> np.ndarray:
    """Initial waiting vertices: uniform, or packed near a congestion center."""
    if config.scenario == "random":
        return rng.integers(0, graph.n, size=config.num_drivers)
    center = config.jam_center if config.jam_center is not None else default_jam_center(graph)
    k = min(config.jam_k, graph.n)
    nearest = np.argsort(graph.cost[center], kind="stable")[:k]
    return nearest[rng.integers(0, k, size=config.num_drivers)]


def generate_requests(graph: MetricGraph, count: int, rng: np.random.Generator) -> list[Request]:
    """Superposed Poisson stream: exponential gaps, rate-proportional pickups."""
    total = float(graph.rates.sum())
    if count > 0 and total <= 0:
        raise ValueError("total arrival rate must be positive")
    if count == 0:
        return []
    gaps = rng.exponential(1.0 / total, size=count)
    times = np.cumsum(gaps)
    pickup_p = graph.rates / total
    pickups = rng.choice(graph.n, size=count, p=pickup_p)
    requests = []
    for t, v in zip(times, pickups):
        w = rng.choice(graph.n, p=graph.dropoff[v])
        requests.append(Request(float(t), int(v), int(w)))
    return requests


def assign_request(idle: list[tuple[int, int]], pickup: int, graph: MetricGraph) -> tuple[int, float]:
    """Closest idle driver (ties to the lowest id) and its pickup distance."""
    if not idle:
        raise ValueError("no idle drivers")
    best_id, best_d = None, None
    for did, loc in sorted(idle):
        d = graph.cost[loc, pickup]
        if best_d is None or d < best_d:
            best_id, best_d = did, d
    return best_id, float(best_d)


class _NearestTracker:
    """Incrementally maintained per-vertex distance to the nearest idle driver."""

    def __init__(self, graph: MetricGraph):
        self.graph = graph
        self.locs: dict[int, int] = {}
        self.dmin = np.full(graph.n, np.inf)
        self.owner = np.full(graph.n, -1, dtype=int)

    def add(self, driver: int, loc: int) -> None:
        self.locs[driver] = loc
        d = self.graph.cost[loc]
        better = d < self.dmin
        self.dmin[better] = d[better]
        self.owner[better] = driver

    def remove(self, driver: int) -> None:
        del self.locs[driver]
        stale = self.owner == driver
        if not stale.any():
            return
        if self.locs:
            rows = self.graph.cost[list(self.locs.values())][:, stale]
            arg = rows.argmin(axis=0)
            self.dmin[stale] = rows[arg, np.arange(rows.shape[1])]
            ids = np.fromiter(self.locs.keys(), dtype=int)
            self.owner[stale] = ids[arg]
        else:
            self.dmin[stale] = np.inf
            self.owner[stale] = -1

    def move(self, driver: int, loc: int) -> None:
        if self.locs.get(driver) == loc:
            return
        self.remove(driver)
        self.add(driver, loc)

    def response_time(self) -> float:
        return float(self.graph.pa @ self.dmin)


class _Fleet:
    """Mutable per-driver state during one episode."""

    def __init__(self, positions: np.ndarray, budget: float):
        n = len(positions)
        self.loc = np.array(positions, dtype=int)
        self.budget = np.full(n, budget)
        self.busy_until = np.zeros(n)
        self.active = np.ones(n, dtype=bool)
        self.idle = np.zeros(n, dtype=bool)

    def driver_state(self, i: int) -> DriverState:
        return DriverState(i, int(self.loc[i]), max(float(self.budget[i]), 0.0))

    def idle_ids(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.idle)[0]]


def _travel_and_spend(fleet: _Fleet, tracker: _NearestTracker, i: int, target: int, graph) -> None:
    move = graph.cost[fleet.loc[i], target]
    fleet.budget[i] -= move
    fleet.loc[i] = target
    if fleet.budget[i] <= 1e-9:
        fleet.active[i] = False
        fleet.idle[i] = False
        tracker.remove(i)
    else:
        tracker.move(i, target)


class _Controller:
    """Applies one control policy to the idle drivers of an episode."""

    def __init__(self, config: SimConfig, graph: MetricGraph, model: ProfitModel, max_quanta: int):
        self.config = config
        self.graph = graph
        self.model = model
        self.none_table = model.none_table(max_quanta)
        self.max_quanta = max_quanta

    def _none_response(self, fleet: _Fleet, i: int) -> int:
        return best_response_from_table(
            int(fleet.loc[i]), float(fleet.budget[i]), self.none_table,
            self.model.params, self.graph,
        )[0]

    def apply(self, fleet: _Fleet, tracker: _NearestTracker) -> tuple[float, int]:
        """Relocate idle drivers; returns (payment disbursed, drivers informed)."""
        idle = fleet.idle_ids()
        if not idle:
            return 0.0, 0
        if self.config.control == "none":
            for i in idle:
                _travel_and_spend(fleet, tracker, i, self._none_response(fleet, i), self.graph)
            return 0.0, 0
        if self.config.control == "info":
            return 0.0, self._apply_info(fleet, tracker, idle)
        return self._apply_pay(fleet, tracker, idle), 0

    def _apply_info(self, fleet: _Fleet, tracker: _NearestTracker, idle: list[int]) -> int:
        states = [fleet.driver_state(i) for i in idle]
        pairs = []
        for st in states:
            nq = max(self.none_table.budget_quanta(st.budget), 1)
            full = self.model.full_table(st, states, nq)
            v_full = best_response_from_table(
                st.location, st.budget, full, self.model.params, self.graph
            )[0]
            v_none = best_response_from_table(
                st.location, st.budget, self.none_table, self.model.params, self.graph
            )[0]
            pairs.append(CandidatePair(v_full, v_none))
        if all(p.indifferent for p in pairs):
            share = np.zeros(len(idle), dtype=bool)
            targets = [p.v_none for p in pairs]
        else:
            instance = info_sharing.build_instance(
                states, self.model.params, self.graph, pairs=pairs
            )
            decision = info_sharing.solve_lp_rounding(instance, method=self.config.lp_method)
            baseline = instance.objective(np.zeros(len(idle), dtype=bool))
            if decision.objective >= baseline - 1e-9:
                share = np.zeros(len(idle), dtype=bool)
                targets = [p.v_none for p in pairs]
            else:
                share = decision.share_full
                targets = [int(v) for v in decision.chosen_vertices]
        for i, target in zip(idle, targets):
            _travel_and_spend(fleet, tracker, i, target, self.graph)
        return int(share.sum())

    def _apply_pay(self, fleet: _Fleet, tracker: _NearestTracker, idle: list[int]) -> float:
        states = [fleet.driver_state(i) for i in idle]
        tables = {st.id: self.none_table for st in states}
        instance = incentives.build_mfl(
            states, tables, self.config.beta, self.model.params, self.graph
        )
        plan = incentives.solve_local_search(instance)
        for st, i, target in zip(states, idle, plan.assignment):
            _travel_and_spend(fleet, tracker, i, int(target), self.graph)
        return float(plan.total_pay)


def run_episode(config: SimConfig, graph: MetricGraph) -> EpisodeResult:
    errors = config.validate(graph)
    if errors:
        raise ValueError("; ".join(errors))
    ss = np.random.SeedSequence(config.seed)
    rng_init, rng_req = (np.random.default_rng(c) for c in ss.spawn(2))
    positions = init_scenario(config, graph, rng_init)
    requests = generate_requests(graph, config.num_requests, rng_req)

    budget = config.budget_rides * graph.mean_ride_minutes()
    if budget <= 0:
        budget = config.budget_rides
    quantum = config.params.budget_quantum
    max_quanta = max(int(np.ceil(budget / quantum)), 1)
    model = ProfitModel(graph, config.params, m_max=config.num_drivers)
    controller = _Controller(config, graph, model, max_quanta)

    fleet = _Fleet(positions, budget)
    tracker = _NearestTracker(graph)
    for i in range(config.num_drivers):
        fleet.idle[i] = True
        tracker.add(i, int(fleet.loc[i]))

    n = len(requests)
    times = np.array([r.time for r in requests])
    pickups = np.array([r.pickup for r in requests], dtype=int)
    dropoffs = np.array([r.dropoff for r in requests], dtype=int)
    waits = np.full(n, np.nan)
    driver_ids = np.full(n, -1, dtype=int)
    payments = np.zeros(n)
    d_before = np.full(n, np.nan)
    share_counts = np.zeros(n, dtype=int)
    idle_counts = np.zeros(n, dtype=int)

    served = 0
    truncated = False
    total_pay = 0.0
    max_diff = 0.0 if config.consistency_check else None

    def free_until(t: float) -> None:
        ready = fleet.active & ~fleet.idle & (fleet.busy_until <= t + 1e-12)
        for i in np.nonzero(ready)[0]:
            fleet.idle[i] = True
            tracker.add(int(i), int(fleet.loc[i]))

    for k, req in enumerate(requests):
        t_dispatch = req.time
        while True:
            free_until(t_dispatch)
            if fleet.idle.any():
                if config.control_before_dispatch:
                    pay, shared = controller.apply(fleet, tracker)
                    total_pay += pay
                    payments[k] = pay
                    share_counts[k] = shared
                if fleet.idle.any():
                    break
            busy = fleet.active & ~fleet.idle
            if not busy.any():
                truncated = True
                break
            t_dispatch = float(fleet.busy_until[busy].min())
        if truncated:
            break

        idle_ids = fleet.idle_ids()
        idle_counts[k] = len(idle_ids)
        d_before[k] = tracker.response_time()
        if config.consistency_check:
            scratch = expected_response_time(fleet.loc[idle_ids], graph)
            max_diff = max(max_diff, abs(scratch - d_before[k]))

        chosen, dist = assign_request([(i, int(fleet.loc[i])) for i in idle_ids], req.pickup, graph)
        waits[k] = (t_dispatch - req.time) + dist
        driver_ids[k] = chosen
        ride = graph.cost[fleet.loc[chosen], req.pickup] + graph.cost[req.pickup, req.dropoff]
        fleet.idle[chosen] = False
        tracker.remove(chosen)
        fleet.busy_until[chosen] = t_dispatch + ride
        fleet.budget[chosen] -= ride
        fleet.loc[chosen] = req.dropoff
        if fleet.budget[chosen] <= 1e-9:
            fleet.active[chosen] = False
        served += 1

    return EpisodeResult(
        times, pickups, dropoffs, waits, driver_ids, payments, d_before,
        share_counts, idle_counts, served, truncated, total_pay, max_diff,
    )


def rep_seed(master_seed: int, rep: int) -> int:
    """Counter-based split: rep seeds never change when more reps are added."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(rep,)).generate_state(1)[0])


def run_batch(
    configs: list[SimConfig],
    graph: MetricGraph,
    repetitions: int,
    master_seed: int = 0,
) -> tuple[list[dict], list[dict]]:
    """Matched-seed batch over controls; returns (per-run rows, summaries).

    Every config runs the same sequence of episode seeds, so controls are
    compared on identical initial configurations and request streams.  A
    no-control baseline is run implicitly for each (drivers, scenario) group
    when absent, to report improvement in expected response time.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    groups = {(c.num_drivers, c.scenario) for c in configs}
    baselines: dict[tuple, list[float]] = {}
    all_rows: list[dict] = []

    def run_config(config: SimConfig, record: bool) -> list[EpisodeResult]:
        results = []
        for rep in range(repetitions):
            cfg = dataclasses.replace(config, seed=rep_seed(master_seed, rep))
            res = run_episode(cfg, graph)
            results.append(res)
            if record:
                all_rows.append(
                    {
                        "control": config.control,
                        "beta": config.beta,
                        "drivers": config.num_drivers,
                        "scenario": config.scenario,
                        "rep": rep,
                        "seed": cfg.seed,
                        **res.summary(),
                    }
                )
        return results

    for key in sorted(groups):
        base_cfg = next(
            (c for c in configs if (c.num_drivers, c.scenario) == key and c.control == "none"),
            None,
        )
        explicit = base_cfg is not None
        if base_cfg is None:
            template = next(c for c in configs if (c.num_drivers, c.scenario) == key)
            base_cfg = dataclasses.replace(template, control="none")
        results = run_config(base_cfg, record=explicit)
        baselines[key] = [r.mean_d for r in results]

    summaries = []
    for config in configs:
        key = (config.num_drivers, config.scenario)
        if config.control == "none":
            results = [r for r in all_rows if r["control"] == "none"
                       and (r["drivers"], r["scenario"]) == key]
            mean_ds = [r["mean_d"] for r in results]
            pays = [0.0] * len(mean_ds)
            shares = [0.0] * len(mean_ds)
        else:
            results_ep = run_config(config, record=True)
            mean_ds = [r.mean_d for r in results_ep]
            pays = [r.total_pay for r in results_ep]
            shares = [r.share_fraction for r in results_ep]
        base = baselines[key]
        improvements = [
            (b - d) / b if b > 0 else 0.0 for b, d in zip(base, mean_ds)
        ]
        q1, med, q3 = np.percentile(improvements, [25, 50, 75]) if improvements else (0, 0, 0)
        summaries.append(
            {
                "control": config.control,
                "beta": config.beta,
                "drivers": config.num_drivers,
                "scenario": config.scenario,
                "reps": repetitions,
                "mean_improvement": float(np.mean(improvements)),
                "q1_improvement": float(q1),
                "median_improvement": float(med),
                "q3_improvement": float(q3),
                "mean_d": float(np.mean(mean_ds)),
                "mean_pay": float(np.mean(pays)),
                "q1_pay": float(np.percentile(pays, 25)),
                "q3_pay": float(np.percentile(pays, 75)),
                "mean_share_fraction": float(np.mean(shares)),
            }
        )
    return all_rows, summaries


def config_to_json(config: SimConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)


def config_from_json(text: str) -> SimConfig:
    return SimConfig.from_dict(json.loads(text))
