"""Metric road graph, demand statistics, and drop-off model.

Raw pick-up records are projected to a local plane, clustered into demand
vertices, and connected by a complete travel-time metric.  The graph is
immutable after construction; every mutation-style helper returns a new graph.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
METRIC_TOL = 1e-9


@dataclass(frozen=True)
class RawPickup:
    """One ride request record: position in degrees, time in epoch seconds."""

    latitude: float
    longitude: float
    timestamp: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class Vertex:
    """Demand vertex: planar position in meters plus arrival statistics."""

    id: int
    x: float
    y: float
    arrival_rate: float  # requests per minute
    arrival_prob: float  # share of total demand


@dataclass
class MetricGraph:
    """Complete metric graph with travel times in minutes.

    ``cost[u, v]`` is symmetric with zero diagonal and satisfies the triangle
    inequality; ``dropoff[v, w]`` is the drop-off distribution for a pickup at
    ``v`` (rows sum to one).
    """

    vertices: list[Vertex]
    cost: np.ndarray
    dropoff: np.ndarray
    speed_kmh: float = 30.0
    _rates: np.ndarray = field(init=False, repr=False, default=None)
    _pa: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self._rates = np.array([v.arrival_rate for v in self.vertices])
        self._pa = np.array([v.arrival_prob for v in self.vertices])

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def rates(self) -> np.ndarray:
        return self._rates

    @property
    def pa(self) -> np.ndarray:
        return self._pa

    def mean_ride_minutes(self) -> float:
        """Demand-weighted expected pickup-to-dropoff travel time."""
        return float(self.pa @ (self.cost * self.dropoff).sum(axis=1))


def project_to_plane(pickups: list[RawPickup]) -> np.ndarray:
    """Local equirectangular projection to meters, centered on the data."""
    lats = np.array([p.latitude for p in pickups])
    lons = np.array([p.longitude for p in pickups])
    lat0 = math.radians(lats.mean())
    x = np.radians(lons) * EARTH_RADIUS_M * math.cos(lat0)
    y = np.radians(lats) * EARTH_RADIUS_M
    return np.column_stack([x - x.mean(), y - y.mean()])


def estimate_demand(counts, horizon: float):
    """Per-vertex arrival rate and arrival probability from request counts.

    ``horizon`` is the observation window in minutes.  Returns
    ``(rates, probs)`` with ``rates[u] = counts[u] / horizon`` and probs
    normalized to sum to one.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("zero total requests")
    return counts / horizon, counts / total


def cluster_pickups(
    pickups: list[RawPickup], radius: float, horizon: float | None = None
) -> list[Vertex]:
    """Greedy first-fit clustering with a pairwise-diameter cap.

    Each pickup joins the first existing cluster whose members are all within
    ``radius`` meters of it, else starts a new cluster.  Deterministic given
    input order.  Vertex position is the cluster centroid; arrival statistics
    come from the per-cluster counts over ``horizon`` minutes (defaults to the
    timestamp span of the data, floored at one minute).
    """
    if not pickups:
        raise ValueError("no pickups")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    pts = project_to_plane(pickups)
    members: list[list[int]] = []
    for i, p in enumerate(pts):
        for group in members:
            d2 = ((pts[group] - p) ** 2).sum(axis=1)
            if d2.max() <= radius * radius + 1e-9:
                group.append(i)
                break
        else:
            members.append([i])

    if horizon is None:
        ts = [p.timestamp for p in pickups]
        horizon = max((max(ts) - min(ts)) / 60.0, 1.0)
    counts = [len(g) for g in members]
    rates, probs = estimate_demand(counts, horizon)
    vertices = []
    for vid, group in enumerate(members):
        cx, cy = pts[group].mean(axis=0)
        vertices.append(Vertex(vid, float(cx), float(cy), float(rates[vid]), float(probs[vid])))
    return vertices


def build_complete_metric(
    vertices: list[Vertex],
    dropoff_mode: str = "uniform",
    speed_kmh: float = 30.0,
) -> MetricGraph:
    """Complete Euclidean metric in minutes at a fixed travel speed."""
    if not vertices:
        raise ValueError("need at least one vertex")
    if dropoff_mode != "uniform":
        raise ValueError(f"unknown dropoff mode: {dropoff_mode}")
    pos = np.array([[v.x, v.y] for v in vertices])
    diff = pos[:, None, :] - pos[None, :, :]
    dist_m = np.sqrt((diff**2).sum(axis=2))
    minutes_per_meter = 60.0 / (speed_kmh * 1000.0)
    cost = dist_m * minutes_per_meter
    np.fill_diagonal(cost, 0.0)
    n = len(vertices)
    dropoff = np.full((n, n), 1.0 / n)
    return MetricGraph(list(vertices), cost, dropoff, speed_kmh=speed_kmh)


def validate_metric(graph: MetricGraph) -> list[tuple]:
    """All symmetry and triangle-inequality violations beyond tolerance.

    Returns tuples ``("asymmetric", u, v, gap)`` and
    ``("triangle", u, v, w, gap)``; an empty list means the cost matrix is a
    valid metric.
    """
    c = graph.cost
    violations: list[tuple] = []
    asym = np.argwhere(np.abs(c - c.T) > METRIC_TOL)
    for u, v in asym:
        if u < v:
            violations.append(("asymmetric", int(u), int(v), float(abs(c[u, v] - c[v, u]))))
    if np.any(np.diag(c) > METRIC_TOL):
        for u in np.nonzero(np.diag(c) > METRIC_TOL)[0]:
            violations.append(("diagonal", int(u), float(c[u, u])))
    for v in range(graph.n):
        slack = c[:, v][:, None] + c[v, :][None, :] - c
        bad = np.argwhere(slack < -METRIC_TOL)
        for u, w in bad:
            violations.append(("triangle", int(u), int(v), int(w), float(-slack[u, w])))
    return violations


def add_duplicate_vertex(graph: MetricGraph, source: int) -> tuple[MetricGraph, int]:
    """New graph with a zero-demand copy of ``source`` at distance zero from it."""
    n = graph.n
    if not 0 <= source < n:
        raise ValueError(f"no such vertex: {source}")
    src = graph.vertices[source]
    new_id = n
    vertices = list(graph.vertices) + [Vertex(new_id, src.x, src.y, 0.0, 0.0)]
    cost = np.zeros((n + 1, n + 1))
    cost[:n, :n] = graph.cost
    cost[n, :n] = graph.cost[source]
    cost[:n, n] = graph.cost[:, source]
    dropoff = np.zeros((n + 1, n + 1))
    dropoff[:n, :n] = graph.dropoff
    dropoff[n, :n] = graph.dropoff[source]
    return MetricGraph(vertices, cost, dropoff, speed_kmh=graph.speed_kmh), new_id


def load_pickups_csv(path) -> tuple[list[RawPickup], list[tuple[int, str]]]:
    """Read ``lat,lon,timestamp`` rows; returns (pickups, malformed lines).

    Malformed rows are reported as ``(line_number, reason)``.  Raises
    ``ValueError`` if more than 1% of rows are malformed.
    """
    pickups: list[RawPickup] = []
    bad: list[tuple[int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"lat", "lon", "timestamp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"CSV header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pickups.append(
                    RawPickup(float(row["lat"]), float(row["lon"]), float(row["timestamp"]))
                )
            except (TypeError, ValueError) as exc:
                bad.append((lineno, str(exc)))
    total = len(pickups) + len(bad)
    if total and len(bad) > 0.01 * total:
        raise ValueError(f"{len(bad)} of {total} rows malformed: {bad[:5]}")
    return pickups, bad


def graph_to_json(graph: MetricGraph) -> str:
    payload = {
        "speed_kmh": graph.speed_kmh,
        "vertices": [
            {
                "id": v.id,
                "x": v.x,
                "y": v.y,
                "arrival_rate": v.arrival_rate,
                "arrival_prob": v.arrival_prob,
            }
            for v in graph.vertices
        ],
        "cost": graph.cost.tolist(),
        "dropoff": graph.dropoff.tolist(),
    }
    return json.dumps(payload)


def graph_from_json(text: str) -> MetricGraph:
    payload = json.loads(text)
    vertices = [
        Vertex(v["id"], v["x"], v["y"], v["arrival_rate"], v["arrival_prob"])
        for v in payload["vertices"]
    ]
    return MetricGraph(
        vertices,
        np.array(payload["cost"]),
        np.array(payload["dropoff"]),
        speed_kmh=payload.get("speed_kmh", 30.0),
    )
