"""Shared fixtures and random-instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from rideflow.drivers import EconomicParams
from rideflow.graph import MetricGraph, Vertex, build_complete_metric


def make_vertices(points: np.ndarray, rates: np.ndarray) -> list[Vertex]:
    probs = rates / rates.sum()
    return [
        Vertex(i, float(x), float(y), float(r), float(p))
        for i, ((x, y), r, p) in enumerate(zip(points, rates, probs))
    ]


def random_graph(
    rng: np.random.Generator,
    n: int,
    extent: float = 10.0,
    max_rate: float = 0.1,
    allow_zero_rate: bool = False,
) -> MetricGraph:
    """Complete Euclidean metric on random points with random demand."""
    points = rng.random((n, 2)) * extent
    rates = rng.random(n) * max_rate
    if not allow_zero_rate:
        rates = np.maximum(rates, 1e-3)
    elif n > 1:
        rates[rng.integers(0, n)] = 0.0
    if rates.sum() <= 0:
        rates[0] = max_rate
    return build_complete_metric(make_vertices(points, rates), speed_kmh=0.06)


def make_city(
    nv: int, seed: int = 0, extent: float = 4000.0, max_rate: float = 0.03
) -> MetricGraph:
    """Synthetic city at desk scale: meters at 30 km/h, rates per minute."""
    rng = np.random.default_rng(seed)
    points = rng.random((nv, 2)) * extent
    raw = rng.random(nv)
    rates = raw / raw.max() * max_rate
    return build_complete_metric(make_vertices(points, rates))


@pytest.fixture
def params() -> EconomicParams:
    return EconomicParams()


@pytest.fixture
def square_graph() -> MetricGraph:
    """Four vertices on a unit square, one minute per side, uneven demand."""
    points = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    rates = np.array([0.05, 0.1, 0.2, 0.05])
    return build_complete_metric(make_vertices(points, rates), speed_kmh=0.06)
