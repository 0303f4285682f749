"""Fleet rebalancing for self-interested ride-sourcing drivers.

Two indirect controls relocate idle drivers to cut customer wait time:
selectively sharing the fleet's positions with a subset of drivers, and
paying drivers the minimum incentive to move to a target vertex.  A Poisson
dispatch simulator evaluates both against an uncontrolled baseline.
"""

__version__ = "0.1.0"

from rideflow.graph import MetricGraph, RawPickup, Vertex
from rideflow.drivers import DriverState, EconomicParams, Info, ProfitTable
from rideflow.sim import SimConfig

__all__ = [
    "MetricGraph",
    "RawPickup",
    "Vertex",
    "DriverState",
    "EconomicParams",
    "Info",
    "ProfitTable",
    "SimConfig",
    "__version__",
]
