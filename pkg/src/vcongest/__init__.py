"""Round-synchronous Vertex-Congest simulator for information spreading on G(n, k)."""

from .engine import RunTrace, SimConfig, completion_round, run
from .protocols import PhasePlan, build_plan, ranking_function
from .topology import Topology, build_gnk, diameter, vertex_connectivity

__all__ = [
    "RunTrace",
    "SimConfig",
    "completion_round",
    "run",
    "PhasePlan",
    "build_plan",
    "ranking_function",
    "Topology",
    "build_gnk",
    "diameter",
    "vertex_connectivity",
]

__version__ = "0.1.0"
