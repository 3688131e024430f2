"""Deadlock-free PIBT variants for pickup-and-delivery on maps with dead-end trees."""
from .engine import AgentState, Phase, Policy
from .sim import Metrics, RunResult, Task, generate_taskset, run_instance
from .world import DistanceTable, Environment, decompose, load_map, parse_map

__all__ = [
    "AgentState", "Phase", "Policy", "Metrics", "RunResult", "Task",
    "generate_taskset", "run_instance", "DistanceTable", "Environment",
    "decompose", "load_map", "parse_map", "map_path",
]
__version__ = "0.1.0"


def map_path(name: str):
    """Path of a shipped replica map (``env1`` .. ``env4``, ``deadend``)."""
    from importlib.resources import files

    return files(__package__) / "maps" / f"{name}.map"
