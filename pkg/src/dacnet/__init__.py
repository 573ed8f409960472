"""Divide-and-conquer solvers for network-structured convex optimization."""

from dacnet.engine import DacConfig, dac_step, run
from dacnet.experiments import ExperimentConfig, build_experiment, run_trials
from dacnet.graph import Graph, random_geometric_graph
from dacnet.partition import build_partition, select_fusion_centers, voronoi_regions

__all__ = [
    "DacConfig",
    "ExperimentConfig",
    "Graph",
    "build_experiment",
    "build_partition",
    "dac_step",
    "random_geometric_graph",
    "run",
    "run_trials",
    "select_fusion_centers",
    "voronoi_regions",
]
