"""Tree-builder random walk laboratory.

A walker on a growing rooted tree attaches a random number of leaves
to its current vertex each step, then moves to a uniform neighbour.
The package simulates the process at scale, detects its regeneration
structure, estimates speed and concentration, and cross-checks the
simulator against exact rational enumeration of short trajectories.
"""

from .model import (
    GrowingTree,
    LeafLaw,
    Retention,
    StartKind,
    Trajectory,
    WalkerState,
    export_tree,
    initial_state,
    simulate,
    step,
)
from ._rng import RngStream
from .mc import (
    ExperimentConfig,
    SpeedEstimate,
    estimate_escape,
    measure_throughput,
    run_K_and_M,
    run_concentration,
    run_speed_curve,
    run_tau_tail,
)
from .renewal import CensorPolicy, RenewalReport, detect_cascade, detect_renewals

__version__ = "0.1.0"

__all__ = [
    "CensorPolicy",
    "ExperimentConfig",
    "GrowingTree",
    "LeafLaw",
    "RenewalReport",
    "Retention",
    "RngStream",
    "SpeedEstimate",
    "StartKind",
    "Trajectory",
    "WalkerState",
    "detect_cascade",
    "detect_renewals",
    "estimate_escape",
    "export_tree",
    "initial_state",
    "measure_throughput",
    "run_K_and_M",
    "run_concentration",
    "run_speed_curve",
    "run_tau_tail",
    "simulate",
    "step",
    "__version__",
]
