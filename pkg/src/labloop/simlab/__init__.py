"""Simulated on-premises lab: deterministic mock model services (molecule
generation, folding, docking, affinity scoring) and mock instruments,
exposed to the orchestrator only through gateway adapters."""

from .rng import fnv1a64, splitmix64_next
from .services import (
    AffinityScore,
    ExhaustionError,
    FoldCache,
    InjectedFault,
    InstrumentSim,
    Molecule,
    MoleculeGenerator,
    Pose,
    TargetStructure,
    dock,
    score_affinity,
)

__all__ = [
    "fnv1a64",
    "splitmix64_next",
    "Molecule",
    "TargetStructure",
    "Pose",
    "AffinityScore",
    "MoleculeGenerator",
    "FoldCache",
    "InstrumentSim",
    "ExhaustionError",
    "InjectedFault",
    "dock",
    "score_affinity",
]
