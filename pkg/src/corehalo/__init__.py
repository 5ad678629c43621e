"""Decentralized fixed-point solving with core-halo decompositions.

A library and CLI for splitting fixed-point operators into disjoint write
cores with overlapping read-only halos, running single-agent and decentralized
stochastic-approximation recursions over them, and measuring the structural
bias of strict (halo-free) decompositions on PageRank, tabular MDP and
energy-management instances.
"""

from .operators import (
    CoreHaloDecomposition,
    OperatorInstance,
    OperatorProperties,
    Partition,
    StrictOperator,
    averaged_apply,
    check_compatibility,
    lifted_apply,
    strict_apply,
    validate_partition,
)
from .gossip import AgentGraph, GossipMatrix, check_speedup_conditions, metropolis_weights, rho

__version__ = "0.1.0"

__all__ = [
    "Partition",
    "CoreHaloDecomposition",
    "OperatorInstance",
    "OperatorProperties",
    "StrictOperator",
    "validate_partition",
    "check_compatibility",
    "lifted_apply",
    "averaged_apply",
    "strict_apply",
    "AgentGraph",
    "GossipMatrix",
    "metropolis_weights",
    "rho",
    "check_speedup_conditions",
    "__version__",
]
