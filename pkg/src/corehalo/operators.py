"""Fixed-point operators, coordinate partitions and core-halo decompositions.

A core-halo decomposition splits the coordinates ``{0..d-1}`` into disjoint
cores (write ownership) and equips every core with a halo superset (read-only
evaluation context).  When every halo contains all coordinates the core block
of the mean operator actually depends on, the averaged lifted operator is a
relaxation of the mean operator with identical fixed points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Partition",
    "CoreHaloDecomposition",
    "OperatorProperties",
    "OperatorInstance",
    "StrictOperator",
    "PartitionViolation",
    "CompatibilityCounterexample",
    "validate_partition",
    "check_compatibility",
    "lifted_apply",
    "averaged_apply",
    "strict_apply",
]


@dataclass(frozen=True)
class PartitionViolation:
    """First violated partition invariant, with the offending indices."""

    kind: str  # "overlap" | "uncovered" | "out_of_range" | "empty_block"
    indices: tuple[int, ...]

    def __str__(self):
        return f"{self.kind}: {sorted(self.indices)}"


def validate_partition(blocks: Sequence[Sequence[int]], dimension: int):
    """Check that ``blocks`` partition ``{0..dimension-1}``.

    Returns ``None`` when both partition invariants hold, otherwise the first
    violated invariant as a :class:`PartitionViolation`.  Violations are data,
    not errors.
    """
    seen: set[int] = set()
    for block in blocks:
        if len(block) == 0:
            return PartitionViolation("empty_block", ())
        for idx in block:
            if not 0 <= idx < dimension:
                return PartitionViolation("out_of_range", (int(idx),))
        overlap = seen.intersection(block)
        if overlap:
            return PartitionViolation("overlap", tuple(int(i) for i in overlap))
        seen.update(int(i) for i in block)
    uncovered = set(range(dimension)) - seen
    if uncovered:
        return PartitionViolation("uncovered", tuple(sorted(uncovered)))
    if len(blocks) < 1:
        return PartitionViolation("empty_block", ())
    return None


@dataclass(frozen=True)
class Partition:
    """Disjoint coordinate blocks covering ``{0..dimension-1}``."""

    blocks: tuple[tuple[int, ...], ...]
    dimension: int

    def __post_init__(self):
        object.__setattr__(
            self, "blocks", tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        )
        violation = validate_partition(self.blocks, self.dimension)
        if violation is not None:
            raise ValueError(f"invalid partition ({violation})")

    @property
    def m(self) -> int:
        return len(self.blocks)

    def owner(self) -> np.ndarray:
        """Map each coordinate to the index of the block that owns it."""
        out = np.empty(self.dimension, dtype=np.int64)
        for i, block in enumerate(self.blocks):
            out[list(block)] = i
        return out


@dataclass(frozen=True)
class CoreHaloDecomposition:
    """Cores (disjoint partition) plus halos ``S_i`` with ``D_i <= S_i``."""

    partition: Partition
    halos: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "halos", tuple(tuple(sorted(int(i) for i in h)) for h in self.halos)
        )
        if len(self.halos) != self.partition.m:
            raise ValueError("one halo per core required")
        d = self.partition.dimension
        for core, halo in zip(self.partition.blocks, self.halos):
            halo_set = set(halo)
            if not halo_set.issuperset(core):
                raise ValueError(f"halo {sorted(halo_set)} does not contain core {core}")
            if halo and (min(halo) < 0 or max(halo) >= d):
                raise ValueError("halo index out of range")

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def dimension(self) -> int:
        return self.partition.dimension

    @property
    def cores(self) -> tuple[tuple[int, ...], ...]:
        return self.partition.blocks

    def to_json(self) -> str:
        doc = {
            "dimension": self.dimension,
            "cores": [list(c) for c in self.cores],
            "halos": [list(h) for h in self.halos],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CoreHaloDecomposition":
        doc = json.loads(text)
        part = Partition(tuple(tuple(c) for c in doc["cores"]), int(doc["dimension"]))
        return cls(part, tuple(tuple(h) for h in doc["halos"]))


@dataclass(frozen=True)
class OperatorProperties:
    """Declared (not inferred) operator constants.

    ``beta`` is the contraction modulus of the mean operator, ``lipschitz``
    bounds the sample operators and ``noise_bound`` bounds the sample
    magnitude at the fixed point.
    """

    beta: float
    lipschitz: float = 0.0
    noise_bound: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.lipschitz < 0 or self.noise_bound < 0:
            raise ValueError("lipschitz and noise_bound must be nonnegative")


@dataclass(frozen=True)
class OperatorInstance:
    """A mean operator with optional stochastic component oracles.

    ``mean_apply`` must be deterministic.  ``oracle_sample(i, x, rng)`` draws
    one stochastic evaluation of component ``i``; the mean over components of
    its expectation equals ``mean_apply``.  ``block_apply(i, x)``, when given,
    evaluates the core block of agent ``i`` from the full vector while reading
    only halo coordinates.
    """

    dimension: int
    mean_apply: Callable[[np.ndarray], np.ndarray]
    num_components: int = 1
    oracle_sample: Callable[[int, np.ndarray, np.random.Generator], np.ndarray] | None = None
    block_apply: Callable[[int, np.ndarray], np.ndarray] | None = None
    properties: OperatorProperties | None = None
    error_norm: str = "l2"


@dataclass(frozen=True)
class CompatibilityCounterexample:
    agent: int
    x: np.ndarray
    x_prime: np.ndarray
    deviation: float


def check_compatibility(
    op: OperatorInstance,
    ch: CoreHaloDecomposition,
    trials: int = 100,
    rng: np.random.Generator | None = None,
    tol: float = 1e-10,
):
    """Randomized test that each halo determines its core block of the mean map.

    Draws ``trials`` random pairs per agent that agree on the halo but differ
    elsewhere, and compares the core blocks of the mean operator.  Returns
    ``None`` when no discrepancy above ``tol`` is found, otherwise the first
    :class:`CompatibilityCounterexample`.
    """
    if op.dimension != ch.dimension:
        raise ValueError(
            f"operator dimension {op.dimension} != decomposition dimension {ch.dimension}"
        )
    if rng is None:
        rng = np.random.default_rng(0)
    d = op.dimension
    for i, (core, halo) in enumerate(zip(ch.cores, ch.halos)):
        outside = np.array(sorted(set(range(d)) - set(halo)), dtype=np.int64)
        if outside.size == 0:
            continue  # full halo is always sufficient
        core_idx = np.array(core, dtype=np.int64)
        for _ in range(trials):
            x = rng.standard_normal(d)
            x_prime = x.copy()
            x_prime[outside] = rng.standard_normal(outside.size)
            dev = float(
                np.max(np.abs(op.mean_apply(x)[core_idx] - op.mean_apply(x_prime)[core_idx]))
            )
            if dev > tol:
                return CompatibilityCounterexample(i, x, x_prime, dev)
    return None


def lifted_apply(
    op: OperatorInstance, ch: CoreHaloDecomposition, i: int, x: np.ndarray
) -> np.ndarray:
    """Apply agent ``i``'s halo-informed block map; identity off the core.

    Coordinates outside the core are returned bit-identical to the input.  The
    block value is evaluated after masking coordinates outside the halo, so the
    computation genuinely reads only ``x_{S_i}``; under compatibility this
    equals the core block of the mean operator at ``x``.
    """
    if not 0 <= i < ch.m:
        raise IndexError(f"agent index {i} out of range for m={ch.m}")
    core = np.array(ch.cores[i], dtype=np.int64)
    out = x.copy()
    if op.block_apply is not None:
        out[core] = op.block_apply(i, x)
        return out
    masked = np.zeros_like(x)
    halo = np.array(ch.halos[i], dtype=np.int64)
    masked[halo] = x[halo]
    out[core] = op.mean_apply(masked)[core]
    return out


def averaged_apply(op: OperatorInstance, ch: CoreHaloDecomposition, x: np.ndarray) -> np.ndarray:
    """Average of the lifted block maps, ``(1/m) sum_i T~_i(x)``.

    For a compatible decomposition this equals ``(1 - 1/m) x + mean_apply(x)/m``
    and therefore has exactly the same fixed points as the mean operator.
    """
    acc = np.zeros_like(np.asarray(x, dtype=float))
    for i in range(ch.m):
        acc += lifted_apply(op, ch, i, x)
    return acc / ch.m


@dataclass(frozen=True)
class StrictOperator:
    """Blockwise operator whose local maps read only their own block.

    ``local_maps[i]`` maps ``x_{D_i}`` to the updated block, so the output on
    ``D_i`` never depends on coordinates outside ``D_i``.
    """

    partition: Partition
    local_maps: tuple[Callable[[np.ndarray], np.ndarray], ...] = field(repr=False)

    def __post_init__(self):
        if len(self.local_maps) != self.partition.m:
            raise ValueError("one local map per block required")


def strict_apply(s: StrictOperator, x: np.ndarray) -> np.ndarray:
    """Apply each local map to its own block only."""
    out = np.empty_like(np.asarray(x, dtype=float))
    for block, g in zip(s.partition.blocks, s.local_maps):
        idx = np.array(block, dtype=np.int64)
        out[idx] = g(x[idx])
    return out
