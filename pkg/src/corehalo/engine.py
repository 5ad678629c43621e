"""Stochastic-approximation recursions, metric recording and stable-hit detection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gossip import GossipMatrix
from .operators import CoreHaloDecomposition, OperatorInstance, StrictOperator, lifted_apply, strict_apply

__all__ = [
    "RunConfig",
    "RunRecord",
    "run_sa",
    "run_dsa",
    "run_decomposed_iteration",
    "run_strict_iteration",
    "stable_hit",
    "plateau_level",
    "agent_rngs",
]

DIVERGENCE_LIMIT = 1e12

SA = "sa"
DSA = "dsa"
CORE_HALO_PARALLEL = "core_halo_parallel"
SINGLE_AGENT_BLOCK = "single_agent_block"
_MODES = (SA, DSA, CORE_HALO_PARALLEL, SINGLE_AGENT_BLOCK)


def _norm(name: str):
    return {
        "l1": lambda v: float(np.sum(np.abs(v))),
        "l2": lambda v: float(np.linalg.norm(v)),
        "linf": lambda v: float(np.max(np.abs(v))) if len(v) else 0.0,
    }[name]


@dataclass(frozen=True)
class RunConfig:
    mode: str
    stepsize: float
    iterations: int
    seed: int
    gossip: GossipMatrix | None = None
    record_every: int = 100
    error_norm: str = "l2"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.stepsize <= 1.0:
            raise ValueError("stepsize must lie in (0, 1]")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")


@dataclass
class RunRecord:
    """Per-iteration metric trace.  Rows are strictly increasing in ``k``."""

    k: list[int] = field(default_factory=list)
    opt_error: list[float] = field(default_factory=list)
    consensus_error: list[float] = field(default_factory=list)
    lyapunov: list[float] = field(default_factory=list)
    diverged: bool = False
    final_x: np.ndarray | None = None

    def append(self, k, opt_error, consensus_error=None, lyapunov=None):
        if self.k and k <= self.k[-1]:
            raise ValueError("iterations must be strictly increasing")
        if not np.isfinite(opt_error):
            raise ValueError("metrics must be finite")
        self.k.append(int(k))
        self.opt_error.append(float(opt_error))
        self.consensus_error.append(float(consensus_error) if consensus_error is not None else float("nan"))
        self.lyapunov.append(float(lyapunov) if lyapunov is not None else float("nan"))

    def to_csv(self, path, metadata: dict | None = None):
        """Write the trace as CSV; optionally a JSON metadata sidecar next to it."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "opt_error", "consensus_error", "lyapunov"])
            for row in zip(self.k, self.opt_error, self.consensus_error, self.lyapunov):
                writer.writerow([row[0]] + [format(v, ".17g") for v in row[1:]])
        if metadata is not None:
            sidecar = path.with_suffix(path.suffix + ".meta.json")
            sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def agent_rngs(seed: int, m: int):
    """Independent per-agent sample streams plus one index stream.

    The index stream drives component selection for the single-agent
    recursion; agent ``i`` of the decentralized recursion uses sample stream
    ``i``.  With ``m = 1`` both recursions therefore consume identical draws.
    """
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(m + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


def _nu(alpha: float, beta: float) -> float:
    q = alpha * (1.0 - beta)
    if not 0.0 < q < 1.0:
        return float("nan")
    return q * (8.0 - 7.0 * q) / (16.0 * (1.0 - q) ** 2)


def run_sa(op: OperatorInstance, cfg: RunConfig, x_star: np.ndarray) -> RunRecord:
    """Single-agent recursion ``x <- x + a (F_{i_k}(x, xi) - x)`` from ``x = 0``.

    The component index ``i_k`` is drawn uniformly from the operator's
    components each iteration.  Aborts with the last valid record if the
    iterate diverges.
    """
    if cfg.mode != SA:
        raise ValueError("config mode must be 'sa'")
    if op.oracle_sample is None:
        raise ValueError("operator exposes no stochastic oracle")
    err = _norm(cfg.error_norm)
    idx_rng, sample_rngs = agent_rngs(cfg.seed, 1)
    sample_rng = sample_rngs[0]
    indices = idx_rng.integers(0, op.num_components, size=cfg.iterations)
    alpha = cfg.stepsize
    x = np.zeros(op.dimension)
    record = RunRecord()
    record.append(0, err(x - x_star))
    for k in range(cfg.iterations):
        f = op.oracle_sample(int(indices[k]), x, sample_rng)
        x = x + alpha * (f - x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            record.diverged = True
            break
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.iterations:
            record.append(k + 1, err(x - x_star))
    record.final_x = x
    return record


def run_dsa(op: OperatorInstance, cfg: RunConfig, x_star: np.ndarray) -> RunRecord:
    """Decentralized recursion: local sample steps followed by a gossip mix.

    Every agent starts at zero, takes its own stochastic step with an
    independent stream and the agent copies are mixed through the gossip
    matrix.  Metrics are recorded on the agent average.
    """
    if cfg.mode != DSA:
        raise ValueError("config mode must be 'dsa'")
    if cfg.gossip is None:
        raise ValueError("decentralized run requires a gossip matrix")
    m = op.num_components
    if cfg.gossip.m != m:
        raise ValueError("gossip matrix size must match component count")
    if op.oracle_sample is None:
        raise ValueError("operator exposes no stochastic oracle")
    err = _norm(cfg.error_norm)
    _, sample_rngs = agent_rngs(cfg.seed, m)
    alpha = cfg.stepsize
    W = cfg.gossip.weights
    nu = _nu(alpha, op.properties.beta) if op.properties is not None else float("nan")
    lyap_weight = (1.0 + 1.0 / nu) / m if np.isfinite(nu) and nu > 0 else float("nan")

    X = np.zeros((m, op.dimension))
    record = RunRecord()

    def metrics(k, X):
        xbar = X.mean(axis=0)
        cons = float(np.sum((X - xbar) ** 2))
        opt_sq = float(np.sum((xbar - x_star) ** 2))
        record.append(k, err(xbar - x_star), cons, opt_sq + lyap_weight * cons)

    metrics(0, X)
    Z = np.empty_like(X)
    for k in range(cfg.iterations):
        for i in range(m):
            f = op.oracle_sample(i, X[i], sample_rngs[i])
            Z[i] = X[i] + alpha * (f - X[i])
        X = W @ Z
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > DIVERGENCE_LIMIT:
            record.diverged = True
            break
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.iterations:
            metrics(k + 1, X)
    record.final_x = X.mean(axis=0)
    return record


def run_decomposed_iteration(
    op: OperatorInstance,
    ch: CoreHaloDecomposition,
    mode: str,
    cfg: RunConfig,
    x_star: np.ndarray,
) -> RunRecord:
    """Deterministic block recursions over a core-halo decomposition.

    ``core_halo_parallel`` applies every lifted block update per round, which
    equals one full application of the mean operator; ``single_agent_block``
    applies one uniformly random agent's lifted update per round.
    """
    if mode not in (CORE_HALO_PARALLEL, SINGLE_AGENT_BLOCK):
        raise ValueError(f"unsupported decomposed mode {mode!r}")
    err = _norm(cfg.error_norm)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    x = np.zeros(op.dimension)
    record = RunRecord()
    record.append(0, err(x - x_star))
    for k in range(cfg.iterations):
        if mode == CORE_HALO_PARALLEL:
            nxt = x.copy()
            for i in range(ch.m):
                nxt[list(ch.cores[i])] = lifted_apply(op, ch, i, x)[list(ch.cores[i])]
            x = nxt
        else:
            i = int(rng.integers(0, ch.m))
            x = lifted_apply(op, ch, i, x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            record.diverged = True
            break
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.iterations:
            record.append(k + 1, err(x - x_star))
    record.final_x = x
    return record


def run_strict_iteration(s: StrictOperator, cfg: RunConfig, x_star: np.ndarray) -> RunRecord:
    """Deterministic parallel iteration of a strict (block-local) operator."""
    err = _norm(cfg.error_norm)
    x = np.zeros(s.partition.dimension)
    record = RunRecord()
    record.append(0, err(x - x_star))
    for k in range(cfg.iterations):
        x = strict_apply(s, x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            record.diverged = True
            break
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.iterations:
            record.append(k + 1, err(x - x_star))
    record.final_x = x
    return record


def stable_hit(record: RunRecord, band: float):
    """Smallest recorded iteration after which the error stays within ``band``.

    Returns ``None`` if the trace never settles inside the band.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    hit = None
    for k, e in zip(record.k, record.opt_error):
        if e <= band:
            if hit is None:
                hit = k
        else:
            hit = None
    return hit


def plateau_level(record: RunRecord, fraction: float = 0.1, stat: str = "median") -> float:
    """Tail statistic of the error over the last ``fraction`` of iterations.

    ``median`` summarizes the settled level; ``max`` captures the full
    excursion range, which is the right base for a stay-inside band when the
    plateau fluctuations are heavy-tailed.
    """
    if not record.k:
        raise ValueError("empty record")
    cutoff = record.k[-1] * (1.0 - fraction)
    tail = [e for k, e in zip(record.k, record.opt_error) if k >= cutoff]
    if stat == "median":
        return float(np.median(tail))
    if stat == "max":
        return float(np.max(tail))
    raise ValueError(f"unknown stat {stat!r}")
