"""Cross-domain bias diagnostics: block-update diameters, strict-vs-halo
residual reports and the boundary-count deviation sweep.

The diameter sups are taken over boxes (PageRank mass vectors in [0, 1]^n,
Q-tables in [0, R_max/(1-gamma)]) because the raw sups over all of R^d are
infinite for affine maps; every report records this restriction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridworlds import GridSpec, build_prop3_grid, square_partition, trap_free_path_bound
from .mdp import FiniteMdp, StatePartition, bellman_optimality, dev, prop3_lower_bound, solve_q_star, strict_bellman

__all__ = [
    "BiasReportRow",
    "DevReportRow",
    "strict_bias_report",
    "mdp_delta_i",
    "mdp_delta_bruteforce",
    "dev_report",
    "write_bias_csv",
    "write_dev_csv",
    "DOMAIN_NOTE",
]

DOMAIN_NOTE = "diameters taken over box-restricted inputs, not all of R^d"


@dataclass(frozen=True)
class BiasReportRow:
    agent: int
    sup_block_error: float
    half_delta: float  # nan when no exact diameter is available


@dataclass(frozen=True)
class DevReportRow:
    m: int
    dev: float
    bound: float
    margin: float


def _block_norm(name: str):
    return {
        "l1": lambda v: float(np.sum(np.abs(v))),
        "l2": lambda v: float(np.linalg.norm(v)),
        "linf": lambda v: float(np.max(np.abs(v))),
    }[name]


def strict_bias_report(
    mean_fn,
    strict_fn,
    cores,
    probes,
    half_deltas=None,
    norm: str = "l1",
) -> list[BiasReportRow]:
    """Per-agent sup of the strict block error over probe configurations.

    For agent ``i`` the core block is pinned to the first probe's values and
    the remaining probes supply off-block configurations; the report lists the
    sup of ``||(strict(x) - mean(x))_{D_i}||`` against ``half_deltas[i]`` when
    an exact diameter is supplied.  The inequality ``sup >= half_delta`` is
    asserted in that case.
    """
    probes = [np.asarray(p, dtype=float) for p in probes]
    if not probes:
        if half_deltas is None:
            raise ValueError("need probes or an exact diameter oracle")
        return [BiasReportRow(i, float("nan"), float(h)) for i, h in enumerate(half_deltas)]
    nrm = _block_norm(norm)
    rows = []
    for i, core in enumerate(cores):
        idx = np.array(sorted(core), dtype=np.int64)
        base = probes[0]
        sup = 0.0
        for probe in probes:
            x = probe.copy()
            x[idx] = base[idx]
            sup = max(sup, nrm((strict_fn(x) - mean_fn(x))[idx]))
        half = float(half_deltas[i]) if half_deltas is not None else float("nan")
        if half_deltas is not None and sup < half - 1e-12:
            raise AssertionError(
                f"agent {i}: sup block error {sup} below half-diameter {half}"
            )
        rows.append(BiasReportRow(i, sup, half))
    return rows


def mdp_delta_i(mdp: FiniteMdp, sp: StatePartition, i: int) -> float:
    """Closed-form Q-backup block diameter in the sup norm.

    Over the box ``Q in [0, R_max/(1-gamma)]`` with the core block fixed, the
    optimality backup on ``D_i = C_i x A`` varies exactly through the off-core
    continuation mass:
    ``Delta_i = gamma * V_range * max_{(s,a) in D_i} P(S \\ C_i | s, a)``.
    """
    r_max = float(np.max(mdp.r * (mdp.P > 0)))
    if r_max < 0:
        raise ValueError("closed form assumes nonnegative achievable rewards")
    v_range = r_max / (1.0 - mdp.gamma)
    comp = list(sp.components[i])
    outside = np.ones(mdp.n_states, dtype=bool)
    outside[comp] = False
    escape = mdp.P[comp][:, :, outside].sum(axis=2)
    return float(mdp.gamma * v_range * escape.max())


def mdp_delta_bruteforce(mdp: FiniteMdp, sp: StatePartition, i: int) -> float:
    """Extreme-point oracle: enumerate off-core Q vertices, measure the diameter.

    Only feasible for tiny instances; the core block is pinned to zero (the
    diameter does not depend on the pinned value for this affine-in-maxima
    backup, which the closed form reflects).
    """
    r_max = float(np.max(mdp.r * (mdp.P > 0)))
    v_range = r_max / (1.0 - mdp.gamma)
    S, A = mdp.n_states, mdp.n_actions
    comp = set(sp.components[i])
    off_entries = [(s, a) for s in range(S) if s not in comp for a in range(A)]
    if len(off_entries) > 14:
        raise ValueError("brute force limited to tiny instances")
    core_rows = sorted(comp)
    core_cols = np.repeat(core_rows, A), np.tile(np.arange(A), len(core_rows))
    images = []
    for bits in range(2 ** len(off_entries)):
        Q = np.zeros((S, A))
        for b, (s, a) in enumerate(off_entries):
            if bits >> b & 1:
                Q[s, a] = v_range
        images.append(bellman_optimality(mdp, Q)[core_cols])
    stack = np.array(images)
    # sup-norm diameter of a finite set = largest per-coordinate range
    return float(np.max(stack.max(axis=0) - stack.min(axis=0)))


def dev_report(
    n: int, gamma: float, target_reward: float, ms, traps=None
) -> list[DevReportRow]:
    """Strict-backup deviation versus the boundary-count bound, swept over m.

    Builds the deterministic grid for each partition count, solves the optimal
    table, and asserts both that the measured deviation dominates the bound
    and that the bound is nondecreasing in ``m``.
    """
    rows = []
    prev_bound = -np.inf
    for m in sorted(ms):
        q = int(round(np.sqrt(m)))
        if q * q != m:
            raise ValueError("m must be a perfect square")
        spec = GridSpec(n=n, q=q, gamma=gamma, target_reward=target_reward, traps=dict(traps or {}))
        mdp = build_prop3_grid(spec)
        sp = square_partition(n, q)
        q_star = solve_q_star(mdp, tol=1e-12)
        d = dev(mdp, lambda Q: strict_bellman(mdp, sp, Q), q_star)
        bound = prop3_lower_bound(n * n, m, gamma, target_reward, trap_free_path_bound(spec))
        if d < bound - 1e-12:
            raise AssertionError(f"m={m}: deviation {d} below bound {bound}")
        if bound < prev_bound - 1e-15:
            raise AssertionError(f"bound decreased at m={m}")
        prev_bound = bound
        rows.append(DevReportRow(m, d, bound, d - bound))
    return rows


def write_bias_csv(path, rows: list[BiasReportRow]):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "sup_block_error", "half_delta"])
        writer.writerows(
            [r.agent, format(r.sup_block_error, ".17g"), format(r.half_delta, ".17g")]
            for r in rows
        )


def write_dev_csv(path, rows: list[DevReportRow]):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "dev", "bound", "margin"])
        writer.writerows(
            [r.m, format(r.dev, ".17g"), format(r.bound, ".17g"), format(r.margin, ".17g")]
            for r in rows
        )
