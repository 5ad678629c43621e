"""Gridworld constructions: boundary-defect grid, wall-separated speedup grid,
the 24x24 navigation task and the decentralized tabular Q-learning protocol."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .gossip import AgentGraph, metropolis_weights
from .mdp import FiniteMdp, StatePartition, build_successor_halos, solve_v_pi
from .operators import OperatorInstance, OperatorProperties

__all__ = [
    "GridSpec",
    "build_prop3_grid",
    "square_partition",
    "build_wall_grid_16",
    "wall_grid_operator",
    "build_minigrid_24",
    "QLearningConfig",
    "run_decentralized_qlearning",
    "canonical_return",
]

UP, RIGHT, DOWN, LEFT, STAY = range(5)
MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1), STAY: (0, 0)}


# ---------------------------------------------------------------------------
# deterministic n x n grid with successor-based rewards


@dataclass(frozen=True)
class GridSpec:
    """Deterministic square gridworld with an absorbing target and entry rewards."""

    n: int
    q: int
    gamma: float
    target: int | None = None  # defaults to the bottom-right corner
    target_reward: float = 1.0
    traps: dict[int, float] = field(default_factory=dict)  # state -> penalty R_Z > 0
    path_bound: int | None = None  # verified by BFS; computed when omitted

    def __post_init__(self):
        if self.n < 2 or self.q < 1 or self.n % self.q != 0:
            raise ValueError("q must divide n")
        if self.target is None:
            object.__setattr__(self, "target", self.n * self.n - 1)
        if self.target in self.traps:
            raise ValueError("target cannot be a trap")

    @property
    def n_states(self) -> int:
        return self.n * self.n

    @property
    def m(self) -> int:
        return self.q * self.q


def _grid_successor(n: int, s: int, a: int) -> int:
    r, c = divmod(s, n)
    dr, dc = MOVES[a]
    nr, nc = r + dr, c + dc
    if 0 <= nr < n and 0 <= nc < n:
        return nr * n + nc
    return s


def _trap_free_depth(spec: GridSpec) -> int:
    """BFS distance from every state to the target along trap-free paths."""
    n, t = spec.n, spec.target
    preds: dict[int, set[int]] = {s: set() for s in range(spec.n_states)}
    for s in range(spec.n_states):
        if s == t:
            continue
        for a in range(4):
            preds[_grid_successor(n, s, a)].add(s)
    dist = {t: 0}
    queue = deque([t])
    while queue:
        v = queue.popleft()
        for u in preds[v]:
            # intermediate states on the path to the target must avoid traps
            if u not in dist and (v == t or v not in spec.traps):
                dist[u] = dist[v] + 1
                queue.append(u)
    missing = [s for s in range(spec.n_states) if s != t and s not in dist]
    if missing:
        raise ValueError(f"states without a trap-free path to the target: {missing[:5]}")
    return max(d for s, d in dist.items() if s != t)


def trap_free_path_bound(spec: GridSpec) -> int:
    """The verified bound on trap-free path lengths to the target."""
    depth = _trap_free_depth(spec)
    if spec.path_bound is not None:
        if spec.path_bound < depth:
            raise ValueError(f"declared path bound {spec.path_bound} below BFS depth {depth}")
        return spec.path_bound
    return depth


def build_prop3_grid(spec: GridSpec) -> FiniteMdp:
    """Deterministic four-action grid MDP with successor-entry rewards.

    Moving into the target pays its reward, moving into a trap pays its
    penalty, all other transitions pay zero; the target is absorbing with a
    zero-reward self-loop.  Construction fails if any state lacks a trap-free
    path to the target within the declared bound.
    """
    trap_free_path_bound(spec)
    n, S, t = spec.n, spec.n_states, spec.target
    P = np.zeros((S, 4, S))
    r = np.zeros((S, 4, S))
    for s in range(S):
        for a in range(4):
            nxt = t if s == t else _grid_successor(n, s, a)
            P[s, a, nxt] = 1.0
            if s != t:
                if nxt == t:
                    r[s, a, nxt] = spec.target_reward
                elif nxt in spec.traps:
                    r[s, a, nxt] = -spec.traps[nxt]
    return FiniteMdp(P, r, spec.gamma, absorbing=frozenset({t}))


def square_partition(n: int, q: int, n_states: int | None = None) -> StatePartition:
    """Partition an ``n x n`` grid into ``q x q`` equal square components."""
    if n % q != 0:
        raise ValueError("q must divide n")
    side = n // q
    comps = []
    for br in range(q):
        for bc in range(q):
            comps.append(
                tuple(
                    r * n + c
                    for r in range(br * side, (br + 1) * side)
                    for c in range(bc * side, (bc + 1) * side)
                )
            )
    return StatePartition(tuple(comps), n_states or n * n)


# ---------------------------------------------------------------------------
# wall-separated 16 x 16 policy-evaluation grid


def build_wall_grid_16():
    """16x16 grid with four 7x7 cores separated by a wall strip.

    Rows and columns 7 and 8 are walls; remaining cells form four dynamically
    closed cores.  Moves succeed with probability 0.8 and slip sideways with
    probability 0.1 each, stay is deterministic, bumping a wall leaves the
    agent in place.  Entering the absorbing goal at (15, 15) pays +1.

    Returns ``(mdp, partition, policy)`` with the uniform five-action policy.
    """
    n = 16
    wall = {7, 8}
    cells = [(r, c) for r in range(n) for c in range(n) if r not in wall and c not in wall]
    index = {cell: i for i, cell in enumerate(cells)}
    S = len(cells)
    goal = index[(15, 15)]

    def move(cell, a):
        dr, dc = MOVES[a]
        nxt = (cell[0] + dr, cell[1] + dc)
        return nxt if nxt in index else cell

    P = np.zeros((S, 5, S))
    r = np.zeros((S, 5, S))
    slip = {UP: (LEFT, RIGHT), RIGHT: (UP, DOWN), DOWN: (RIGHT, LEFT), LEFT: (DOWN, UP)}
    for cell, s in index.items():
        for a in range(5):
            if s == goal:
                P[s, a, s] = 1.0
                continue
            if a == STAY:
                outcomes = [(a, 1.0)]
            else:
                l, rr_ = slip[a]
                outcomes = [(a, 0.8), (l, 0.1), (rr_, 0.1)]
            for direction, p in outcomes:
                t = index[move(cell, direction)]
                P[s, a, t] += p
                if t == goal:
                    r[s, a, t] = 1.0
    partition = StatePartition(
        tuple(
            tuple(
                index[(rr0, cc0)]
                for rr0 in rows
                for cc0 in cols
                if (rr0, cc0) in index
            )
            for rows in (range(0, 7), range(9, 16))
            for cols in (range(0, 7), range(9, 16))
        ),
        S,
    )
    policy = np.full((S, 5), 1.0 / 5.0)
    return FiniteMdp(P, r, 0.99, absorbing=frozenset({goal})), partition, policy


def wall_grid_operator(mdp: FiniteMdp, sp: StatePartition, policy: np.ndarray) -> OperatorInstance:
    """Finite-sum policy-evaluation operator split across the closed cores.

    Component ``i`` is ``m`` times the core-``i`` slice of the evaluation
    backup (zero off the core), so the component mean recovers the full
    operator.  The stochastic oracle replaces each core state's backup with a
    single sampled action/successor pair.
    """
    S = mdp.n_states
    m = sp.m
    gamma = mdp.gamma
    R = mdp.expected_reward()

    # flatten (action, successor) outcome distributions per state for sampling
    max_out = 0
    outs = []
    for s in range(S):
        entries = []
        for a in range(mdp.n_actions):
            for t in np.nonzero(mdp.P[s, a])[0]:
                entries.append((policy[s, a] * mdp.P[s, a, t], int(t), mdp.r[s, a, t]))
        outs.append(entries)
        max_out = max(max_out, len(entries))
    cum = np.ones((S, max_out))
    succ = np.zeros((S, max_out), dtype=np.int64)
    rew = np.zeros((S, max_out))
    for s, entries in enumerate(outs):
        probs = np.array([e[0] for e in entries])
        cum[s, : len(entries)] = np.cumsum(probs)
        cum[s, len(entries) - 1 :] = np.inf  # final bucket absorbs rounding slack
        succ[s, : len(entries)] = [e[1] for e in entries]
        rew[s, : len(entries)] = [e[2] for e in entries]
    cores = [np.array(c, dtype=np.int64) for c in sp.components]

    P_pi = np.einsum("sa,sat->st", policy, mdp.P)
    R_pi = np.einsum("sa,sa->s", policy, R)

    def mean_apply(V):
        return R_pi + gamma * (P_pi @ V)

    def oracle_sample(i, V, rng):
        core = cores[i]
        u = rng.random(core.size)
        idx = (u[:, None] > cum[core]).sum(axis=1)
        sample = rew[core, idx] + gamma * V[succ[core, idx]]
        out = np.zeros(S)
        out[core] = m * sample
        return out

    v_max = 1.0 / (1.0 - gamma)
    props = OperatorProperties(
        beta=gamma,
        lipschitz=m * gamma,
        noise_bound=m * (1.0 + gamma * v_max) + v_max,
    )
    return OperatorInstance(
        dimension=S,
        mean_apply=mean_apply,
        num_components=m,
        oracle_sample=oracle_sample,
        properties=props,
        error_norm="linf",
    )


# ---------------------------------------------------------------------------
# 24 x 24 navigation task with boundary traps


def _rect_partition(n: int, part_rows: int, part_cols: int) -> StatePartition:
    rh, cw = n // part_rows, n // part_cols
    comps = []
    for br in range(part_rows):
        for bc in range(part_cols):
            comps.append(
                tuple(
                    r * n + c
                    for r in range(br * rh, (br + 1) * rh)
                    for c in range(bc * cw, (bc + 1) * cw)
                )
            )
    return StatePartition(tuple(comps), n * n)


def build_minigrid_24(m: int):
    """24x24 tabular navigation grid with traps hugging the partition boundaries.

    Deterministic four-action moves, goal in the far corner (absorbing, +1 on
    entry), per-step cost 0.01 and a 1.0 penalty for stepping onto a trap.
    Two traps sit next to every internal partition boundary segment.  Returns
    ``(mdp, partition-with-successor-halos, agent_graph)``.
    """
    if m not in (2, 4, 8):
        raise ValueError("m must be one of 2, 4, 8")
    n = 24
    layout = {2: (1, 2), 4: (2, 2), 8: (2, 4)}[m]
    part_rows, part_cols = layout
    sp = _rect_partition(n, part_rows, part_cols)
    goal = n * n - 1

    traps: set[int] = set()
    rh, cw = n // part_rows, n // part_cols
    # vertical boundaries: traps on the left side of each internal column cut
    for bc in range(1, part_cols):
        col = bc * cw - 1
        for br in range(part_rows):
            rows = range(br * rh, (br + 1) * rh)
            for frac in (1, 2):
                traps.add((rows.start + frac * rh // 3) * n + col)
    # horizontal boundaries: traps above each internal row cut
    for br in range(1, part_rows):
        row = br * rh - 1
        for bc in range(part_cols):
            cols = range(bc * cw, (bc + 1) * cw)
            for frac in (1, 2):
                traps.add(row * n + cols.start + frac * cw // 3)
    traps.discard(goal)

    S = n * n
    P = np.zeros((S, 4, S))
    r = np.zeros((S, 4, S))
    for s in range(S):
        for a in range(4):
            if s == goal:
                P[s, a, s] = 1.0
                continue
            t = _grid_successor(n, s, a)
            P[s, a, t] = 1.0
            reward = -0.01
            if t == goal:
                reward += 1.0
            elif t in traps:
                reward -= 1.0
            r[s, a, t] = reward
    mdp = FiniteMdp(P, r, 0.95, absorbing=frozenset({goal}))
    sp = build_successor_halos(mdp, sp)

    # agents communicate with spatially adjacent regions
    edges = []
    for br in range(part_rows):
        for bc in range(part_cols):
            node = br * part_cols + bc
            if bc + 1 < part_cols:
                edges.append((node, node + 1))
            if br + 1 < part_rows:
                edges.append((node, node + part_cols))
    graph = AgentGraph.from_edges(m, edges)
    return mdp, sp, graph


# ---------------------------------------------------------------------------
# decentralized tabular Q-learning


@dataclass(frozen=True)
class QLearningConfig:
    total_steps: int = 160_000
    local_updates_per_round: int = 4
    epsilon: float = 0.1
    stepsize: float = 0.1
    seed: int = 0


STRICT = "strict"
CORE_HALO = "core_halo"


def canonical_return(mdp: FiniteMdp, Q: np.ndarray, start_states=None) -> float:
    """Exact discounted return of the greedy policy under a fixed start distribution.

    Defaults to the uniform distribution over non-absorbing states; the value
    is obtained by exact policy evaluation, not rollouts.
    """
    S, A = mdp.n_states, mdp.n_actions
    greedy = Q.argmax(axis=1)
    policy = np.zeros((S, A))
    policy[np.arange(S), greedy] = 1.0
    V = solve_v_pi(mdp, policy)
    if start_states is None:
        start_states = [s for s in range(S) if s not in mdp.absorbing]
    return float(np.mean(V[list(start_states)]))


def run_decentralized_qlearning(
    mdp: FiniteMdp, sp: StatePartition, gossip, method: str, cfg: QLearningConfig
) -> np.ndarray:
    """Train per-agent Q-tables with core-local sampling and periodic gossip.

    Each agent samples transitions from states in its own core with an
    epsilon-greedy behavior policy, updates only its core rows, and every
    ``local_updates_per_round`` steps the full table copies are mixed with the
    gossip matrix.  ``total_steps`` counts each agent's local updates (agents
    act in parallel), so per-core-state sampling density grows with the agent
    count and offsets the 1/m dilution of each update under gossip averaging.  ``strict`` truncates backup continuation to within-core
    successors; ``core_halo`` backs up through halo values read from the
    agent's table copy.  Returns the averaged table ``mean_i Q_i``.
    """
    if method not in (STRICT, CORE_HALO):
        raise ValueError(f"unknown method {method!r}")
    m = sp.m
    S, A = mdp.n_states, mdp.n_actions
    W = gossip.weights if hasattr(gossip, "weights") else np.asarray(gossip)
    if W.shape != (m, m):
        raise ValueError("gossip matrix size must match the partition")

    # deterministic environment tables
    succ = np.zeros((S, A), dtype=np.int64)
    rew = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            t = int(np.argmax(mdp.P[s, a]))
            if mdp.P[s, a, t] != 1.0:
                raise ValueError("decentralized Q-learning requires deterministic transitions")
            succ[s, a] = t
            rew[s, a] = mdp.r[s, a, t]

    owner = sp.owner()
    core_size = len(sp.components[0])
    if any(len(c) != core_size for c in sp.components):
        raise ValueError("cores must have equal size")
    cores = np.array([list(c) for c in sp.components], dtype=np.int64)

    ss = np.random.SeedSequence(cfg.seed)
    rngs = [np.random.default_rng(c) for c in ss.spawn(m)]

    H = cfg.local_updates_per_round
    rounds = cfg.total_steps // H
    gamma, alpha, eps = mdp.gamma, cfg.stepsize, cfg.epsilon
    agents = np.arange(m)
    not_absorbing = np.array([s not in mdp.absorbing for s in range(S)])

    Q = np.zeros((m, S, A))
    for _ in range(rounds):
        s_idx = np.stack([r.integers(0, core_size, size=H) for r in rngs])
        coin = np.stack([r.random(size=H) for r in rngs])
        a_rand = np.stack([r.integers(0, A, size=H) for r in rngs])
        for h in range(H):
            s = cores[agents, s_idx[:, h]]
            q_rows = Q[agents, s]
            a = np.where(coin[:, h] < eps, a_rand[:, h], q_rows.argmax(axis=1))
            s2 = succ[s, a]
            cont = Q[agents, s2].max(axis=1) * not_absorbing[s2]
            if method == STRICT:
                cont = cont * (owner[s2] == agents)
            target = rew[s, a] + gamma * cont
            Q[agents, s, a] += alpha * (target - Q[agents, s, a])
        Q = np.tensordot(W, Q, axes=1)
    return Q.mean(axis=0)
