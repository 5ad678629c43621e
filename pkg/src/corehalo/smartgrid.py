"""IEEE bus-network energy management and the three tabular SARSA variants.

Each bus owns a battery and a local Q-table; the neighborhood overload penalty
couples buses through the grid topology, so a strict (own-state-only)
observation drops exactly the boundary context the halo variant keeps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "BusNetwork",
    "ProfileSet",
    "GridState",
    "StepResult",
    "SarsaConfig",
    "SarsaResult",
    "CENTRALIZED",
    "STRICT",
    "CORE_HALO",
    "load_profiles",
    "load_bus_network",
    "step_cost",
    "run_sarsa",
    "write_results_csv",
]

CENTRALIZED = "centralized"
STRICT = "strict"
CORE_HALO = "core_halo"
_VARIANTS = (CENTRALIZED, STRICT, CORE_HALO)

SLOTS = 12
DEMAND_NOISE = (0.8, 1.0, 1.2)  # triangular (low, mode, high), multiplicative
PRICE_NOISE = (0.9, 1.0, 1.1)


@dataclass(frozen=True)
class ProfileSet:
    """Cyclic 12-slot base price and demand profiles for one system."""

    price: np.ndarray
    demand: np.ndarray

    def __post_init__(self):
        price = np.asarray(self.price, dtype=float)
        demand = np.asarray(self.demand, dtype=float)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "demand", demand)
        if price.shape != (SLOTS,) or demand.shape != (SLOTS,):
            raise ValueError(f"profiles must have {SLOTS} slots")
        if np.any(price <= 0) or np.any(demand <= 0):
            raise ValueError("profiles must be positive")


@dataclass(frozen=True)
class BusNetwork:
    """Bus adjacency with battery capacities, overload thresholds and penalty.

    ``neighbors[i]`` lists the other buses adjacent to ``i`` (0-indexed,
    excluding ``i``); the overload neighborhood ``N(i)`` used in the cost
    includes bus ``i`` itself.
    """

    name: str
    neighbors: tuple[tuple[int, ...], ...]
    capacities: np.ndarray
    thresholds: np.ndarray
    lam: float
    cost_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.neighbors)
        caps = np.asarray(self.capacities, dtype=float)
        thr = np.asarray(self.thresholds, dtype=float)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "thresholds", thr)
        if caps.shape != (n,) or thr.shape != (n,):
            raise ValueError("capacities and thresholds must have one entry per bus")
        if self.lam < 0:
            raise ValueError("penalty must be nonnegative")
        M = np.eye(n)
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if not 0 <= j < n or j == i:
                    raise ValueError(f"bad neighbor {j} of bus {i}")
                if i not in self.neighbors[j]:
                    raise ValueError(f"adjacency not symmetric at ({i}, {j})")
                M[i, j] = 1.0
        object.__setattr__(self, "cost_matrix", M)
        self.cost_matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.neighbors)


@dataclass
class GridState:
    """Time slot plus per-bus battery levels in [0, 1]."""

    slot: int
    levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if np.any(self.levels < 0) or np.any(self.levels > 1):
            raise ValueError("battery levels must lie in [0, 1]")
        if not 0 <= self.slot < SLOTS:
            raise ValueError("slot out of range")


@dataclass(frozen=True)
class StepResult:
    costs: np.ndarray
    reward: float
    violations: int
    prices: np.ndarray
    demands: np.ndarray
    next_state: GridState


def _data(name: str) -> dict:
    with resources.files("corehalo.data").joinpath(name).open() as fh:
        return json.load(fh)


def load_profiles(system: str) -> ProfileSet:
    doc = _data("profiles.json")
    if system not in doc:
        raise KeyError(f"unknown system {system!r}")
    return ProfileSet(np.array(doc[system]["price"]), np.array(doc[system]["demand"]))


def load_bus_network(
    system: str,
    capacity: float = 5.0,
    lam: float = 10.0,
    threshold_factor: float = 1.1,
    profiles: ProfileSet | None = None,
) -> BusNetwork:
    """Checked-in topology plus declared per-bus parameters.

    The overload threshold defaults to ``threshold_factor`` times the
    neighborhood base demand at the peak slot, so zero-action operation never
    violates but aggressive charging at peak hours does.
    """
    doc = _data("ieee_topologies.json")
    if system not in doc:
        raise KeyError(f"unknown system {system!r}")
    if profiles is None:
        profiles = load_profiles(system)
    table = doc[system]
    n = len(table)
    neighbors = tuple(
        tuple(j - 1 for j in table[str(i + 1)]) for i in range(n)
    )
    peak = float(profiles.demand.max())
    sizes = np.array([1 + len(nb) for nb in neighbors], dtype=float)
    thresholds = threshold_factor * sizes * peak
    return BusNetwork(system, neighbors, np.full(n, capacity), thresholds, lam)


def _costs(net: BusNetwork, prices, demands, actions):
    """Exact cost formula shared by the public step and the training loop."""
    inject = actions * net.capacities + demands
    neighborhood = net.cost_matrix @ inject
    over = neighborhood - net.thresholds
    costs = prices * inject + net.lam * np.maximum(over, 0.0)
    return costs, int(np.count_nonzero(over > 0))


def step_cost(
    net: BusNetwork, profiles: ProfileSet, state: GridState, actions, rng
) -> StepResult:
    """One environment transition with sampled multiplicative noise."""
    actions = np.asarray(actions, dtype=float)
    if np.any(np.abs(actions) > 1.0):
        raise ValueError("actions must lie in [-1, 1]")
    demands = profiles.demand[state.slot] * rng.triangular(*DEMAND_NOISE, size=net.n)
    prices = profiles.price[state.slot] * rng.triangular(*PRICE_NOISE, size=net.n)
    costs, violations = _costs(net, prices, demands, actions)
    nxt = GridState((state.slot + 1) % SLOTS, np.clip(state.levels + actions, 0.0, 1.0))
    return StepResult(costs, float(-costs.sum()), violations, prices, demands, nxt)


def reward_bound(net: BusNetwork, profiles: ProfileSet) -> float:
    """Computed per-step bound on |r_t| from profile and noise ranges."""
    p_max = float(profiles.price.max()) * PRICE_NOISE[2]
    l_max = float(profiles.demand.max()) * DEMAND_NOISE[2]
    per_bus = net.cost_matrix.sum(axis=1) * (net.capacities.max() + l_max)
    return float(np.sum(p_max * (net.capacities + l_max) + net.lam * per_bus))


@dataclass(frozen=True)
class SarsaConfig:
    episodes: int = 250
    train_steps: int = 3600
    eval_steps: int = 360
    epsilon: float = 0.1
    runs: int = 5
    stepsize: float = 0.1
    gamma: float = 0.95
    seed: int = 0
    battery_bins: int = 5
    actions: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    final_episodes: int = 20
    capacity: float = 5.0
    lam: float = 10.0
    threshold_factor: float = 1.1


@dataclass
class SarsaResult:
    system: str
    variant: str
    mean_costs: np.ndarray  # per run, averaged over the final episodes
    mean_violations: np.ndarray
    curves: np.ndarray  # (runs, episodes, 2): eval cost and violations per episode


def _neighbor_mean_matrix(net: BusNetwork) -> np.ndarray:
    M = net.cost_matrix - np.eye(net.n)
    return M / M.sum(axis=1, keepdims=True)


def _make_obs(variant: str, net: BusNetwork, B: int):
    """Observation indexer for the tabular variants; joint key for centralized."""
    Mn = _neighbor_mean_matrix(net)

    def bins(e):
        return np.minimum((e * B).astype(np.int64), B - 1)

    if variant == STRICT:
        return (lambda h, e: h * B + bins(e)), SLOTS * B
    if variant == CORE_HALO:
        def obs(h, e):
            return (h * B + bins(e)) * B + bins(Mn @ e)
        return obs, SLOTS * B * B
    raise ValueError(variant)


def _run_episode_tabular(Q, obs_fn, net, profiles, rng, steps, eps, alpha, gamma, grid, bound, train):
    """One episode of vectorized per-bus SARSA; returns (total cost, violations)."""
    n = net.n
    agents = np.arange(n)
    A = len(grid)
    dn = profiles.demand[np.arange(steps) % SLOTS, None] * rng.triangular(*DEMAND_NOISE, size=(steps, n))
    pn = profiles.price[np.arange(steps) % SLOTS, None] * rng.triangular(*PRICE_NOISE, size=(steps, n))
    coin = rng.random((steps + 1, n))
    arand = rng.integers(0, A, size=(steps + 1, n))
    e = np.full(n, 0.5)
    obs = obs_fn(0, e)
    greedy = Q[agents, obs].argmax(axis=1)
    a = np.where(coin[0] < eps, arand[0], greedy) if eps > 0 else greedy
    total_cost = 0.0
    total_viol = 0
    for t in range(steps):
        act = grid[a]
        costs, viol = _costs(net, pn[t], dn[t], act)
        r = -costs.sum()
        assert abs(r) <= bound
        total_cost += costs.sum()
        total_viol += viol
        e2 = np.clip(e + act, 0.0, 1.0)
        obs2 = obs_fn((t + 1) % SLOTS, e2)
        greedy = Q[agents, obs2].argmax(axis=1)
        a2 = np.where(coin[t + 1] < eps, arand[t + 1], greedy) if eps > 0 else greedy
        if train:
            old = Q[agents, obs, a]
            Q[agents, obs, a] = old + alpha * (r + gamma * Q[agents, obs2, a2] - old)
        obs, a, e = obs2, a2, e2
    return total_cost, total_viol


def _run_episode_centralized(Qd, net, profiles, rng, steps, eps, alpha, gamma, grid, bound, train, B):
    """Joint-state SARSA: one dict-backed table keyed by (slot, battery bins).

    Every bus has an action head attached to the joint discretized state, so
    the table grows like B^n and exhibits the sparse-exploration behaviour of
    a fully centralized learner.
    """
    n = net.n
    agents = np.arange(n)
    A = len(grid)
    dn = profiles.demand[np.arange(steps) % SLOTS, None] * rng.triangular(*DEMAND_NOISE, size=(steps, n))
    pn = profiles.price[np.arange(steps) % SLOTS, None] * rng.triangular(*PRICE_NOISE, size=(steps, n))
    coin = rng.random((steps + 1, n))
    arand = rng.integers(0, A, size=(steps + 1, n))

    def rows(h, e):
        key = (h, tuple(np.minimum((e * B).astype(np.int64), B - 1)))
        row = Qd.get(key)
        if row is None:
            row = np.zeros((n, A))
            Qd[key] = row
        return row

    e = np.full(n, 0.5)
    row = rows(0, e)
    greedy = row.argmax(axis=1)
    a = np.where(coin[0] < eps, arand[0], greedy) if eps > 0 else greedy
    total_cost = 0.0
    total_viol = 0
    for t in range(steps):
        act = grid[a]
        costs, viol = _costs(net, pn[t], dn[t], act)
        r = -costs.sum()
        assert abs(r) <= bound
        total_cost += costs.sum()
        total_viol += viol
        e2 = np.clip(e + act, 0.0, 1.0)
        row2 = rows((t + 1) % SLOTS, e2)
        greedy = row2.argmax(axis=1)
        a2 = np.where(coin[t + 1] < eps, arand[t + 1], greedy) if eps > 0 else greedy
        if train:
            old = row[agents, a]
            row[agents, a] = old + alpha * (r + gamma * row2[agents, a2] - old)
        row, a, e = row2, a2, e2
    return total_cost, total_viol


def run_sarsa(system: str, variant: str, cfg: SarsaConfig = SarsaConfig()) -> SarsaResult:
    """Train and evaluate one SARSA variant over independent runs.

    Each episode trains with epsilon-greedy exploration, then evaluates the
    greedy policy (epsilon = 0, no updates) for ``eval_steps``; per-run
    metrics average the evaluation cost and violation count over the final
    episodes.
    """
    if variant not in _VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    profiles = load_profiles(system)
    net = load_bus_network(system, cfg.capacity, cfg.lam, cfg.threshold_factor, profiles)
    grid = np.array(cfg.actions)
    bound = reward_bound(net, profiles) + 1e-9
    B = cfg.battery_bins

    curves = np.zeros((cfg.runs, cfg.episodes, 2))
    run_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.runs)
    for run, seed in enumerate(run_seeds):
        train_rng, eval_rng = (np.random.default_rng(s) for s in seed.spawn(2))
        if variant == CENTRALIZED:
            Qd: dict = {}
        else:
            obs_fn, n_obs = _make_obs(variant, net, B)
            Q = np.zeros((net.n, n_obs, len(grid)))
        for ep in range(cfg.episodes):
            if variant == CENTRALIZED:
                _run_episode_centralized(
                    Qd, net, profiles, train_rng, cfg.train_steps, cfg.epsilon,
                    cfg.stepsize, cfg.gamma, grid, bound, True, B,
                )
                cost, viol = _run_episode_centralized(
                    Qd, net, profiles, eval_rng, cfg.eval_steps, 0.0,
                    cfg.stepsize, cfg.gamma, grid, bound, False, B,
                )
            else:
                _run_episode_tabular(
                    Q, obs_fn, net, profiles, train_rng, cfg.train_steps, cfg.epsilon,
                    cfg.stepsize, cfg.gamma, grid, bound, True,
                )
                cost, viol = _run_episode_tabular(
                    Q, obs_fn, net, profiles, eval_rng, cfg.eval_steps, 0.0,
                    cfg.stepsize, cfg.gamma, grid, bound, False,
                )
            curves[run, ep] = (cost, viol)
    tail = curves[:, -cfg.final_episodes :, :]
    return SarsaResult(system, variant, tail[:, :, 0].mean(axis=1), tail[:, :, 1].mean(axis=1), curves)


def write_results_csv(path, results: list[SarsaResult]):
    """``(system, variant, run, mean_cost, mean_violations)`` rows."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "variant", "run", "mean_cost", "mean_violations"])
        for res in results:
            for run, (c, v) in enumerate(zip(res.mean_costs, res.mean_violations)):
                writer.writerow([res.system, res.variant, run, format(c, ".17g"), format(v, ".17g")])
