"""Communication graphs, Metropolis mixing matrices and stepsize conditions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AgentGraph",
    "GossipMatrix",
    "SpeedupConditionInputs",
    "SpeedupConditionReport",
    "metropolis_weights",
    "rho",
    "check_speedup_conditions",
]


@dataclass(frozen=True)
class AgentGraph:
    """Connected undirected agent graph; self-loops are implied, not stored."""

    m: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one agent")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-loops are implied and must not be listed")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i},{j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.is_connected():
            raise ValueError("graph must be connected")

    @classmethod
    def from_edges(cls, m, edges):
        return cls(m, frozenset((int(i), int(j)) for i, j in edges))

    @classmethod
    def complete(cls, m):
        return cls.from_edges(m, [(i, j) for i in range(m) for j in range(i + 1, m)])

    @classmethod
    def ring(cls, m):
        if m <= 2:
            return cls.path(m)
        return cls.from_edges(m, [(i, (i + 1) % m) for i in range(m)])

    @classmethod
    def path(cls, m):
        return cls.from_edges(m, [(i, i + 1) for i in range(m - 1)])

    @classmethod
    def grid2d(cls, rows, cols):
        edges = []
        for r in range(rows):
            for c in range(cols):
                node = r * cols + c
                if c + 1 < cols:
                    edges.append((node, node + 1))
                if r + 1 < rows:
                    edges.append((node, node + cols))
        return cls.from_edges(rows * cols, edges)

    def neighbors(self, i):
        return sorted(
            {j for a, b in self.edges for j in ((b,) if a == i else (a,) if b == i else ())}
        )

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self) -> bool:
        if self.m == 1:
            return True
        adj = {i: [] for i in range(self.m)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.m


@dataclass(frozen=True)
class GossipMatrix:
    """Symmetric doubly stochastic mixing matrix supported on the graph."""

    weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", W)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weights must be square")
        if not np.array_equal(W, W.T):
            raise ValueError("weights must be exactly symmetric")
        if np.any(W < 0):
            raise ValueError("weights must be nonnegative")
        if np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("rows must sum to one within 1e-12")
        self.weights.setflags(write=False)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def mix(self, X: np.ndarray) -> np.ndarray:
        """One gossip round ``X <- W X`` (rows indexed by agent)."""
        return self.weights @ X


def metropolis_weights(g: AgentGraph) -> GossipMatrix:
    """Metropolis mixing matrix: ``w_ij = 1/(1 + max(deg_i, deg_j))`` on edges.

    Diagonal entries absorb the remaining mass, so the matrix is symmetric,
    doubly stochastic and supported exactly on the graph plus self-loops.
    """
    m = g.m
    W = np.zeros((m, m))
    deg = g.degrees()
    for i, j in g.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, j] = w
        W[j, i] = w
    for i in range(m):
        W[i, i] = 1.0 - (W[i].sum() - W[i, i])
    # mirror exactly so W == W.T bit-for-bit
    W = np.triu(W) + np.triu(W, 1).T
    return GossipMatrix(W)


def rho(W: GossipMatrix, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Spectral norm of ``W - J`` via power iteration with a fixed start vector."""
    m = W.m
    if m == 1:
        return 0.0
    M = W.weights - np.full((m, m), 1.0 / m)
    # deterministic start, mean-free so it lies in the range of I - J
    v = np.cos(np.arange(m) + 0.5)
    v -= v.mean()
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = np.zeros(m)
        v[0], v[-1] = 1.0, -1.0
        nv = np.linalg.norm(v)
    v /= nv
    est = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        # iterate on M^2 so +/- eigenvalue pairs of equal magnitude still settle
        w = M @ w
        nw2 = np.linalg.norm(w)
        if nw2 == 0.0:
            return float(nw)
        new_est = np.sqrt(nw2)
        v = w / nw2
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return float(new_est)
        est = new_est
    return float(est)


@dataclass(frozen=True)
class SpeedupConditionInputs:
    """Inputs to the sufficient stepsize/network conditions for SA vs DSA."""

    alpha1: float
    alpha2: float
    beta: float
    lipschitz: float
    noise_bound: float
    m: int
    rho: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        for name in ("alpha1", "alpha2", "lipschitz", "noise_bound", "rho"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.m < 1:
            raise ValueError("m must be positive")


@dataclass(frozen=True)
class SpeedupConditionReport:
    sa_ok: bool
    dsa_stepsize_ok: bool
    dsa_first_ok: bool
    dsa_second_ok: bool
    rho_ok: bool
    sa_coefficient: float
    dsa_coefficient: float
    alpha1_max: float
    rho_sq_bound: float


def check_speedup_conditions(inputs: SpeedupConditionInputs) -> SpeedupConditionReport:
    """Evaluate the sufficient single-agent/decentralized inequalities literally.

    ``sa_ok`` checks the admissible interval for the single-agent stepsize,
    ``dsa_stepsize_ok`` the two decentralized stepsize inequalities and
    ``rho_ok`` the three-way bound on the squared network parameter.  The
    returned coefficients are the per-iteration contraction factors of the
    squared-error and Lyapunov recursions; the conditions are sufficient, not
    necessary, so only literal pass/fail status is reported.
    """
    a1, a2 = inputs.alpha1, inputs.alpha2
    beta, L, m, r = inputs.beta, inputs.lipschitz, inputs.m, inputs.rho
    one_minus = 1.0 - beta

    alpha1_max = min(1.0, 2.0 * one_minus / (one_minus**2 + 2.0 * L**2))
    sa_ok = 0.0 < a1 <= alpha1_max
    sa_coefficient = (1.0 - a1 * one_minus) ** 2 + 2.0 * a1**2 * L**2

    first = (1.0 - a2 * one_minus / 2.0) ** 2 + 4.0 * a2**2 * L**2 / m
    second = (
        4.0 * a2**2 * L**2 / 3.0
        + 2.0 * a2**3 * one_minus * (8.0 - 7.0 * a2 * one_minus) * L**2
        / (m * (4.0 - 3.0 * a2 * one_minus) ** 2)
    )
    dsa_first_ok = 0.0 < a2 < 1.0 and first < 1.0
    dsa_second_ok = second < 1.0
    dsa_stepsize_ok = dsa_first_ok and dsa_second_ok
    # Lyapunov recursion coefficient: sum of the four stepsize terms
    dsa_coefficient = first + second

    denom = 4.0 - 3.0 * a2 * one_minus
    rho_sq_bound = min(
        one_minus**2
        * (8.0 - 7.0 * a2 * one_minus)
        * (8.0 - 5.0 * a2 * one_minus)
        / (64.0 * denom**2 * ((L + beta) ** 2 + L**2)),
        a2**2 * L**2 / (6.0 * ((1.0 - a2 + a2 * L) ** 2 + a2**2 * L**2)),
        a2 * one_minus * (8.0 - 7.0 * a2 * one_minus) / (8.0 * m * denom**2),
    )
    rho_ok = r**2 <= rho_sq_bound

    return SpeedupConditionReport(
        sa_ok=sa_ok,
        dsa_stepsize_ok=dsa_stepsize_ok,
        dsa_first_ok=dsa_first_ok,
        dsa_second_ok=dsa_second_ok,
        rho_ok=rho_ok,
        sa_coefficient=float(sa_coefficient),
        dsa_coefficient=float(dsa_coefficient),
        alpha1_max=float(alpha1_max),
        rho_sq_bound=float(rho_sq_bound),
    )
