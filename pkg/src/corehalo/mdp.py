"""Finite MDPs and Bellman machinery: global, strict, local and lifted backups."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .operators import CoreHaloDecomposition, OperatorInstance, OperatorProperties, Partition

__all__ = [
    "FiniteMdp",
    "StatePartition",
    "ClosureCounterexample",
    "bellman_optimality",
    "solve_q_star",
    "check_block_closure",
    "check_halo_closure",
    "build_successor_halos",
    "strict_bellman",
    "lifted_bellman",
    "averaged_bellman",
    "dev",
    "prop3_lower_bound",
    "policy_evaluation_operator",
    "solve_v_pi",
    "q_decomposition",
    "q_operator_instance",
]


@dataclass(frozen=True)
class FiniteMdp:
    """Tabular MDP with dense transition tensor ``P[s, a, s']`` and rewards ``r[s, a, s']``."""

    P: np.ndarray
    r: np.ndarray
    gamma: float
    absorbing: frozenset[int] = frozenset()

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError("P must have shape (S, A, S)")
        if r.shape != P.shape:
            raise ValueError("r must match P's shape")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to one within 1e-12")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        for s in self.absorbing:
            for a in range(self.n_actions):
                if P[s, a, s] != 1.0:
                    raise ValueError(f"absorbing state {s} must self-loop")
                if r[s, a, s] != 0.0:
                    raise ValueError(f"absorbing state {s} must yield zero reward")
        self.P.setflags(write=False)
        self.r.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def expected_reward(self) -> np.ndarray:
        """``R[s, a] = sum_s' P r``."""
        return np.einsum("sat,sat->sa", self.P, self.r)

    def save_triplets(self, path):
        """Persist as a sparse triplet file: header plus ``s a s' prob reward`` lines."""
        path = Path(path)
        lines = [
            f"# states {self.n_states} actions {self.n_actions} gamma {self.gamma!r}",
            "# absorbing " + " ".join(str(s) for s in sorted(self.absorbing)),
        ]
        S, A = self.n_states, self.n_actions
        for s in range(S):
            for a in range(A):
                for t in np.nonzero(self.P[s, a])[0]:
                    lines.append(
                        f"{s} {a} {t} {float(self.P[s, a, t])!r} {float(self.r[s, a, t])!r}"
                    )
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load_triplets(cls, path) -> "FiniteMdp":
        lines = Path(path).read_text().splitlines()
        head = lines[0].split()
        S, A, gamma = int(head[2]), int(head[4]), float(head[6])
        absorbing = frozenset(int(t) for t in lines[1].split()[2:])
        P = np.zeros((S, A, S))
        r = np.zeros((S, A, S))
        for line in lines[2:]:
            if not line.strip():
                continue
            s, a, t, p, rw = line.split()
            P[int(s), int(a), int(t)] = float(p)
            r[int(s), int(a), int(t)] = float(rw)
        return cls(P, r, gamma, absorbing)


@dataclass(frozen=True)
class StatePartition:
    """State components ``C_i`` with optional state halos ``S_i >= C_i``."""

    components: tuple[tuple[int, ...], ...]
    n_states: int
    halos: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        comps = tuple(tuple(sorted(int(s) for s in c)) for c in self.components)
        object.__setattr__(self, "components", comps)
        # component invariants are exactly the partition invariants
        Partition(comps, self.n_states)
        if self.halos is not None:
            halos = tuple(tuple(sorted(int(s) for s in h)) for h in self.halos)
            object.__setattr__(self, "halos", halos)
            if len(halos) != len(comps):
                raise ValueError("one halo per component required")
            for c, h in zip(comps, halos):
                if not set(h).issuperset(c):
                    raise ValueError("halo must contain its component")

    @property
    def m(self) -> int:
        return len(self.components)

    def owner(self) -> np.ndarray:
        out = np.empty(self.n_states, dtype=np.int64)
        for i, comp in enumerate(self.components):
            out[list(comp)] = i
        return out


@dataclass(frozen=True)
class ClosureCounterexample:
    state: int
    action: int
    successor: int


def bellman_optimality(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    """Exact optimality backup ``(HQ)(s,a) = sum_s' P (r + gamma max_b Q(s',b))``."""
    V = Q.max(axis=1)
    return mdp.expected_reward() + mdp.gamma * (mdp.P @ V)


def solve_q_star(mdp: FiniteMdp, tol: float = 1e-12) -> np.ndarray:
    """Value iteration until the sup-norm error from the fixed point is below ``tol``."""
    gamma = mdp.gamma
    stop = tol * (1.0 - gamma) / gamma
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    while True:
        nxt = bellman_optimality(mdp, Q)
        if np.max(np.abs(nxt - Q)) <= stop:
            return nxt
        Q = nxt


def check_block_closure(mdp: FiniteMdp, sp: StatePartition):
    """Scan the transition support for the first cross-component transition."""
    owner = sp.owner()
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for t in np.nonzero(mdp.P[s, a])[0]:
                if owner[t] != owner[s]:
                    return ClosureCounterexample(s, a, int(t))
    return None


def check_halo_closure(mdp: FiniteMdp, sp: StatePartition):
    """Check that every one-step successor of a core state stays inside its halo."""
    if sp.halos is None:
        raise ValueError("partition carries no halos")
    for comp, halo in zip(sp.components, sp.halos):
        halo_set = set(halo)
        for s in comp:
            for a in range(mdp.n_actions):
                for t in np.nonzero(mdp.P[s, a])[0]:
                    if int(t) not in halo_set:
                        return ClosureCounterexample(s, a, int(t))
    return None


def build_successor_halos(mdp: FiniteMdp, sp: StatePartition) -> StatePartition:
    """Minimal halos: each component plus its one-step successor support."""
    halos = []
    for comp in sp.components:
        halo = set(comp)
        for s in comp:
            for a in range(mdp.n_actions):
                halo.update(int(t) for t in np.nonzero(mdp.P[s, a])[0])
        halos.append(tuple(sorted(halo)))
    return StatePartition(sp.components, sp.n_states, tuple(halos))


def strict_bellman(mdp: FiniteMdp, sp: StatePartition, Q: np.ndarray) -> np.ndarray:
    """Backup that truncates continuation mass outside the owner's component.

    Rewards are kept for all successors; only the continuation value is
    restricted to successors inside ``C_{i(s)}``, so on dynamically closed
    partitions this coincides with the full optimality backup.
    """
    owner = sp.owner()
    V = Q.max(axis=1)
    same = (owner[:, None] == owner[None, :]).astype(float)  # same[s, s']
    cont = np.einsum("sat,st,t->sa", mdp.P, same, V)
    return mdp.expected_reward() + mdp.gamma * cont


def lifted_bellman(
    mdp: FiniteMdp, sp: StatePartition, i: int, Q: np.ndarray, verify: bool = True
) -> np.ndarray:
    """Agent ``i``'s halo-informed local backup on its core; identity elsewhere."""
    if sp.halos is None:
        raise ValueError("partition carries no halos")
    if verify:
        bad = check_halo_closure(mdp, sp)
        if bad is not None:
            raise ValueError(
                f"halo closure violated at (s={bad.state}, a={bad.action}, s'={bad.successor})"
            )
    comp = list(sp.components[i])
    out = Q.copy()
    # under halo closure the full backup row reads only halo values
    out[comp] = bellman_optimality(mdp, Q)[comp]
    return out


def averaged_bellman(mdp: FiniteMdp, sp: StatePartition, Q: np.ndarray) -> np.ndarray:
    """Average of the lifted local backups, ``(1 - 1/m) Q + H(Q)/m`` under closure."""
    bad = check_halo_closure(mdp, sp)
    if bad is not None:
        raise ValueError(
            f"halo closure violated at (s={bad.state}, a={bad.action}, s'={bad.successor})"
        )
    acc = np.zeros_like(Q)
    for i in range(sp.m):
        acc += lifted_bellman(mdp, sp, i, Q, verify=False)
    return acc / sp.m


def dev(mdp: FiniteMdp, operator, Q_star: np.ndarray) -> float:
    """Mean-squared fixed-point residual of ``Q*`` under a candidate operator."""
    resid = operator(Q_star) - Q_star
    return float(np.sum(resid**2) / resid.size)


def prop3_lower_bound(N: int, m: int, gamma: float, R_T: float, D_T: int) -> float:
    """Boundary-count lower bound on the strict-backup deviation for square grids."""
    n = np.sqrt(N)
    q = np.sqrt(m)
    if n != int(n):
        raise ValueError("N must be a perfect square")
    if q != int(q):
        raise ValueError("m must be a perfect square")
    return max(n * (q - 1.0) - 2.0, 0.0) / N * gamma ** (2 * D_T) * R_T**2


def policy_evaluation_operator(mdp: FiniteMdp, policy: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``(T_pi V)(s) = sum_a pi(a|s) sum_s' P (r + gamma V(s'))``."""
    backup = mdp.expected_reward() + mdp.gamma * (mdp.P @ V)
    return np.einsum("sa,sa->s", policy, backup)


def solve_v_pi(mdp: FiniteMdp, policy: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Exact policy evaluation by solving the linear system ``(I - gamma P_pi) V = R_pi``."""
    P_pi = np.einsum("sa,sat->st", policy, mdp.P)
    R_pi = np.einsum("sa,sa->s", policy, mdp.expected_reward())
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)
    resid = policy_evaluation_operator(mdp, policy, V) - V
    if np.max(np.abs(resid)) > tol * 10:
        raise RuntimeError("policy evaluation residual above tolerance")
    return V


def q_index(sp: StatePartition, n_actions: int, states) -> tuple[int, ...]:
    """Flattened ``(s, a)`` coordinate block induced by a set of states."""
    return tuple(s * n_actions + a for s in states for a in range(n_actions))


def q_decomposition(sp: StatePartition, n_actions: int) -> CoreHaloDecomposition:
    """Coordinate-level core-halo decomposition induced by a state partition."""
    if sp.halos is None:
        raise ValueError("partition carries no halos")
    cores = tuple(q_index(sp, n_actions, c) for c in sp.components)
    halos = tuple(q_index(sp, n_actions, h) for h in sp.halos)
    part = Partition(cores, sp.n_states * n_actions)
    return CoreHaloDecomposition(part, halos)


def q_operator_instance(mdp: FiniteMdp) -> OperatorInstance:
    """The Bellman optimality operator over flattened Q-tables."""
    S, A = mdp.n_states, mdp.n_actions

    def mean_apply(x):
        return bellman_optimality(mdp, x.reshape(S, A)).ravel()

    return OperatorInstance(
        dimension=S * A,
        mean_apply=mean_apply,
        properties=OperatorProperties(beta=mdp.gamma),
        error_norm="linf",
    )
