"""Finite MDPs: Bellman backups, closure checks, lifted backups and deviations."""

import numpy as np
import pytest

from corehalo.gridworlds import GridSpec, build_prop3_grid, square_partition
from corehalo.mdp import (
    FiniteMdp,
    StatePartition,
    averaged_bellman,
    bellman_optimality,
    build_successor_halos,
    check_block_closure,
    check_halo_closure,
    dev,
    lifted_bellman,
    policy_evaluation_operator,
    prop3_lower_bound,
    q_decomposition,
    q_operator_instance,
    solve_q_star,
    solve_v_pi,
    strict_bellman,
)
from corehalo.operators import averaged_apply, check_compatibility


def two_room_mdp(gamma=0.9, leak=0.0):
    """Four states in two 2-state rooms; ``leak`` is cross-room mass from state 1."""
    S, A = 4, 2
    P = np.zeros((S, A, S))
    r = np.zeros((S, A, S))
    for s in range(S):
        room = (s // 2) * 2
        P[s, 0, room] = 1.0
        P[s, 1, room + 1] = 1.0
        r[s, 1, room + 1] = 1.0 if room == 2 else 0.0
    if leak > 0:
        P[1, 1] = 0.0
        P[1, 1, 1] = 1.0 - leak
        P[1, 1, 2] = leak
        r[1, 1, 1] = 0.0
    return FiniteMdp(P, r, gamma)


class TestFiniteMdp:
    def test_row_sum_checked(self):
        P = np.zeros((2, 1, 2))
        P[:, :, 0] = 0.5
        with pytest.raises(ValueError, match="sum to one"):
            FiniteMdp(P, np.zeros((2, 1, 2)), 0.9)

    def test_absorbing_checked(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = 1.0
        P[1, 0, 1] = 1.0
        r = np.zeros((2, 1, 2))
        FiniteMdp(P, r, 0.9, absorbing=frozenset({1}))
        with pytest.raises(ValueError, match="self-loop"):
            FiniteMdp(P, r, 0.9, absorbing=frozenset({0}))
        r2 = r.copy()
        r2[1, 0, 1] = 1.0
        with pytest.raises(ValueError, match="zero reward"):
            FiniteMdp(P, r2, 0.9, absorbing=frozenset({1}))

    def test_gamma_range(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError, match="gamma"):
            FiniteMdp(P, np.zeros((1, 1, 1)), 1.0)

    def test_expected_reward(self):
        mdp = two_room_mdp()
        R = mdp.expected_reward()
        assert R[0, 1] == 0.0  # room-zero transitions pay nothing
        assert R[2, 1] == 1.0  # entering state 3 pays one

    def test_triplet_roundtrip(self, tmp_path):
        spec = GridSpec(n=4, q=2, gamma=0.9, traps={5: 0.5})
        mdp = build_prop3_grid(spec)
        path = tmp_path / "mdp.txt"
        mdp.save_triplets(path)
        back = FiniteMdp.load_triplets(path)
        assert np.array_equal(back.P, mdp.P)
        assert np.array_equal(back.r, mdp.r)
        assert back.gamma == mdp.gamma
        assert back.absorbing == mdp.absorbing


class TestStatePartition:
    def test_halo_must_cover_component(self):
        with pytest.raises(ValueError, match="halo must contain"):
            StatePartition(((0, 1), (2, 3)), 4, ((0,), (2, 3)))

    def test_owner(self):
        sp = StatePartition(((0, 2), (1, 3)), 4)
        assert sp.owner().tolist() == [0, 1, 0, 1]


class TestBellman:
    def test_solve_q_star_is_fixed_point(self):
        mdp = two_room_mdp()
        Q = solve_q_star(mdp)
        assert np.max(np.abs(bellman_optimality(mdp, Q) - Q)) <= 1e-11

    def test_contraction_property(self):
        mdp = two_room_mdp()
        rng = np.random.default_rng(0)
        for _ in range(20):
            Q1 = rng.standard_normal((4, 2))
            Q2 = rng.standard_normal((4, 2))
            gap = np.max(np.abs(bellman_optimality(mdp, Q1) - bellman_optimality(mdp, Q2)))
            assert gap <= mdp.gamma * np.max(np.abs(Q1 - Q2)) + 1e-12

    def test_known_two_room_values(self):
        # greedy path: always action 1; from room 1, Q*(s,1)=1/(1-gamma)... compute
        mdp = two_room_mdp(gamma=0.5)
        Q = solve_q_star(mdp)
        # state 3 action 1: reward 1 then stays at 3 forever earning 1 each step
        assert Q[3, 1] == pytest.approx(1.0 / (1.0 - 0.5), abs=1e-9)
        # state 2 action 1 -> state 3, value gamma * V(3) + r=1
        assert Q[2, 1] == pytest.approx(1.0 + 0.5 * 2.0, abs=1e-9)


class TestClosure:
    def test_closed_partition_passes(self):
        mdp = two_room_mdp()
        sp = StatePartition(((0, 1), (2, 3)), 4)
        assert check_block_closure(mdp, sp) is None

    def test_leak_detected_with_witness(self):
        mdp = two_room_mdp(leak=0.1)
        sp = StatePartition(((0, 1), (2, 3)), 4)
        cex = check_block_closure(mdp, sp)
        assert cex is not None
        assert (cex.state, cex.action, cex.successor) == (1, 1, 2)

    def test_successor_halos_minimal_and_closed(self):
        mdp = two_room_mdp(leak=0.1)
        sp = build_successor_halos(mdp, StatePartition(((0, 1), (2, 3)), 4))
        assert sp.halos == ((0, 1, 2), (2, 3))
        assert check_halo_closure(mdp, sp) is None

    def test_halo_closure_violation_detected(self):
        mdp = two_room_mdp(leak=0.1)
        sp = StatePartition(((0, 1), (2, 3)), 4, ((0, 1), (2, 3)))
        cex = check_halo_closure(mdp, sp)
        assert cex is not None and cex.successor == 2


class TestStrictAndLifted:
    def test_strict_equals_full_backup_when_closed(self):
        mdp = two_room_mdp()
        sp = StatePartition(((0, 1), (2, 3)), 4)
        Q = np.random.default_rng(1).standard_normal((4, 2))
        assert np.allclose(strict_bellman(mdp, sp, Q), bellman_optimality(mdp, Q), atol=1e-13)

    def test_strict_truncates_leaked_continuation(self):
        mdp = two_room_mdp(leak=0.5)
        sp = StatePartition(((0, 1), (2, 3)), 4)
        Q = np.full((4, 2), 10.0)
        full = bellman_optimality(mdp, Q)
        strict = strict_bellman(mdp, sp, Q)
        # only the leaking entry differs, by gamma * leak * maxQ
        diff = full - strict
        assert diff[1, 1] == pytest.approx(0.9 * 0.5 * 10.0, abs=1e-12)
        diff[1, 1] = 0.0
        assert np.max(np.abs(diff)) <= 1e-12

    def test_lifted_requires_halo_closure(self):
        mdp = two_room_mdp(leak=0.1)
        sp = StatePartition(((0, 1), (2, 3)), 4, ((0, 1), (2, 3)))
        with pytest.raises(ValueError, match="halo closure"):
            lifted_bellman(mdp, sp, 0, np.zeros((4, 2)))

    def test_lifted_identity_off_core(self):
        mdp = two_room_mdp(leak=0.1)
        sp = build_successor_halos(mdp, StatePartition(((0, 1), (2, 3)), 4))
        Q = np.random.default_rng(2).standard_normal((4, 2))
        out = lifted_bellman(mdp, sp, 0, Q)
        assert np.array_equal(out[[2, 3]], Q[[2, 3]])
        assert np.allclose(out[[0, 1]], bellman_optimality(mdp, Q)[[0, 1]], atol=1e-13)

    def test_averaged_relaxation_identity(self):
        mdp = two_room_mdp(leak=0.1)
        sp = build_successor_halos(mdp, StatePartition(((0, 1), (2, 3)), 4))
        Q = np.random.default_rng(3).standard_normal((4, 2))
        lhs = averaged_bellman(mdp, sp, Q)
        rhs = 0.5 * Q + 0.5 * bellman_optimality(mdp, Q)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


class TestDevAndBound:
    def test_dev_zero_at_fixed_point_of_same_operator(self):
        mdp = two_room_mdp()
        Q = solve_q_star(mdp)
        assert dev(mdp, lambda q: bellman_optimality(mdp, q), Q) <= 1e-20

    def test_dev_positive_for_strict_on_open_partition(self):
        spec = GridSpec(n=4, q=2, gamma=0.9)
        mdp = build_prop3_grid(spec)
        sp = square_partition(4, 2)
        Q = solve_q_star(mdp)
        assert dev(mdp, lambda q: strict_bellman(mdp, sp, q), Q) > 0

    def test_prop3_lower_bound_values(self):
        # N=16, m=4: boundary count max(4*(2-1)-2, 0) = 2
        assert prop3_lower_bound(16, 4, 0.9, 1.0, 3) == pytest.approx(
            2.0 / 16.0 * 0.9**6
        )
        assert prop3_lower_bound(16, 1, 0.9, 1.0, 3) == 0.0
        with pytest.raises(ValueError, match="perfect square"):
            prop3_lower_bound(15, 4, 0.9, 1.0, 3)


class TestPolicyEvaluation:
    def test_solve_v_pi_matches_iteration(self):
        mdp = two_room_mdp()
        policy = np.full((4, 2), 0.5)
        V = solve_v_pi(mdp, policy)
        V_it = np.zeros(4)
        for _ in range(600):
            V_it = policy_evaluation_operator(mdp, policy, V_it)
        assert np.allclose(V, V_it, atol=1e-9)


class TestQDecomposition:
    def test_compatible_operator_instance(self):
        mdp = two_room_mdp(leak=0.1)
        sp = build_successor_halos(mdp, StatePartition(((0, 1), (2, 3)), 4))
        ch = q_decomposition(sp, mdp.n_actions)
        op = q_operator_instance(mdp)
        assert ch.dimension == op.dimension == 8
        assert check_compatibility(op, ch, trials=50) is None
        # flattened averaged map agrees with the table-level averaged backup
        Q = np.random.default_rng(4).standard_normal((4, 2))
        lhs = averaged_apply(op, ch, Q.ravel()).reshape(4, 2)
        assert np.max(np.abs(lhs - averaged_bellman(mdp, sp, Q))) <= 1e-12
