"""Partition invariants, core-halo decompositions and the lifted/averaged maps."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corehalo.operators import (
    CompatibilityCounterexample,
    CoreHaloDecomposition,
    OperatorInstance,
    Partition,
    PartitionViolation,
    StrictOperator,
    averaged_apply,
    check_compatibility,
    lifted_apply,
    strict_apply,
    validate_partition,
)


def linear_operator(A, b):
    return OperatorInstance(dimension=len(b), mean_apply=lambda x: A @ x + b)


@st.composite
def random_partition(draw):
    """A valid partition together with its dimension."""
    d = draw(st.integers(min_value=1, max_value=12))
    labels = draw(st.lists(st.integers(0, 3), min_size=d, max_size=d))
    blocks = {}
    for idx, lab in enumerate(labels):
        blocks.setdefault(lab, []).append(idx)
    return tuple(tuple(b) for b in blocks.values()), d


class TestValidatePartition:
    @given(random_partition())
    def test_valid_partitions_pass(self, part):
        blocks, d = part
        assert validate_partition(blocks, d) is None

    def test_overlap_detected(self):
        v = validate_partition([(0, 1), (1, 2)], 3)
        assert isinstance(v, PartitionViolation)
        assert v.kind == "overlap"
        assert 1 in v.indices

    def test_uncovered_detected(self):
        v = validate_partition([(0,), (2,)], 3)
        assert v.kind == "uncovered"
        assert v.indices == (1,)

    def test_out_of_range_detected(self):
        assert validate_partition([(0, 5)], 3).kind == "out_of_range"

    def test_empty_block_detected(self):
        assert validate_partition([(0, 1, 2), ()], 3).kind == "empty_block"

    @given(random_partition(), st.integers(0, 11), st.integers(0, 11))
    @settings(max_examples=50)
    def test_moving_an_index_breaks_partition(self, part, src, dst):
        """Duplicating one coordinate into another block always violates."""
        blocks, d = part
        if len(blocks) < 2:
            return
        lists = [list(b) for b in blocks]
        src_block = lists[src % len(lists)]
        dst_block = lists[dst % len(lists)]
        if src_block is dst_block:
            return
        dst_block.append(src_block[0])
        v = validate_partition([tuple(b) for b in lists], d)
        assert v is not None and v.kind == "overlap"


class TestPartition:
    def test_blocks_sorted_and_owner(self):
        p = Partition(((3, 1), (0, 2)), 4)
        assert p.blocks == ((1, 3), (0, 2))
        assert p.owner().tolist() == [1, 0, 1, 0]
        assert p.m == 2

    def test_invalid_raises(self):
        with pytest.raises(ValueError, match="invalid partition"):
            Partition(((0,), (0, 1)), 2)


class TestCoreHaloDecomposition:
    def test_halo_must_contain_core(self):
        p = Partition(((0, 1), (2, 3)), 4)
        with pytest.raises(ValueError, match="does not contain core"):
            CoreHaloDecomposition(p, ((0,), (2, 3)))

    def test_halo_count_must_match(self):
        p = Partition(((0, 1), (2, 3)), 4)
        with pytest.raises(ValueError, match="one halo per core"):
            CoreHaloDecomposition(p, ((0, 1),))

    def test_halo_out_of_range(self):
        p = Partition(((0, 1), (2, 3)), 4)
        with pytest.raises(ValueError, match="out of range"):
            CoreHaloDecomposition(p, ((0, 1, 7), (2, 3)))

    def test_json_roundtrip(self):
        p = Partition(((0, 2), (1, 3)), 4)
        ch = CoreHaloDecomposition(p, ((0, 1, 2), (1, 2, 3)))
        back = CoreHaloDecomposition.from_json(ch.to_json())
        assert back == ch
        doc = json.loads(ch.to_json())
        assert doc["dimension"] == 4
        assert doc["cores"] == [[0, 2], [1, 3]]


def tridiagonal_instance(d=6, seed=0):
    """A contraction whose component j reads only coordinates j-1, j, j+1."""
    rng = np.random.default_rng(seed)
    A = np.zeros((d, d))
    for j in range(d):
        for k in (j - 1, j, j + 1):
            if 0 <= k < d:
                A[j, k] = rng.random()
    A *= 0.9 / np.abs(A).sum(axis=1).max()
    b = rng.random(d)
    op = linear_operator(A, b)
    p = Partition((tuple(range(0, d // 2)), tuple(range(d // 2, d))), d)
    halos = []
    for core in p.blocks:
        halo = set(core)
        for j in core:
            halo.update(k for k in (j - 1, j + 1) if 0 <= k < d)
        halos.append(tuple(sorted(halo)))
    return op, CoreHaloDecomposition(p, tuple(halos)), A, b


class TestCompatibility:
    def test_sufficient_halo_passes(self):
        op, ch, _, _ = tridiagonal_instance()
        assert check_compatibility(op, ch, trials=50) is None

    def test_insufficient_halo_detected(self):
        op, ch, _, _ = tridiagonal_instance()
        bare = CoreHaloDecomposition(ch.partition, ch.cores)  # halos = cores
        cex = check_compatibility(op, bare, trials=50)
        assert isinstance(cex, CompatibilityCounterexample)
        assert cex.deviation > 1e-10
        # the counterexample pair really agrees on the halo
        halo = np.array(bare.halos[cex.agent])
        assert np.array_equal(cex.x[halo], cex.x_prime[halo])

    def test_dimension_mismatch_raises(self):
        op, _, _, _ = tridiagonal_instance()
        p = Partition(((0,), (1,)), 2)
        ch = CoreHaloDecomposition(p, ((0,), (1,)))
        with pytest.raises(ValueError, match="dimension"):
            check_compatibility(op, ch)


class TestLiftedApply:
    def test_identity_off_core_is_bit_exact(self):
        op, ch, _, _ = tridiagonal_instance()
        rng = np.random.default_rng(1)
        x = rng.standard_normal(op.dimension)
        for i in range(ch.m):
            out = lifted_apply(op, ch, i, x)
            off = sorted(set(range(op.dimension)) - set(ch.cores[i]))
            assert np.array_equal(out[off], x[off])

    def test_core_block_matches_mean_under_compatibility(self):
        op, ch, A, b = tridiagonal_instance()
        rng = np.random.default_rng(2)
        x = rng.standard_normal(op.dimension)
        for i in range(ch.m):
            core = list(ch.cores[i])
            out = lifted_apply(op, ch, i, x)
            assert np.allclose(out[core], (A @ x + b)[core], atol=1e-14)

    def test_reads_only_halo(self):
        op, ch, _, _ = tridiagonal_instance()
        rng = np.random.default_rng(3)
        x = rng.standard_normal(op.dimension)
        y = x.copy()
        off_halo = sorted(set(range(op.dimension)) - set(ch.halos[0]))
        y[off_halo] = rng.standard_normal(len(off_halo))
        core = list(ch.cores[0])
        assert np.array_equal(
            lifted_apply(op, ch, 0, x)[core], lifted_apply(op, ch, 0, y)[core]
        )

    def test_block_apply_override_used(self):
        p = Partition(((0,), (1,)), 2)
        ch = CoreHaloDecomposition(p, ((0, 1), (0, 1)))
        op = OperatorInstance(
            dimension=2,
            mean_apply=lambda x: x * 2.0,
            block_apply=lambda i, x: np.array([42.0]),
        )
        out = lifted_apply(op, ch, 0, np.array([1.0, 5.0]))
        assert out.tolist() == [42.0, 5.0]

    def test_bad_agent_index(self):
        op, ch, _, _ = tridiagonal_instance()
        with pytest.raises(IndexError):
            lifted_apply(op, ch, 9, np.zeros(op.dimension))


class TestAveragedApply:
    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_relaxation_identity(self, seed):
        op, ch, A, b = tridiagonal_instance()
        x = np.random.default_rng(seed).standard_normal(op.dimension)
        lhs = averaged_apply(op, ch, x)
        rhs = (1.0 - 1.0 / ch.m) * x + (A @ x + b) / ch.m
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_same_fixed_point(self):
        op, ch, A, b = tridiagonal_instance()
        x_star = np.linalg.solve(np.eye(op.dimension) - A, b)
        assert np.allclose(averaged_apply(op, ch, x_star), x_star, atol=1e-10)


class TestStrictOperator:
    def test_blockwise_application(self):
        p = Partition(((0, 1), (2,)), 3)
        s = StrictOperator(p, (lambda u: u * 2, lambda u: u + 1))
        out = strict_apply(s, np.array([1.0, 2.0, 3.0]))
        assert out.tolist() == [2.0, 4.0, 4.0]

    def test_map_count_checked(self):
        p = Partition(((0, 1), (2,)), 3)
        with pytest.raises(ValueError, match="one local map per block"):
            StrictOperator(p, (lambda u: u,))
