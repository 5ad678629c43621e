"""Random-walk graphs, the damped fixed point, predecessor halos and bias diameters."""

import numpy as np
import pytest
import scipy.sparse as sp

from corehalo.operators import check_compatibility
from corehalo.pagerank import (
    RankGraph,
    SbmSpec,
    block_partition,
    build_predecessor_halos,
    delta_i,
    delta_i_bruteforce,
    empirical_rate,
    load_edge_list,
    pagerank_operator,
    pagerank_operator_instance,
    run_pagerank_experiment,
    sbm_graph,
    solve_pagerank,
    strict_pagerank,
    strict_pagerank_operator,
)
from corehalo.engine import RunRecord, run_strict_iteration, RunConfig, CORE_HALO_PARALLEL


class TestRankGraph:
    def test_row_sums_enforced(self):
        P = sp.csr_matrix(np.array([[0.5, 0.4], [0.5, 0.5]]))
        with pytest.raises(ValueError, match="sum to one"):
            RankGraph(P, 0.85)

    def test_dangling_rows_repaired(self):
        adj = np.array([[0.0, 1.0], [0.0, 0.0]])  # node 1 dangles
        g = RankGraph.from_adjacency(adj, 0.85)
        P = g.P.toarray()
        assert P[1].tolist() == [0.5, 0.5]
        assert P[0].tolist() == [0.0, 1.0]

    def test_alpha_and_query_validated(self):
        P = sp.csr_matrix(np.eye(2))
        with pytest.raises(ValueError, match="alpha"):
            RankGraph(P, 1.0)
        with pytest.raises(ValueError, match="query"):
            RankGraph(P, 0.85, query=5)


class TestSbmGraph:
    def test_deterministic_given_seed(self):
        spec = SbmSpec(block_sizes=(10, 10), seed=3)
        a = sbm_graph(spec).P.toarray()
        b = sbm_graph(spec).P.toarray()
        assert np.array_equal(a, b)

    def test_block_density_ordering(self):
        spec = SbmSpec(block_sizes=(40, 40), p_in=0.3, p_out=0.02, seed=0)
        g = sbm_graph(spec)
        # support density (not normalized mass) is higher within blocks
        A = (g.P.toarray() > 0).astype(float)
        within = A[:40, :40].sum() + A[40:, 40:].sum()
        across = A[:40, 40:].sum() + A[40:, :40].sum()
        assert within > 3 * across


class TestLoadEdgeList:
    def test_parse_with_comments(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("# a comment\n0 1\n1 2\n2 0\n")
        g = load_edge_list(path, 0.85)
        assert g.n == 3
        assert g.P[0, 1] == 1.0


class TestFixedPoint:
    def test_residual_below_tolerance(self):
        g = sbm_graph(SbmSpec(block_sizes=(20, 20), seed=1))
        x = solve_pagerank(g, tol=1e-12)
        assert np.sum(np.abs(pagerank_operator(g, x) - x)) <= 1e-12

    def test_mass_conserved(self):
        g = sbm_graph(SbmSpec(block_sizes=(20, 20), seed=1))
        x = solve_pagerank(g)
        # fixed point of the personalized walk sums to one
        assert float(x.sum()) == pytest.approx(1.0, abs=1e-10)

    def test_contraction_modulus(self):
        g = sbm_graph(SbmSpec(block_sizes=(15, 15), seed=2))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x, y = rng.random(g.n), rng.random(g.n)
            gap = np.sum(np.abs(pagerank_operator(g, x) - pagerank_operator(g, y)))
            assert gap <= g.alpha * np.sum(np.abs(x - y)) + 1e-12


class TestPredecessorHalos:
    def test_compatibility_by_sparsity(self):
        spec = SbmSpec(block_sizes=(15, 15, 15), seed=4)
        g = sbm_graph(spec)
        p = block_partition(spec.block_sizes)
        ch = build_predecessor_halos(g, p)
        op = pagerank_operator_instance(g)
        assert check_compatibility(op, ch, trials=30) is None

    def test_halos_contain_exactly_predecessors(self):
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = adj[0, 2] = 1.0
        g = RankGraph.from_adjacency(adj, 0.85)
        p = block_partition((2, 2))
        ch = build_predecessor_halos(g, p)
        # core {2,3} has predecessor 0 (edge 0 -> 2)
        assert ch.halos[1] == (0, 2, 3)


class TestStrictPagerank:
    def test_drops_cross_block_mass(self):
        spec = SbmSpec(block_sizes=(10, 10), seed=5)
        g = sbm_graph(spec)
        p = block_partition(spec.block_sizes)
        x = np.random.default_rng(1).random(g.n)
        full = pagerank_operator(g, x)
        strict = strict_pagerank(g, p, x)
        assert not np.allclose(full, strict)
        # with all cross-block entries removed the two maps agree
        P = g.P.toarray()
        P[:10, 10:] = 0.0
        P[10:, :10] = 0.0
        g2 = RankGraph.from_adjacency(P, g.alpha)  # renormalizes rows
        strict2 = strict_pagerank(g2, p, x)
        assert np.allclose(pagerank_operator(g2, x), strict2, atol=1e-12)

    def test_operator_matches_function(self):
        spec = SbmSpec(block_sizes=(10, 10), seed=6)
        g = sbm_graph(spec)
        p = block_partition(spec.block_sizes)
        s = strict_pagerank_operator(g, p)
        x = np.random.default_rng(2).random(g.n)
        from corehalo.operators import strict_apply

        assert np.allclose(strict_apply(s, x), strict_pagerank(g, p, x), atol=1e-13)


class TestDelta:
    @pytest.mark.parametrize("seed", range(25))
    def test_closed_form_matches_bruteforce(self, seed):
        """Exhaustive oracle agreement on >= 20 random graphs with n <= 8."""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        adj = (rng.random((n, n)) < 0.5).astype(float)
        np.fill_diagonal(adj, 0.0)
        g = RankGraph.from_adjacency(adj, float(rng.uniform(0.5, 0.95)))
        split = int(rng.integers(1, n))
        p = block_partition((split, n - split))
        for i in range(p.m):
            assert delta_i(g, p, i) == pytest.approx(
                delta_i_bruteforce(g, p, i), abs=1e-12
            )

    def test_full_block_has_zero_diameter(self):
        g = sbm_graph(SbmSpec(block_sizes=(6,), seed=0))
        p = block_partition((6,))
        assert delta_i(g, p, 0) == 0.0


class TestEmpiricalRate:
    def test_exact_geometric_sequence(self):
        rec = RunRecord()
        for k in range(0, 200, 10):
            rec.append(k, 0.9**k)
        assert empirical_rate(rec, k_min=10) == pytest.approx(0.9, rel=1e-12)

    def test_floor_excludes_plateau(self):
        rec = RunRecord()
        for k in range(0, 100, 10):
            rec.append(k, max(0.5**k, 1e-8))
        # without a floor the plateau would bias the rate toward one
        assert empirical_rate(rec, k_min=0, floor=1e-7) == pytest.approx(0.5, rel=1e-9)

    def test_insufficient_points(self):
        rec = RunRecord()
        rec.append(0, 1.0)
        with pytest.raises(ValueError, match="not enough points"):
            empirical_rate(rec)


@pytest.fixture(scope="module")
def small_result():
    spec = SbmSpec(block_sizes=(20, 20, 20, 20), seed=0)
    return run_pagerank_experiment(spec, iters=150, single_agent_iters=1200)


class TestExperiment:
    def test_core_halo_converges(self, small_result):
        assert small_result.records["core_halo"].opt_error[-1] <= 1e-10

    def test_strict_plateaus_above(self, small_result):
        strict_final = small_result.records["strict"].opt_error[-1]
        ch_final = small_result.records["core_halo"].opt_error[-1]
        assert strict_final > 1e3 * ch_final

    def test_rates_near_theory(self, small_result):
        assert small_result.rates["core_halo"] == pytest.approx(0.85, rel=0.1)
        assert small_result.rates["single_agent"] == pytest.approx(
            1.0 - 0.15 / 4.0, rel=0.1
        )

    def test_block_errors_dominate_half_deltas(self, small_result):
        for err, half in zip(small_result.block_errors, small_result.half_deltas):
            assert err >= half - 1e-12
