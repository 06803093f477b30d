import numpy as np
import pytest

from src.graphs.pa_models import MultiGraph, PAConfig, Variant, generate
from src.graphs.percolation import (
    SWEEP_COLUMNS,
    UnionFind,
    check_c2_ceiling,
    components,
    coupled_sweep,
    edge_uniforms,
    percolate,
    percolate_mask,
    scaling_study,
    sweep,
)


@pytest.fixture
def pa_graph():
    return generate(PAConfig(variant=Variant.B, m=2, delta=1.0, n=3000, seed=21))


class TestUnionFind:
    def test_union_reports_merged_sizes(self):
        uf = UnionFind(4)
        assert uf.union(0, 1) == (1, 1, 2)
        assert uf.union(1, 0) is None
        assert uf.union(2, 1) == (1, 2, 3)
        np.testing.assert_array_equal(uf.component_sizes(), [3, 1])


class TestPercolateMask:
    """Bond retention from shared per-edge uniforms."""

    def test_pi_zero_keeps_nothing(self, pa_graph):
        _, mask = percolate_mask(pa_graph, 0.0, seed=1)
        assert not mask.any()

    def test_pi_one_keeps_everything(self, pa_graph):
        _, mask = percolate_mask(pa_graph, 1.0, seed=1)
        assert mask.all()

    def test_masks_are_nested(self, pa_graph):
        """Coupled masks at pi1 < pi2 satisfy mask(pi1) within mask(pi2)."""
        _, low = percolate_mask(pa_graph, 0.2, seed=4)
        _, high = percolate_mask(pa_graph, 0.6, seed=4)
        assert not (low & ~high).any()

    def test_retention_rate(self, pa_graph):
        _, mask = percolate_mask(pa_graph, 0.3, seed=2)
        se = np.sqrt(0.3 * 0.7 / mask.size)
        assert abs(mask.mean() - 0.3) < 4 * se

    def test_pi_out_of_range(self, pa_graph):
        with pytest.raises(ValueError):
            percolate_mask(pa_graph, 1.5, seed=0)


class TestComponents:
    def test_empty_mask_gives_singletons(self, cycle4):
        sizes = components(cycle4, np.zeros(4, dtype=bool))
        np.testing.assert_array_equal(sizes, [1, 1, 1, 1])

    def test_full_mask_on_connected_graph(self, cycle4):
        sizes = components(cycle4, np.ones(4, dtype=bool))
        np.testing.assert_array_equal(sizes, [4])

    def test_path_with_middle_edge_removed(self):
        path = MultiGraph.from_edges(3, [(0, 1), (1, 2)])
        sizes = components(path, np.array([True, False]))
        np.testing.assert_array_equal(sizes, [2, 1])

    def test_self_loops_never_merge(self):
        graph = MultiGraph.from_edges(2, [(0, 0), (1, 1)])
        sizes = components(graph, np.ones(2, dtype=bool))
        np.testing.assert_array_equal(sizes, [1, 1])

    def test_sizes_partition_vertices(self, pa_graph):
        _, mask = percolate_mask(pa_graph, 0.1, seed=3)
        assert components(pa_graph, mask).sum() == pa_graph.n_vertices

    def test_mask_length_checked(self, cycle4):
        with pytest.raises(ValueError):
            components(cycle4, np.ones(3, dtype=bool))


class TestCoupledSweep:
    """One union-find pass over the sorted uniforms."""

    def test_matches_independent_thresholding(self, pa_graph):
        grid = [0.0, 0.03, 0.05, 0.1, 0.3, 1.0]
        uniforms = edge_uniforms(pa_graph, seed=6)
        result = coupled_sweep(pa_graph, uniforms, grid)
        for g, pi in enumerate(grid):
            outcome = percolate(pa_graph, pi, seed=6)
            assert result["c1"][g] == outcome.component_sizes[0]
            second = (
                outcome.component_sizes[1]
                if len(outcome.component_sizes) > 1
                else 0
            )
            assert result["c2"][g] == second
            assert result["retained"][g] == outcome.retained_edges

    def test_unsorted_grid_rejected(self, pa_graph):
        uniforms = edge_uniforms(pa_graph, seed=0)
        with pytest.raises(ValueError):
            coupled_sweep(pa_graph, uniforms, [0.5, 0.1])

    def test_equal_second_component(self, two_triangles):
        result = coupled_sweep(two_triangles, np.full(6, 0.5), [1.0])
        assert result["c1"][0] == result["c2"][0] == 3


class TestPercolate:
    def test_fractions(self, pa_graph):
        outcome = percolate(pa_graph, 0.5, seed=2)
        assert 0 <= outcome.c2_frac <= outcome.c1_frac <= 1
        assert outcome.component_sizes.sum() == pa_graph.n_vertices


class TestSweep:
    """Replicated coupled sweeps."""

    def test_grid_endpoints(self):
        config = PAConfig(variant=Variant.B, m=2, delta=1.0, n=400)
        table = sweep(config, [0.0, 1.0], replicas=3, seed=1)
        np.testing.assert_allclose(table.c1_frac[:, 0], 1 / 400)
        # m = 2 graphs of model (b) are connected
        np.testing.assert_allclose(table.c1_frac[:, 1], 1.0)

    def test_monotone_in_pi(self):
        config = PAConfig(variant=Variant.A, m=2, delta=0.0, n=1000)
        grid = np.linspace(0, 1, 21)
        table = sweep(config, grid, replicas=5, seed=3)
        assert table.monotonicity_violations() == 0
        assert (np.diff(table.c1_frac, axis=1) >= 0).all()

    def test_reproducible_across_workers(self):
        """The table depends on the seed, not on the worker count."""
        config = PAConfig(variant=Variant.B, m=2, delta=1.0, n=500)
        serial = sweep(config, [0.05, 0.3], replicas=4, seed=9, workers=1)
        pooled = sweep(config, [0.05, 0.3], replicas=4, seed=9, workers=2)
        np.testing.assert_array_equal(serial.c1_frac, pooled.c1_frac)
        np.testing.assert_array_equal(serial.c2_frac, pooled.c2_frac)

    def test_records_follow_csv_columns(self):
        config = PAConfig(variant=Variant.D, m=2, delta=1.0, n=200)
        records = sweep(config, [0.1, 0.2], replicas=2, seed=0).records()
        assert [list(r) for r in records] == [SWEEP_COLUMNS] * 2
        assert [r["pi"] for r in records] == [0.1, 0.2]
        assert records[0]["variant"] == "d"

    def test_bad_inputs(self):
        config = PAConfig(m=2, delta=1.0, n=50)
        with pytest.raises(ValueError):
            sweep(config, [], replicas=1, seed=0)
        with pytest.raises(ValueError):
            sweep(config, [0.3, 0.1], replicas=1, seed=0)
        with pytest.raises(ValueError):
            sweep(config, [0.1], replicas=0, seed=0)

    def test_transition_straddled(self):
        """Well below pi_c there is no giant; well above there is one."""
        config = PAConfig(variant=Variant.B, m=2, delta=1.0, n=20_000)
        table = sweep(config, [0.02, 0.3], replicas=3, seed=7)
        means = table.summary()["c1_mean"].tolist()
        assert means[0] < 0.01
        assert means[1] > 0.05
        assert check_c2_ceiling(table) == []

    def test_c2_ceiling_flags_rows(self):
        config = PAConfig(variant=Variant.B, m=2, delta=1.0, n=100)
        table = sweep(config, [0.0, 1.0], replicas=2, seed=0)
        assert check_c2_ceiling(table, ceiling=0.005) == [0.0]


class TestScalingStudy:
    def test_rows_per_size(self):
        config = PAConfig(variant=Variant.B, m=2, delta=-1.0, n=100)
        rows = scaling_study(config, 0.5, [200, 400], replicas=3, seed=1)
        assert [row["n"] for row in rows] == [200, 400]
        for row in rows:
            assert 0 < row["c1_mean"] <= 1
            assert row["c1_se"] == pytest.approx(row["c1_sd"] / np.sqrt(3))

    def test_giant_persists_for_negative_delta(self):
        """C1/n stays bounded away from 0 as n grows when delta <= 0."""
        config = PAConfig(variant=Variant.B, m=2, delta=-1.0, n=100)
        rows = scaling_study(
            config, 0.3, [2000, 8000, 32_000], replicas=2, seed=5
        )
        means = [row["c1_mean"] for row in rows]

        assert min(means) > 0.02
        assert means[-1] > 0.5 * means[0]
