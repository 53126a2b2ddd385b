import numpy as np
import pytest

from arealclust import (
    ConfigError,
    Partition,
    boundary_length,
    build_grid,
    leroux_precision,
    subgrid,
    total_boundary,
)


class TestBuildGrid:
    def test_single_cell(self):
        topo = build_grid(1, 1)
        assert topo.n_cells == 1
        assert topo.degrees[0] == 0
        assert topo.adjacency.nnz == 0

    def test_13x14_corner_degrees(self):
        topo = build_grid(13, 14)
        assert topo.n_cells == 182
        corners = [0, 12, 13 * 13, 13 * 14 - 1]
        assert all(topo.degrees[c] == 3 for c in corners)
        assert (topo.degrees == 3).sum() == 4

    def test_2x2_full_mutual_adjacency(self):
        topo = build_grid(2, 2)
        assert (topo.degrees == 3).all()

    def test_degree_classes(self):
        topo = build_grid(5, 7)
        vals, counts = np.unique(topo.degrees, return_counts=True)
        assert list(vals) == [3, 5, 8]
        assert counts[0] == 4                      # corners
        assert counts[1] == 2 * (5 - 2) + 2 * (7 - 2)  # edges
        assert counts[2] == (5 - 2) * (7 - 2)      # interior

    def test_symmetric_zero_diagonal(self):
        topo = build_grid(4, 6)
        W = topo.adjacency.toarray()
        assert np.array_equal(W, W.T)
        assert np.all(np.diag(W) == 0)
        assert set(np.unique(W)) <= {0.0, 1.0}

    def test_column_major_minor_diagonals_13_rows(self):
        # with 13 rows, neighbors sit exactly on minor diagonals 1, 12, 13, 14
        topo = build_grid(13, 14)
        i, j = topo.adjacency.nonzero()
        offsets = sorted(set(int(b - a) for a, b in zip(i, j) if b > a))
        assert offsets == [1, 12, 13, 14]

    def test_transposed_grid_is_isomorphic(self):
        a = build_grid(3, 5)
        b = build_grid(5, 3)
        assert sorted(a.degrees) == sorted(b.degrees)

    @pytest.mark.parametrize("rows,cols", [(0, 3), (3, 0), (-1, 2)])
    def test_rejects_bad_dimensions(self, rows, cols):
        with pytest.raises(ConfigError):
            build_grid(rows, cols)


class TestBoundaryLength:
    def test_one_cluster_everywhere_zero(self):
        topo = build_grid(3, 4)
        labels = np.zeros(12, dtype=int)
        assert all(boundary_length(topo, labels, i) == 0 for i in range(12))

    def test_1x3_split_matches_eta_exponent(self):
        # partition {1,3},{2}: per-cell boundaries 1, 2, 1 -> eta^4
        topo = build_grid(1, 3)
        labels = np.array([0, 1, 0])
        assert [boundary_length(topo, labels, i) for i in range(3)] == [1, 2, 1]
        assert total_boundary(topo, labels) == 4

    def test_l_shaped_singletons_total_six(self):
        topo = subgrid(build_grid(2, 2), [0, 1, 2])
        assert total_boundary(topo, np.array([0, 1, 2])) == 6

    def test_accepts_partition_objects(self):
        topo = build_grid(1, 3)
        part = Partition(np.array([0, 1, 0]))
        assert boundary_length(topo, part, 1) == 2

    def test_out_of_range_cell(self):
        topo = build_grid(2, 2)
        with pytest.raises(IndexError):
            boundary_length(topo, np.zeros(4, dtype=int), 4)

    def test_total_boundary_is_even(self):
        rng = np.random.default_rng(0)
        topo = build_grid(4, 5)
        for _ in range(25):
            labels = rng.integers(0, 4, size=20)
            assert total_boundary(topo, labels) % 2 == 0

    def test_invariant_under_relabeling(self):
        rng = np.random.default_rng(1)
        topo = build_grid(4, 4)
        labels = rng.integers(0, 3, size=16)
        perm = np.array([2, 0, 1])
        for i in range(16):
            assert boundary_length(topo, labels, i) == boundary_length(topo, perm[labels], i)


class TestLerouxPrecision:
    def test_zeta_zero_is_identity(self):
        topo = build_grid(3, 3)
        Q = leroux_precision(topo, 0.0).toarray()
        assert np.allclose(Q, np.eye(9))

    def test_zeta_one_is_laplacian(self):
        topo = build_grid(3, 3)
        Q = leroux_precision(topo, 1.0).toarray()
        L = np.diag(topo.degrees) - topo.adjacency.toarray()
        assert np.allclose(Q, L)

    def test_1x2_half_mixing(self):
        Q = leroux_precision(build_grid(1, 2), 0.5).toarray()
        assert np.allclose(Q, [[1.0, -0.5], [-0.5, 1.0]])

    def test_entries_formula(self):
        topo = build_grid(3, 4)
        zeta = 0.3
        Q = leroux_precision(topo, zeta).toarray()
        W = topo.adjacency.toarray()
        assert np.allclose(np.diag(Q), zeta * topo.degrees + (1 - zeta))
        off = ~np.eye(12, dtype=bool)
        assert np.allclose(Q[off], -zeta * W[off])

    @pytest.mark.parametrize("zeta", [0.0, 0.25, 0.5, 0.9, 0.999])
    def test_positive_definite_below_one(self, zeta):
        for shape in [(1, 1), (2, 3), (5, 4), (13, 14)]:
            topo = build_grid(*shape)
            w = np.linalg.eigvalsh(leroux_precision(topo, zeta).toarray())
            assert w.min() > 1e-10

    def test_zeta_one_has_single_zero_eigenvalue(self):
        topo = build_grid(3, 3)
        w = np.linalg.eigvalsh(leroux_precision(topo, 1.0).toarray())
        assert abs(w[0]) < 1e-10
        assert w[1] > 1e-10

    @pytest.mark.parametrize("zeta", [-0.1, 1.1])
    def test_rejects_out_of_range_zeta(self, zeta):
        with pytest.raises(ConfigError):
            leroux_precision(build_grid(2, 2), zeta)


class TestSubgrid:
    def test_subgrid_restricts_adjacency(self):
        topo = build_grid(2, 2)
        sub = subgrid(topo, [0, 3])  # opposite corners are still neighbors on 2x2
        assert sub.n_cells == 2
        assert sub.degrees.tolist() == [1, 1]

    def test_subgrid_validates_cells(self):
        topo = build_grid(2, 2)
        with pytest.raises(ConfigError):
            subgrid(topo, [0, 0])
        with pytest.raises(ConfigError):
            subgrid(topo, [5])

    def test_json_descriptor(self):
        d = build_grid(13, 14).to_json_dict()
        assert d == {"rows": 13, "cols": 14, "order": "column-major"}
