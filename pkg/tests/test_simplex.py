import numpy as np
import pytest

from softagg import (
    DegenerateDataError,
    ScoreEmbedding,
    SimplexVertices,
    SynthSpec,
    TooManyInvalidRowsError,
    WeightMatrix,
    generate_model,
    hunt_vertices_cluster_sp,
    hunt_vertices_spa,
    oracle_scaled_matrix,
    score_normalize,
    score_rows,
    solve_weights,
    top_r_svd,
)
from conftest import random_simplex_cloud


def embedding(points, valid=None):
    points = np.atleast_2d(np.asarray(points, float))
    if valid is None:
        valid = np.ones(points.shape[0], dtype=bool)
    return ScoreEmbedding(D_hat=points, valid_rows=valid)


class TestScoreRows:
    def test_plain_ratio(self):
        D, valid = score_rows(np.array([1.0, 1.0]), np.array([[0.3], [-0.3]]), floor=1e-6)
        assert D.tolist() == [[0.3], [-0.3]]
        assert valid.all()

    def test_zero_entry_flagged_not_nan(self):
        D, valid = score_rows(np.array([1.0, 0.0]), np.array([[0.5], [0.5]]), floor=1e-6)
        assert valid.tolist() == [True, False]
        assert np.isfinite(D).all()
        assert D[1, 0] == 0.0


class TestScoreNormalize:
    def test_oracle_rows_inside_hunted_simplex(self, small_model):
        # noiseless: anchor rows sit on vertices, everything in their hull
        d = top_r_svd(oracle_scaled_matrix(small_model), small_model.r)
        emb = score_normalize(d)
        assert emb.valid_rows.all()
        verts = hunt_vertices_spa(emb, small_model.r)
        anchors = sorted(small_model.all_anchors)
        # each anchor row coincides with one hunted vertex
        for j in anchors:
            dist = np.linalg.norm(verts.B_hat - emb.D_hat[j], axis=1).min()
            assert dist <= 1e-8
        # every row is a convex combination of the vertices (weights >= -tol)
        W = solve_weights(emb, verts).W_hat
        recon = W @ verts.B_hat
        assert np.abs(recon - emb.D_hat).max() <= 1e-7

    def test_too_many_invalid(self):
        model = generate_model(SynthSpec(p=20, r=3, anchors_per_meta=2, seed=0))
        d = top_r_svd(oracle_scaled_matrix(model), 3)
        with pytest.raises(TooManyInvalidRowsError):
            score_normalize(d, floor=np.abs(d.h1).max() * 1.01)


class TestHuntVerticesSpa:
    def test_one_dimensional_extremes(self):
        verts = hunt_vertices_spa(embedding([[0.0], [0.3], [1.0]]), 2)
        assert sorted(v[0] for v in verts.B_hat) == [0.0, 1.0]
        assert set(verts.source_indices) == {0, 2}

    def test_exact_triangle(self):
        data, B = random_simplex_cloud(3, 50, seed=1)
        verts = hunt_vertices_spa(embedding(data), 3)
        got = sorted(map(tuple, np.round(verts.B_hat, 12)))
        want = sorted(map(tuple, np.round(B, 12)))
        assert got == want

    def test_collinear_degenerate(self):
        t = np.linspace(0, 1, 30)
        pts = np.column_stack([t, 2 * t + 1])
        with pytest.raises(DegenerateDataError):
            hunt_vertices_spa(embedding(pts), 3)

    def test_needs_enough_valid_rows(self):
        valid = np.array([True, False, False])
        with pytest.raises(DegenerateDataError):
            hunt_vertices_spa(embedding([[0.0], [0.3], [1.0]], valid), 2)

    @pytest.mark.parametrize("r", [2, 3, 4, 5, 6])
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_exact_under_separability(self, r, seed):
        data, B = random_simplex_cloud(r, 200, seed=100 * r + seed)
        verts = hunt_vertices_spa(embedding(data), r)
        cost = np.linalg.norm(verts.B_hat[:, None, :] - B[None, :, :], axis=2)
        # greedy match: every true vertex is hit exactly
        assert cost.min(axis=0).max() <= 1e-10
        assert cost.min(axis=1).max() <= 1e-10


class TestHuntVerticesClusterSp:
    def test_vertex_only_data_with_L_equal_r(self):
        B = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        data = np.repeat(B, 5, axis=0)
        verts = hunt_vertices_cluster_sp(embedding(data), 3, L=3, seed=0)
        got = sorted(map(tuple, np.round(verts.B_hat, 12)))
        assert got == sorted(map(tuple, B))
        assert verts.source_indices is None

    def test_matches_spa_on_separated_data(self):
        # tight vertex clusters plus a well-interior cloud
        rng = np.random.default_rng(7)
        B = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        interior = rng.dirichlet([5, 5, 5], size=100) @ B
        data = np.vstack([np.repeat(B, 30, axis=0), interior])
        e = embedding(data)
        spa = hunt_vertices_spa(e, 3)
        cluster = hunt_vertices_cluster_sp(e, 3, L=15, seed=0)
        cost = np.linalg.norm(cluster.B_hat[:, None, :] - spa.B_hat[None, :, :], axis=2)
        assert cost.min(axis=0).max() <= 1e-8

    def test_seed_stability_on_separated_data(self):
        rng = np.random.default_rng(8)
        B = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        interior = rng.dirichlet([5, 5, 5], size=80) @ B
        data = np.vstack([np.repeat(B, 20, axis=0), interior])
        a = hunt_vertices_cluster_sp(embedding(data), 3, L=12, seed=1)
        b = hunt_vertices_cluster_sp(embedding(data), 3, L=12, seed=2)
        cost = np.linalg.norm(a.B_hat[:, None, :] - b.B_hat[None, :, :], axis=2)
        assert cost.min(axis=0).max() <= 1e-6

    def test_L_below_r_rejected(self):
        with pytest.raises(ValueError):
            hunt_vertices_cluster_sp(embedding([[0.0], [1.0], [0.5]]), 2, L=1, seed=0)


class TestSolveWeights:
    def setup_method(self):
        self.verts = SimplexVertices(B_hat=np.array([[0.0], [1.0]]))

    def test_exact_vertex(self):
        W = solve_weights(embedding([[0.0]]), self.verts).W_hat
        np.testing.assert_allclose(W, [[1.0, 0.0]], atol=1e-9)

    def test_midpoint(self):
        W = solve_weights(embedding([[0.5]]), self.verts).W_hat
        np.testing.assert_allclose(W, [[0.5, 0.5]], atol=1e-9)

    def test_outside_point_clipped(self):
        # d = -0.2 solves to q = (1.2, -0.2); clipping and renormalizing
        # gives exactly e_1 (hand-solved 2x2 system)
        w = solve_weights(embedding([[-0.2]]), self.verts)
        np.testing.assert_allclose(w.W_hat, [[1.0, 0.0]], atol=1e-9)
        assert w.W_hat[0].sum() == pytest.approx(1.0, abs=1e-12)

    def test_interior_solution_unchanged(self):
        # clipping is a no-op for points already inside the simplex
        B = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        verts = SimplexVertices(B_hat=B)
        rng = np.random.default_rng(0)
        weights = rng.dirichlet([1, 1, 1], size=20)
        W = solve_weights(embedding(weights @ B), verts).W_hat
        np.testing.assert_allclose(W, weights, atol=1e-9)

    def test_invalid_rows_get_uniform_fallback(self):
        e = embedding([[0.3], [0.7]], valid=np.array([True, False]))
        w = solve_weights(e, self.verts)
        assert w.fallback_rows == (1,)
        np.testing.assert_allclose(w.W_hat[1], [0.5, 0.5])

    def test_rows_are_probability_vectors(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(scale=3.0, size=(50, 1))
        W = solve_weights(embedding(pts), self.verts).W_hat
        assert W.min() >= 0
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)


class TestTypes:
    def test_weight_matrix_validation(self):
        with pytest.raises(ValueError):
            WeightMatrix(W_hat=np.array([[0.5, 0.4]]))
        with pytest.raises(ValueError):
            WeightMatrix(W_hat=np.array([[1.2, -0.2]]))

    def test_vertices_affine_dependence_rejected(self):
        with pytest.raises(ValueError):
            SimplexVertices(B_hat=np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))

    def test_vertices_shape_checked(self):
        with pytest.raises(ValueError):
            SimplexVertices(B_hat=np.array([[0.0, 0.0], [1.0, 0.0]]))
