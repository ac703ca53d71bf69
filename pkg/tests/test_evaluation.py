import itertools

import numpy as np
import pytest

from softagg import (
    AggregationEstimate,
    DimensionMismatchError,
    SoftAggregationModel,
    SweepConfig,
    SynthSpec,
    TransitionCounts,
    WeightMatrix,
    align_and_score,
    compare_P_estimators,
    count_transitions,
    estimate,
    estimate_oracle,
    fit_log_slope,
    generate_model,
    sample_trajectory,
    singular_diagnostics,
    stationary_distribution,
)
from softagg.evaluation import CellRecord, SweepAbortedError, fit_sweep, rate_sweep
from softagg.spectral import SpectralDecomposition, oracle_scaled_matrix, scale_counts, top_r_svd


def exact_estimate(model, column_perm=None):
    """Build an AggregationEstimate holding the model's own U, V."""
    perm = list(column_perm) if column_perm is not None else list(range(model.r))
    V = model.V[:, perm]
    U = model.U[:, perm]
    W = V / V.sum(axis=1, keepdims=True)
    wm = WeightMatrix(W_hat=W)
    anchors = frozenset(int(j) for j in np.flatnonzero(W.max(axis=1) >= 0.9))
    return AggregationEstimate(
        p=model.p, r=model.r, V_hat=V, U_hat=U, U_hat_projected=U,
        W_hat=wm, anchors=anchors, delta0=0.1,
    )


class TestAlignAndScore:
    def test_exact_estimate_scores_zero(self, hand_model):
        scores = align_and_score(exact_estimate(hand_model), hand_model)
        assert scores.permutation == (0, 1)
        assert scores.tv_V_mean == 0.0
        assert scores.tv_U_mean == 0.0
        assert scores.tv_P_mean <= 1e-12
        assert scores.anchor_precision == 1.0
        assert scores.anchor_recall == 1.0
        assert scores.anchors_exact

    def test_swapped_columns_aligned(self, hand_model):
        scores = align_and_score(exact_estimate(hand_model, column_perm=[1, 0]), hand_model)
        assert scores.permutation == (1, 0)
        assert scores.tv_V_mean == 0.0
        assert scores.anchors_exact

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_assignment_matches_bruteforce(self, seed):
        # oracle: exhaustive search over all r! column permutations
        model = generate_model(SynthSpec(p=30, r=3, anchors_per_meta=2, seed=seed))
        counts = count_transitions(
            sample_trajectory(model.transition_matrix(), 20_000, "stationary", seed), 30
        )
        est = estimate(counts, 3)
        scores = align_and_score(est, model)

        def cost_of(perm):
            total = 0.0
            for k, l in enumerate(perm):
                total += np.abs(est.V_hat[:, k] - model.V[:, l]).sum()
            return total

        best = min(cost_of(p) for p in itertools.permutations(range(3)))
        assert cost_of(scores.permutation) == pytest.approx(best, abs=1e-12)

    @pytest.mark.parametrize("r", [2, 3, 4, 5, 6])
    def test_assignment_optimal_up_to_r6(self, r):
        # generic costs: score one random model's columns against another's
        truth = generate_model(SynthSpec(p=4 * r, r=r, anchors_per_meta=2, seed=r))
        other = generate_model(SynthSpec(p=4 * r, r=r, anchors_per_meta=2, seed=100 + r))
        est = exact_estimate(other)
        scores = align_and_score(est, truth)

        def cost_of(perm):
            return sum(
                np.abs(est.V_hat[:, k] - truth.V[:, l]).sum()
                for k, l in enumerate(perm)
            )

        best = min(cost_of(p) for p in itertools.permutations(range(r)))
        assert cost_of(scores.permutation) == pytest.approx(best, abs=1e-12)

    def test_truth_relabeling_invariance(self, small_model):
        est = estimate_oracle(small_model)
        base = align_and_score(est, small_model).tv_V_mean
        perm = [2, 0, 1]
        relabeled = SoftAggregationModel(
            p=small_model.p, r=small_model.r,
            U=small_model.U[:, perm], V=small_model.V[:, perm],
            anchor_sets=tuple(small_model.anchor_sets[k] for k in perm),
        )
        assert align_and_score(est, relabeled).tv_V_mean == pytest.approx(base, abs=1e-12)

    def test_dimension_mismatch(self, hand_model, small_model):
        with pytest.raises(DimensionMismatchError):
            align_and_score(exact_estimate(hand_model), small_model)

    def test_loose_vs_strict_precision(self, hand_model):
        # swap W columns without swapping V: anchors map to the wrong meta
        est = exact_estimate(hand_model)
        W_swapped = est.W_hat.W_hat[:, ::-1].copy()
        bad = AggregationEstimate(
            p=est.p, r=est.r, V_hat=est.V_hat, U_hat=est.U_hat,
            U_hat_projected=est.U_hat_projected,
            W_hat=WeightMatrix(W_hat=W_swapped),
            anchors=est.anchors, delta0=0.1,
        )
        scores = align_and_score(bad, hand_model)
        assert scores.anchor_precision_loose == 1.0
        assert scores.anchor_precision == 0.0
        assert not scores.anchors_exact


class TestRateFit:
    def test_planted_half_power_slope(self):
        ns = np.array([1e4, 1e5, 1e6, 1e7])
        errors = 3.0 * ns ** -0.5
        slope, intercept = fit_log_slope(ns, errors)
        assert slope == pytest.approx(-0.5, abs=1e-12)
        assert intercept == pytest.approx(np.log(3.0), abs=1e-9)

    def test_constant_errors_zero_slope(self):
        slope, _ = fit_log_slope([1e3, 1e4, 1e5], [0.2, 0.2, 0.2])
        assert slope == pytest.approx(0.0, abs=1e-14)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_log_slope([10, 100], [1.0, 0.5])

    def test_positive_errors_required(self):
        with pytest.raises(ValueError):
            fit_log_slope([10, 100, 1000], [1.0, 0.0, 0.5])


class TestSweep:
    def test_small_fixed_p_sweep(self):
        config = SweepConfig(
            mode="fixed_p", p=30, r=3, anchors_per_meta=3,
            n_grid=(3_000, 10_000, 30_000), reps=2, seed=5,
        )
        fit = rate_sweep(config)
        assert len(fit.points) == 3
        assert len(fit.records) == 6
        assert all(rec.error is None for rec in fit.records)
        # errors shrink with n
        assert fit.points[-1][1] < fit.points[0][1]
        assert fit.slope < 0

    def test_sweep_deterministic(self):
        config = SweepConfig(
            mode="fixed_p", p=25, r=3, anchors_per_meta=2,
            n_grid=(2_000, 6_000, 20_000), reps=2, seed=9,
        )
        a = rate_sweep(config)
        b = rate_sweep(config)
        assert a.slope == b.slope
        assert a.points == b.points

    def test_workers_do_not_change_results(self):
        base = dict(mode="fixed_p", p=25, r=3, anchors_per_meta=2,
                    n_grid=(2_000, 6_000, 20_000), reps=2, seed=9)
        serial = rate_sweep(SweepConfig(**base, workers=1))
        parallel = rate_sweep(SweepConfig(**base, workers=2))
        assert serial.points == parallel.points

    def test_fixed_ratio_grid(self):
        config = SweepConfig(
            mode="fixed_ratio", p_grid=(20, 40, 80), ratio=200.0, r=3,
            reps=1, seed=3, anchor_fraction=0.2,
        )
        points = config.grid_points()
        assert [p for p, _, _ in points] == [20, 40, 80]
        assert [n for _, n, _ in points] == [4_000, 8_000, 16_000]
        assert [a for _, _, a in points] == [4, 8, 16]

    def test_failed_cell_aborts(self):
        config = SweepConfig(
            mode="fixed_p", p=20, r=3, anchors_per_meta=2,
            n_grid=(1_000, 2_000, 4_000), reps=2, seed=0,
        )
        nan = float("nan")
        records = []
        for gi, (p, n, _a) in enumerate(config.grid_points()):
            for rep in range(2):
                err = "boom" if gi == 1 else None
                records.append(CellRecord(
                    p=p, r=3, n=n, rep=rep, seed=rep,
                    tv_V=0.1 if err is None else nan, tv_U=nan, tv_P_lowrank=nan,
                    tv_P_empirical=nan, anchors_prec=nan, anchors_rec=nan,
                    runtime_ms=0.0, error=err,
                ))
        with pytest.raises(SweepAbortedError):
            fit_sweep(config, records)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            SweepConfig(mode="fixed_p", p=20, r=3, anchors_per_meta=2,
                        n_grid=(1_000, 2_000), reps=2)
        with pytest.raises(ValueError):
            SweepConfig(mode="fixed_p", p=20, r=3, anchors_per_meta=2,
                        n_grid=(1_000, 1_000, 2_000), reps=2)


class TestComparePEstimators:
    def test_consistency_at_large_n(self):
        model = generate_model(SynthSpec(p=10, r=3, anchors_per_meta=2, seed=0))
        counts = count_transitions(
            sample_trajectory(model.transition_matrix(), 1_000_000, "stationary", 1), 10
        )
        cmp = compare_P_estimators(counts, model, 3)
        assert cmp.tv_lowrank <= 0.05
        assert cmp.tv_empirical <= 0.05

    def test_quantized_oracle_counts(self, small_model):
        # near-infinite data: counts proportional to the exact frequency matrix
        P = small_model.transition_matrix()
        pi = stationary_distribution(P).pi
        N = np.round(1e9 * pi[:, None] * P.rows).astype(np.int64)
        counts = TransitionCounts.from_matrix(N)
        cmp = compare_P_estimators(counts, small_model, small_model.r)
        assert cmp.tv_lowrank <= 1e-3

    def test_lowrank_beats_empirical_under_sampling(self):
        model = generate_model(SynthSpec(p=100, r=4, anchors_per_meta=12, seed=3))
        counts = count_transitions(
            sample_trajectory(model.transition_matrix(), 30_000, "stationary", 4), 100
        )
        cmp = compare_P_estimators(counts, model, 4)
        assert cmp.tv_lowrank < cmp.tv_empirical


class TestSingularDiagnostics:
    def test_oracle_decomposition_is_exact(self, small_model):
        d = top_r_svd(oracle_scaled_matrix(small_model), small_model.r)
        diag = singular_diagnostics(d, small_model)
        assert diag.h1_max_abs_error <= 1e-8
        assert diag.subspace_rowwise_max_error <= 1e-8

    def test_recovers_planted_rotation(self, small_model):
        d = top_r_svd(oracle_scaled_matrix(small_model), small_model.r)
        theta = 0.7
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        H_rot = d.H_hat.copy()
        H_rot[:, 1:] = H_rot[:, 1:] @ R
        rotated = SpectralDecomposition(sigma=d.sigma, G_hat=d.G_hat, H_hat=H_rot)
        diag = singular_diagnostics(rotated, small_model)
        assert diag.subspace_rowwise_max_error <= 1e-10

    def test_error_shrinks_with_n(self):
        # the row-wise maximum should shrink by roughly sqrt(10) from
        # n=1e5 to n=1e6 (informational scaling check, loose bounds)
        model = generate_model(SynthSpec(p=60, r=3, anchors_per_meta=6, seed=5))
        P = model.transition_matrix()

        def rowwise(n, seed):
            counts = count_transitions(sample_trajectory(P, n, "stationary", seed), 60)
            d = top_r_svd(scale_counts(counts), 3)
            return singular_diagnostics(d, model).subspace_rowwise_max_error

        small = np.median([rowwise(100_000, s) for s in range(5)])
        large = np.median([rowwise(1_000_000, 100 + s) for s in range(5)])
        assert large < small
        assert 1.5 <= small / large <= 8.0
