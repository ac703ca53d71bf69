"""Ground-truth comparison and the synthetic rate-sweep harness.

Meta-state labels produced by the estimator are arbitrary, so every
comparison starts from an optimal column matching (Hungarian assignment
on the total-variation cost between estimated and true disaggregation
columns). The same permutation is applied to V, U and anchors so one
consistent labeling is scored.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, NumericalError, SoftAggError
from .estimator import AggregationEstimate, EstimateOptions, estimate
from .markov import (
    SoftAggregationModel,
    TransitionCounts,
    count_transitions,
    empirical_transition_matrix,
    replication_seed,
    sample_trajectory,
)
from .spectral import SpectralDecomposition, oracle_scaled_matrix, top_r_svd
from .synth import SynthSpec, generate_model


class SweepAbortedError(NumericalError):
    """More than 40% of the replications of one sweep cell failed."""


@dataclass(frozen=True)
class AlignedErrors:
    """Errors of an estimate against a ground-truth model, after matching.

    permutation maps estimated meta-state k to true meta-state
    permutation[k]. TV errors are unhalved L1 distances; the anchor
    precision/recall fields are the strict variants (an estimated anchor
    must belong to the matched meta-state), with loose variants counting
    membership in any planted anchor set.
    """

    permutation: tuple[int, ...]
    tv_V_mean: float
    tv_V_max: float
    tv_U_mean: float
    tv_U_max: float
    tv_P_mean: float
    tv_P_mean_raw: float
    anchor_precision: float
    anchor_recall: float
    anchor_precision_loose: float
    anchor_recall_loose: float
    anchors_exact: bool

    def __post_init__(self):
        perm = tuple(int(k) for k in self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"permutation {perm} is not a bijection")
        for name in ("tv_V_mean", "tv_V_max", "tv_U_mean", "tv_U_max", "tv_P_mean"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tv_V_mean > 2.0 + 1e-9:
            raise ValueError("mean TV between probability vectors cannot exceed 2")
        object.__setattr__(self, "permutation", perm)

    def as_dict(self) -> dict:
        return {
            "permutation": list(self.permutation),
            "tv_V_mean": self.tv_V_mean,
            "tv_V_max": self.tv_V_max,
            "tv_U_mean": self.tv_U_mean,
            "tv_U_max": self.tv_U_max,
            "tv_P_mean": self.tv_P_mean,
            "tv_P_mean_raw": self.tv_P_mean_raw,
            "anchor_precision": self.anchor_precision,
            "anchor_recall": self.anchor_recall,
            "anchor_precision_loose": self.anchor_precision_loose,
            "anchor_recall_loose": self.anchor_recall_loose,
            "anchors_exact": self.anchors_exact,
        }


def _rows_to_probabilities(M: np.ndarray) -> np.ndarray:
    """Clip negatives and renormalize rows; all-zero rows become uniform."""
    M = np.clip(M, 0.0, None)
    sums = M.sum(axis=1)
    dead = sums <= 0.0
    if dead.any():
        M[dead] = 1.0
        sums = M.sum(axis=1)
    return M / sums[:, None]


def align_and_score(est: AggregationEstimate, truth: SoftAggregationModel) -> AlignedErrors:
    """Match estimated meta-states to true ones and score all errors.

    The assignment minimizes the summed column TV between V_hat and V
    (solved exactly); V, U and anchor bookkeeping all use that single
    permutation.
    """
    if est.p != truth.p:
        raise DimensionMismatchError(f"estimate has p={est.p}, truth has p={truth.p}")
    if est.r != truth.r:
        raise DimensionMismatchError(f"estimate has r={est.r}, truth has r={truth.r}")
    r, p = truth.r, truth.p

    cost = np.abs(est.V_hat[:, :, None] - truth.V[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(r, dtype=int)
    perm[rows] = cols

    V_aligned = np.empty_like(est.V_hat)
    V_aligned[:, perm] = est.V_hat
    U_aligned = np.empty_like(est.U_hat)
    U_aligned[:, perm] = est.U_hat

    tv_V = np.abs(V_aligned - truth.V).sum(axis=0)
    tv_U = np.abs(U_aligned - truth.U).sum(axis=1)

    P_true = truth.transition_matrix().rows
    product = est.U_hat @ est.V_hat.T
    tv_P_raw = float(np.abs(product - P_true).sum(axis=1).mean())
    tv_P = float(np.abs(_rows_to_probabilities(product) - P_true).sum(axis=1).mean())

    anchor_meta = truth.anchor_meta()
    planted = truth.all_anchors
    est_meta = est.W_hat.W_hat.argmax(axis=1)
    mapped_meta = perm[est_meta]

    strict_hits = sum(
        1 for j in est.anchors if anchor_meta.get(j, -1) == mapped_meta[j]
    )
    loose_hits = sum(1 for j in est.anchors if j in planted)
    n_est = len(est.anchors)
    n_true = len(planted)
    precision = strict_hits / n_est if n_est else 1.0
    precision_loose = loose_hits / n_est if n_est else 1.0
    if n_true:
        recall = (
            sum(1 for j in planted if j in est.anchors and mapped_meta[j] == anchor_meta[j])
            / n_true
        )
        recall_loose = sum(1 for j in planted if j in est.anchors) / n_true
    else:
        recall = float("nan")
        recall_loose = float("nan")

    return AlignedErrors(
        permutation=tuple(int(k) for k in perm),
        tv_V_mean=float(tv_V.mean()),
        tv_V_max=float(tv_V.max()),
        tv_U_mean=float(tv_U.mean()),
        tv_U_max=float(tv_U.max()),
        tv_P_mean=tv_P,
        tv_P_mean_raw=tv_P_raw,
        anchor_precision=precision,
        anchor_recall=recall,
        anchor_precision_loose=precision_loose,
        anchor_recall_loose=recall_loose,
        anchors_exact=bool(n_true and precision == 1.0 and recall == 1.0),
    )


@dataclass(frozen=True)
class PComparison:
    """Row-mean TV errors of the low-rank product versus the raw empirical
    transition matrix, both against the true P."""

    tv_lowrank: float
    tv_empirical: float


def compare_P_estimators(
    counts: TransitionCounts,
    truth: SoftAggregationModel,
    r: int,
    delta0: float = 0.1,
    options: EstimateOptions | None = None,
) -> PComparison:
    """Estimate P two ways from the same counts and score both."""
    est = estimate(counts, r, delta0=delta0, options=options)
    P_true = truth.transition_matrix().rows
    product = _rows_to_probabilities(est.U_hat @ est.V_hat.T)
    tv_lowrank = float(np.abs(product - P_true).sum(axis=1).mean())
    P_emp = empirical_transition_matrix(counts).rows
    tv_empirical = float(np.abs(P_emp - P_true).sum(axis=1).mean())
    return PComparison(tv_lowrank=tv_lowrank, tv_empirical=tv_empirical)


# -- rate sweeps --------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Grid definition for a synthetic error-rate sweep.

    fixed_p mode varies n over n_grid at constant p with anchors_per_meta
    planted anchors; fixed_ratio mode varies p over p_grid with
    n = ratio * p and anchors_per_meta = max(1, round(anchor_fraction * p)).
    """

    mode: str
    r: int
    reps: int = 5
    seed: int = 0
    delta0: float = 0.1
    dirichlet_alpha: float = 1.0
    margin: float = 0.25
    hunter: str = "spa"
    workers: int = 1
    compare_p: bool = True
    p: int | None = None
    n_grid: tuple[int, ...] = ()
    anchors_per_meta: int | None = None
    p_grid: tuple[int, ...] = ()
    ratio: float | None = None
    anchor_fraction: float = 0.125

    def __post_init__(self):
        if self.mode not in ("fixed_p", "fixed_ratio"):
            raise ValueError(f"mode must be fixed_p or fixed_ratio, got {self.mode!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.mode == "fixed_p":
            if self.p is None or self.anchors_per_meta is None:
                raise ValueError("fixed_p mode needs p and anchors_per_meta")
            grid = tuple(int(n) for n in self.n_grid)
        else:
            if self.ratio is None or not self.p_grid:
                raise ValueError("fixed_ratio mode needs ratio and p_grid")
            grid = tuple(int(p) for p in self.p_grid)
        if len(grid) < 3:
            raise ValueError("need at least 3 grid points for a rate fit")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")

    def grid_points(self) -> list[tuple[int, int, int]]:
        """List of (p, n, anchors_per_meta) cells."""
        if self.mode == "fixed_p":
            return [(self.p, int(n), self.anchors_per_meta) for n in self.n_grid]
        out = []
        for p in self.p_grid:
            anchors = max(1, round(self.anchor_fraction * p))
            out.append((int(p), int(round(self.ratio * p)), anchors))
        return out


@dataclass(frozen=True)
class CellRecord:
    """One replication of one sweep cell (schema of sweep_results.csv)."""

    p: int
    r: int
    n: int
    rep: int
    seed: int
    tv_V: float
    tv_U: float
    tv_P_lowrank: float
    tv_P_empirical: float
    anchors_prec: float
    anchors_rec: float
    runtime_ms: float
    error: str | None = None

    CSV_COLUMNS = (
        "p", "r", "n", "rep", "seed", "tv_V", "tv_U",
        "tv_P_lowrank", "tv_P_empirical", "anchors_prec", "anchors_rec",
        "runtime_ms",
    )


@dataclass(frozen=True)
class RateFit:
    """Per-grid-point mean errors and the fitted log-log slope."""

    points: tuple[tuple[float, float, float], ...]
    slope: float
    intercept: float
    records: tuple[CellRecord, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("need at least 3 points for a rate fit")
        for n, mean, _std in self.points:
            if not (n > 0 and mean > 0):
                raise ValueError("rate fit needs positive n and positive errors")


def fit_log_slope(ns, errors) -> tuple[float, float]:
    """OLS slope and intercept of log(error) against log(n)."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ns.size < 3:
        raise ValueError("need at least 3 points")
    if (errors <= 0).any() or (ns <= 0).any():
        raise ValueError("log fit needs positive values")
    slope, intercept = np.polyfit(np.log(ns), np.log(errors), 1)
    return float(slope), float(intercept)


def run_sweep_cell(config: SweepConfig, grid_index: int, rep: int) -> CellRecord:
    """Generate, simulate, estimate and score one replication."""
    p, n, anchors = config.grid_points()[grid_index]
    rep_index = grid_index * config.reps + rep
    model_seed = replication_seed(config.seed, rep_index)
    traj_seed = model_seed + 1

    start = time.perf_counter()
    try:
        spec = SynthSpec(
            p=p,
            r=config.r,
            anchors_per_meta=anchors,
            dirichlet_alpha=config.dirichlet_alpha,
            seed=model_seed,
            margin=config.margin,
        )
        model = generate_model(spec)
        P = model.transition_matrix()
        traj = sample_trajectory(P, n, x0="stationary", seed=traj_seed)
        counts = count_transitions(traj, p)
        options = EstimateOptions(hunter=config.hunter, seed=model_seed + 2)
        est = estimate(counts, config.r, delta0=config.delta0, options=options)
        scores = align_and_score(est, model)
        if config.compare_p:
            P_true = P.rows
            product = _rows_to_probabilities(est.U_hat @ est.V_hat.T)
            tv_lowrank = float(np.abs(product - P_true).sum(axis=1).mean())
            try:
                P_emp = empirical_transition_matrix(counts).rows
                tv_empirical = float(np.abs(P_emp - P_true).sum(axis=1).mean())
            except SoftAggError:
                tv_empirical = float("nan")
        else:
            tv_lowrank = float("nan")
            tv_empirical = float("nan")
        runtime_ms = 1000.0 * (time.perf_counter() - start)
        return CellRecord(
            p=p, r=config.r, n=n, rep=rep, seed=model_seed,
            tv_V=scores.tv_V_mean, tv_U=scores.tv_U_mean,
            tv_P_lowrank=tv_lowrank, tv_P_empirical=tv_empirical,
            anchors_prec=scores.anchor_precision, anchors_rec=scores.anchor_recall,
            runtime_ms=runtime_ms,
        )
    except SoftAggError as exc:
        runtime_ms = 1000.0 * (time.perf_counter() - start)
        nan = float("nan")
        return CellRecord(
            p=p, r=config.r, n=n, rep=rep, seed=model_seed,
            tv_V=nan, tv_U=nan, tv_P_lowrank=nan, tv_P_empirical=nan,
            anchors_prec=nan, anchors_rec=nan, runtime_ms=runtime_ms,
            error=f"{type(exc).__name__}: {exc}",
        )


def _cell_task(args) -> CellRecord:
    config, grid_index, rep = args
    return run_sweep_cell(config, grid_index, rep)


def collect_records(
    config: SweepConfig, existing: dict[tuple[int, int], CellRecord] | None = None
) -> list[CellRecord]:
    """Run all (grid point, rep) cells, skipping any supplied as existing.

    Results are deterministic regardless of worker count because cell
    seeds depend only on indices and output order is sorted by cell key.
    """
    existing = existing or {}
    keys = [
        (gi, rep)
        for gi in range(len(config.grid_points()))
        for rep in range(config.reps)
    ]
    todo = [k for k in keys if k not in existing]
    done: dict[tuple[int, int], CellRecord] = dict(existing)
    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for key, record in zip(
                todo, pool.map(_cell_task, [(config, gi, rep) for gi, rep in todo])
            ):
                done[key] = record
    else:
        for gi, rep in todo:
            done[(gi, rep)] = run_sweep_cell(config, gi, rep)
    return [done[k] for k in keys]


def fit_sweep(config: SweepConfig, records: list[CellRecord]) -> RateFit:
    """Aggregate per-grid-point means and fit the log-log slope.

    A grid point with more than 40% failed replications aborts the sweep.
    """
    points = []
    grid = config.grid_points()
    for gi, (_p, n, _a) in enumerate(grid):
        cell = records[gi * config.reps : (gi + 1) * config.reps]
        values = [rec.tv_V for rec in cell if rec.error is None and math.isfinite(rec.tv_V)]
        failed = config.reps - len(values)
        if failed > 0.4 * config.reps:
            raise SweepAbortedError(
                f"grid point {gi} (n={n}): {failed}/{config.reps} replications failed"
            )
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        points.append((float(n), mean, std))
    slope, intercept = fit_log_slope([pt[0] for pt in points], [pt[1] for pt in points])
    return RateFit(
        points=tuple(points), slope=slope, intercept=intercept, records=tuple(records)
    )


def rate_sweep(config: SweepConfig) -> RateFit:
    """Full sweep: run every cell, aggregate, and fit the rate slope."""
    return fit_sweep(config, collect_records(config))


# -- singular vector diagnostics ----------------------------------------------

@dataclass(frozen=True)
class SingularDiagnostics:
    """Row-wise deviations of the empirical singular vectors from the
    population ones after optimal alignment (research diagnostics, no
    pass/fail semantics)."""

    h1_max_abs_error: float
    subspace_rowwise_max_error: float
    omega: int


def singular_diagnostics(
    est_decomp: SpectralDecomposition, truth: SoftAggregationModel
) -> SingularDiagnostics:
    """Compare an empirical decomposition against the oracle decomposition
    of the model.

    The leading vector is aligned by a sign omega; the remaining r-1
    vectors by the orthogonal Procrustes rotation (SVD of the cross-Gram
    matrix). Reported are max_j |omega h1_hat(j) - h1(j)| and the largest
    row norm of (H_hat_rest Omega - H_rest).
    """
    r = est_decomp.r
    oracle = top_r_svd(oracle_scaled_matrix(truth), r)
    h1_est = est_decomp.h1
    h1_true = oracle.h1
    omega = 1 if float(h1_est @ h1_true) >= 0 else -1
    h1_err = float(np.abs(omega * h1_est - h1_true).max())

    H_est = est_decomp.H_hat[:, 1:]
    H_true = oracle.H_hat[:, 1:]
    if H_est.shape[1]:
        Um, _s, Vt = np.linalg.svd(H_est.T @ H_true)
        rotation = Um @ Vt
        row_err = float(np.linalg.norm(H_est @ rotation - H_true, axis=1).max())
    else:
        row_err = 0.0
    return SingularDiagnostics(
        h1_max_abs_error=h1_err,
        subspace_rowwise_max_error=row_err,
        omega=omega,
    )
