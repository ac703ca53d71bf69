"""Random ground-truth soft-aggregation models with planted anchors.

Generates (U, V) pairs for benchmark experiments and reports the
regularity statistics (state/meta visitation balance, Gram conditioning,
leading singular gap, meta-state flux balance, anchor margin) that the
estimator's error behavior depends on. Models are never rejected for weak
regularity; the report travels with experiment outputs so runs can be
filtered after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .markov import SoftAggregationModel, rng_from_seed, stationary_distribution
from .spectral import oracle_scaled_matrix


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one random model.

    margin caps how close a non-anchor row of V may sit to a vertex: the
    largest normalized share of any single meta-state in a non-anchor row
    is at most 1 - margin (rejection sampling). margin = 0 disables the
    cap and yields plain Dirichlet rows.
    """

    p: int
    r: int
    anchors_per_meta: int
    dirichlet_alpha: float = 1.0
    seed: int = 0
    margin: float = 0.25

    def __post_init__(self):
        if self.r < 2:
            raise ValueError("need r >= 2")
        if self.anchors_per_meta < 1:
            raise ValueError("need at least one anchor per meta-state")
        if self.r * self.anchors_per_meta > self.p:
            raise ValueError(
                f"r * anchors_per_meta = {self.r * self.anchors_per_meta} exceeds p = {self.p}"
            )
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if not (0.0 <= self.margin < 1.0):
            raise ValueError("margin must be in [0, 1)")


@dataclass(frozen=True)
class RegularityReport:
    """Normalized regularity statistics of a model.

    All quantities are scaled so that a perfectly balanced model scores
    O(1). anchor_margin is the smallest per-state margin delta_j over
    non-anchor states (+inf when every state is an anchor); delta_j = 0
    exactly for anchor states.
    """

    pi_min_scaled: float
    pi_max_scaled: float
    meta_visit_max_scaled: float
    u_gram_min_scaled: float
    v_gram_min_scaled: float
    singular_gap_scaled: float
    meta_flux_ratio: float
    anchor_margin: float
    state_margins: np.ndarray

    def __post_init__(self):
        finite_fields = (
            self.pi_min_scaled,
            self.pi_max_scaled,
            self.meta_visit_max_scaled,
            self.u_gram_min_scaled,
            self.v_gram_min_scaled,
            self.singular_gap_scaled,
            self.meta_flux_ratio,
        )
        for v in finite_fields:
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"regularity statistic {v!r} must be finite and nonnegative")
        if self.anchor_margin < 0:
            raise ValueError("anchor_margin must be nonnegative")
        arr = np.array(self.state_margins, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "state_margins", arr)

    def as_dict(self) -> dict:
        return {
            "pi_min_scaled": self.pi_min_scaled,
            "pi_max_scaled": self.pi_max_scaled,
            "meta_visit_max_scaled": self.meta_visit_max_scaled,
            "u_gram_min_scaled": self.u_gram_min_scaled,
            "v_gram_min_scaled": self.v_gram_min_scaled,
            "singular_gap_scaled": self.singular_gap_scaled,
            "meta_flux_ratio": self.meta_flux_ratio,
            "anchor_margin": self.anchor_margin,
        }


def generate_model(spec: SynthSpec) -> SoftAggregationModel:
    """Draw a random model with planted anchors, deterministic in the seed.

    U rows are symmetric Dirichlet(alpha). Anchor positions are a random
    permutation block; anchor magnitudes are uniform on [0.5, 1.5] so all
    states keep comparable total mass in V (the chain then visits every
    state at an O(1/p) rate, which the estimator's theory assumes; heavy
    anchor-mass fluctuation would plant nearly-unvisited states). Non-anchor
    rows of V are Dirichlet(alpha) across all columns, redrawn while their
    largest share exceeds 1 - spec.margin. V is column-normalized at the end.
    """
    rng = rng_from_seed(spec.seed)
    p, r, a = spec.p, spec.r, spec.anchors_per_meta
    alpha_vec = np.full(r, spec.dirichlet_alpha)

    U = rng.dirichlet(alpha_vec, size=p)

    perm = rng.permutation(p)
    anchor_sets = tuple(
        tuple(sorted(int(j) for j in perm[k * a : (k + 1) * a])) for k in range(r)
    )
    non_anchors = np.sort(perm[r * a :])

    V = np.zeros((p, r))
    magnitudes = rng.uniform(0.5, 1.5, size=r * a)
    for k in range(r):
        V[list(anchor_sets[k]), k] = magnitudes[k * a : (k + 1) * a]

    if non_anchors.size:
        rows = rng.dirichlet(alpha_vec, size=non_anchors.size)
        if spec.margin > 0.0:
            cap = 1.0 - spec.margin
            bad = np.flatnonzero(rows.max(axis=1) > cap)
            while bad.size:
                rows[bad] = rng.dirichlet(alpha_vec, size=bad.size)
                bad = bad[rows[bad].max(axis=1) > cap]
        V[non_anchors] = rows

    V = V / V.sum(axis=0)
    return SoftAggregationModel(p=p, r=r, U=U, V=V, anchor_sets=anchor_sets)


def state_posterior_margins(model: SoftAggregationModel, pi: np.ndarray) -> np.ndarray:
    """delta_j = 1 - max_k P(Z_0 = k | X_1 = j) for the stationary chain.

    The posterior is proportional to (U^T pi)_k * V[j, k]; anchors score
    exactly zero because their posterior is degenerate.
    """
    meta_mass = model.U.T @ pi
    joint = model.V * meta_mass[None, :]
    totals = joint.sum(axis=1)
    post_max = joint.max(axis=1) / totals
    return 1.0 - post_max


def check_regularity(model: SoftAggregationModel) -> RegularityReport:
    """Compute the normalized regularity statistics of a model."""
    P = model.transition_matrix()
    pi = stationary_distribution(P).pi
    p, r = model.p, model.r

    meta_mass = model.U.T @ pi
    u_gram_min = float(np.linalg.eigvalsh(model.U.T @ model.U)[0])
    v_gram_min = float(np.linalg.eigvalsh(model.V.T @ model.V)[0])

    Q = oracle_scaled_matrix(model).tilde_N
    sigma = np.linalg.svd(Q, compute_uv=False)

    flux = model.U.T @ P.rows @ model.V
    meta_flux_ratio = float(flux.max() / flux.min()) if flux.min() > 0 else float("inf")
    if not math.isfinite(meta_flux_ratio):
        raise ValueError("meta-state flux matrix has zero entries")

    margins = state_posterior_margins(model, pi)
    anchors = model.all_anchors
    non_anchor = np.asarray([j for j in range(p) if j not in anchors], dtype=int)
    anchor_margin = float(margins[non_anchor].min()) if non_anchor.size else float("inf")

    return RegularityReport(
        pi_min_scaled=float(pi.min() * p),
        pi_max_scaled=float(pi.max() * p),
        meta_visit_max_scaled=float(meta_mass.max() * r),
        u_gram_min_scaled=u_gram_min * r / p,
        v_gram_min_scaled=v_gram_min * p / r,
        singular_gap_scaled=float((sigma[0] - sigma[1]) * np.sqrt(p)),
        meta_flux_ratio=meta_flux_ratio,
        anchor_margin=anchor_margin,
        state_margins=margins,
    )
