"""SCORE normalization, simplex vertex hunting, and barycentric weights.

Dividing each row of the right singular vectors by its first coordinate
maps the rows into a simplex in (r-1) dimensions whose vertices are the
images of the anchor states. The successive projection algorithm (SPA)
finds those vertices exactly whenever they are present among the rows;
the cluster variant first compresses the rows with k-means and runs SPA
on the centers, trading determinism for noise averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDataError,
    SingularSystemError,
    TooManyInvalidRowsError,
)
from .spectral import SpectralDecomposition

INVALID_ROW_BUDGET = 0.20
SCORE_FLOOR_SCALE = 1e-3
WEIGHT_RIDGE = 1e-12


@dataclass(frozen=True)
class ScoreEmbedding:
    """p x (r-1) matrix of SCORE-normalized singular vector rows.

    Rows where the leading singular vector entry sits below the floor are
    flagged invalid, set to zero, and excluded from vertex hunting; they
    later receive uniform fallback weights.
    """

    D_hat: np.ndarray
    valid_rows: np.ndarray
    floor: float = 0.0

    def __post_init__(self):
        D = np.array(self.D_hat, dtype=float)
        valid = np.array(self.valid_rows, dtype=bool)
        if D.ndim != 2:
            raise ValueError("D_hat must be 2-D")
        if valid.shape != (D.shape[0],):
            raise ValueError("valid_rows must have one flag per row")
        if D[valid].size and not np.isfinite(D[valid]).all():
            raise ValueError("valid rows must be finite")
        D.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "D_hat", D)
        object.__setattr__(self, "valid_rows", valid)

    @property
    def p(self) -> int:
        return self.D_hat.shape[0]


@dataclass(frozen=True)
class SimplexVertices:
    """r hunted vertices (rows of B_hat) in (r-1) dimensions.

    source_indices gives the rows of the embedding that SPA picked; it is
    None for cluster-based hunting where vertices are k-means centers.
    """

    B_hat: np.ndarray
    source_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        B = np.array(self.B_hat, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1] + 1:
            raise ValueError(f"expected r x (r-1) vertex matrix, got {B.shape}")
        M = np.hstack([np.ones((B.shape[0], 1)), B])
        scale = np.prod(np.maximum(np.linalg.norm(M, axis=1), 1.0))
        if abs(np.linalg.det(M)) <= 1e-12 * scale:
            raise ValueError("vertices are affinely dependent")
        B.setflags(write=False)
        object.__setattr__(self, "B_hat", B)
        if self.source_indices is not None:
            object.__setattr__(
                self, "source_indices", tuple(int(i) for i in self.source_indices)
            )

    @property
    def r(self) -> int:
        return self.B_hat.shape[0]


@dataclass(frozen=True)
class WeightMatrix:
    """p x r barycentric weights, one probability vector per state.

    fallback_rows lists states that received the uniform 1/r fallback
    (invalid embedding rows, or rows whose clipped solution vanished).
    """

    W_hat: np.ndarray
    fallback_rows: tuple[int, ...] = ()

    def __post_init__(self):
        W = np.array(self.W_hat, dtype=float)
        if W.ndim != 2:
            raise ValueError("W_hat must be 2-D")
        if W.min() < 0:
            raise ValueError("weights must be nonnegative")
        if W.size and np.abs(W.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("weight rows must sum to 1 within 1e-12")
        W.setflags(write=False)
        object.__setattr__(self, "W_hat", W)
        object.__setattr__(self, "fallback_rows", tuple(int(i) for i in self.fallback_rows))

    @property
    def p(self) -> int:
        return self.W_hat.shape[0]

    @property
    def r(self) -> int:
        return self.W_hat.shape[1]


def score_rows(h1: np.ndarray, H_rest: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Divide each row of H_rest by the matching entry of h1.

    Rows with |h1| below the floor are zeroed and flagged invalid rather
    than producing infinities.
    """
    valid = np.abs(h1) >= floor
    D = np.zeros_like(H_rest, dtype=float)
    D[valid] = H_rest[valid] / h1[valid, None]
    return D, valid


def score_normalize(d: SpectralDecomposition, floor: float | None = None) -> ScoreEmbedding:
    """SCORE-normalize the right singular vectors into a p x (r-1) embedding.

    floor defaults to SCORE_FLOOR_SCALE times the median |h1| entry; rows
    below it are flagged invalid. Raises TooManyInvalidRowsError when more
    than 20% of rows are invalid, which signals an under-sampled chain.
    """
    if d.r < 2:
        raise ValueError("SCORE embedding needs r >= 2")
    h1 = d.h1
    if floor is None:
        floor = SCORE_FLOOR_SCALE * float(np.median(np.abs(h1)))
    D, valid = score_rows(h1, d.H_hat[:, 1:], floor)
    invalid = int((~valid).sum())
    if invalid > INVALID_ROW_BUDGET * d.p:
        raise TooManyInvalidRowsError(invalid, d.p, floor)
    return ScoreEmbedding(D_hat=D, valid_rows=valid, floor=float(floor))


def _spa_pick(Y: np.ndarray, r: int) -> list[int]:
    """Successive projection on the rows of Y: repeatedly take the row of
    largest residual norm and project everything onto its orthogonal
    complement. Returns the picked row indices in pick order."""
    R = np.array(Y, dtype=float)
    sq_norms = (R * R).sum(axis=1)
    tol_sq = (1e-12 * np.sqrt(sq_norms.max())) ** 2
    picks: list[int] = []
    for _ in range(r):
        sq_norms = (R * R).sum(axis=1)
        j = int(np.argmax(sq_norms))
        if sq_norms[j] <= tol_sq:
            raise DegenerateDataError(
                f"residual norms collapsed after {len(picks)} of {r} picks; "
                "the point cloud does not span a simplex of the requested order"
            )
        picks.append(j)
        u = R[j] / np.sqrt(sq_norms[j])
        R -= np.outer(R @ u, u)
    return picks


def hunt_vertices_spa(e: ScoreEmbedding, r: int) -> SimplexVertices:
    """Find the r simplex vertices among valid embedding rows with SPA.

    SPA runs on homogeneous coordinates (1, d_j) so that convex structure
    becomes conic; returned vertices are the original (unprojected)
    embedding rows at the picked positions. Deterministic; exact under
    separability.
    """
    valid_idx = np.flatnonzero(e.valid_rows)
    if valid_idx.size < r:
        raise DegenerateDataError(
            f"only {valid_idx.size} valid rows for r={r} vertex hunting"
        )
    X = e.D_hat[valid_idx]
    Y = np.hstack([np.ones((X.shape[0], 1)), X])
    picks = _spa_pick(Y, r)
    chosen = valid_idx[picks]
    return SimplexVertices(B_hat=e.D_hat[chosen], source_indices=tuple(chosen))


def hunt_vertices_cluster_sp(
    e: ScoreEmbedding, r: int, L: int | None = None, seed: int = 0
) -> SimplexVertices:
    """Cluster-then-SPA vertex hunting: k-means with L centers, then SPA
    over the centers. Averages out row noise at the cost of an RNG seed.

    L defaults to min(10 r, #valid // 2), floored at r.
    """
    from sklearn.cluster import KMeans

    valid_idx = np.flatnonzero(e.valid_rows)
    if L is None:
        L = max(r, min(10 * r, valid_idx.size // 2))
    if L < r:
        raise ValueError(f"need L >= r, got L={L}, r={r}")
    if valid_idx.size < L:
        raise DegenerateDataError(f"only {valid_idx.size} valid rows for L={L} clusters")
    X = e.D_hat[valid_idx]
    km = KMeans(n_clusters=L, init="k-means++", n_init=5, max_iter=100, random_state=int(seed))
    km.fit(X)
    centers = km.cluster_centers_
    Y = np.hstack([np.ones((L, 1)), centers])
    picks = _spa_pick(Y, r)
    return SimplexVertices(B_hat=centers[picks], source_indices=None)


def solve_weights(e: ScoreEmbedding, v: SimplexVertices) -> WeightMatrix:
    """Barycentric weights of every embedding row with respect to the
    hunted vertices.

    Each valid row solves min_q ||d_j - sum_k q_k b_k||^2 + (1 - sum_k q_k)^2
    in closed form (normal equations with a 1e-12 ridge), then negative
    entries are clipped and the row renormalized to unit L1 norm. Invalid
    rows get the uniform fallback and are flagged.
    """
    r = v.r
    p = e.p
    A = np.vstack([v.B_hat.T, np.ones((1, r))])
    G = A.T @ A + WEIGHT_RIDGE * np.eye(r)
    Y = np.vstack([e.D_hat.T, np.ones((1, p))])
    try:
        Q = np.linalg.solve(G, A.T @ Y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"ridge-stabilized weight system is singular: {exc}") from exc
    if not np.isfinite(Q).all():
        raise SingularSystemError("weight solve produced non-finite values")

    W = np.clip(Q.T, 0.0, None)
    sums = W.sum(axis=1)
    dead = ~e.valid_rows | (sums <= 0.0)
    W[dead] = 1.0 / r
    sums = W.sum(axis=1)
    W = W / sums[:, None]
    fallback = np.flatnonzero(dead)
    return WeightMatrix(W_hat=W, fallback_rows=tuple(int(i) for i in fallback))
