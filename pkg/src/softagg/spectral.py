"""Column scaling of the count matrix and its truncated SVD.

The estimator works on tilde_N = N diag(m)^(-1/2) where m holds the
column sums of N. Below DENSE_SVD_CUTOFF states a full LAPACK SVD is
used; above it a Lanczos solver with a fixed start vector keeps large
sweeps tractable while staying deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import svds

from .errors import NumericalError, ZeroColumnError
from .markov import SoftAggregationModel, TransitionCounts, stationary_distribution

DENSE_SVD_CUTOFF = 2500
ORTHO_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class RankDeficientWarning(UserWarning):
    """sigma_r is numerically zero relative to sigma_1."""


@dataclass(frozen=True)
class ScaledCountMatrix:
    """tilde_N = N diag(m)^(-1/2), with the column masses m carried along.

    For oracle (noiseless) inputs tilde_N is diag(pi) P diag(pi)^(-1/2),
    m is the stationary distribution and n = 1.
    """

    tilde_N: np.ndarray
    m: np.ndarray
    n: float

    def __post_init__(self):
        tilde = np.array(self.tilde_N, dtype=float)
        m = np.array(self.m, dtype=float)
        if tilde.ndim != 2 or tilde.shape[0] != tilde.shape[1]:
            raise ValueError("tilde_N must be square")
        if m.shape != (tilde.shape[0],):
            raise ValueError("m must have one entry per state")
        if m.min() <= 0:
            raise ValueError("column masses must be positive; drop or smooth zero-mass states")
        tilde.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "tilde_N", tilde)
        object.__setattr__(self, "m", m)

    @property
    def p(self) -> int:
        return self.tilde_N.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Top-r singular triplets of the scaled count matrix, sign-fixed.

    Column i of H_hat (G_hat) is the i-th right (left) singular vector;
    sigma is nonincreasing. The sign of each pair is chosen so the
    largest-magnitude entry of h_i is positive, and h_1 is additionally
    flipped to have positive entry sum.
    """

    sigma: np.ndarray
    G_hat: np.ndarray
    H_hat: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        G = np.array(self.G_hat, dtype=float)
        H = np.array(self.H_hat, dtype=float)
        r = sigma.shape[0]
        if G.shape[1] != r or H.shape[1] != r or G.shape[0] != H.shape[0]:
            raise ValueError("inconsistent decomposition shapes")
        if np.any(np.diff(sigma) > 0) or sigma.min() < 0:
            raise ValueError("sigma must be nonincreasing and nonnegative")
        eye = np.eye(r)
        if np.abs(H.T @ H - eye).max() > ORTHO_TOL:
            raise ValueError("right singular vectors are not orthonormal")
        if np.abs(G.T @ G - eye).max() > ORTHO_TOL:
            raise ValueError("left singular vectors are not orthonormal")
        for arr in (sigma, G, H):
            arr.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "G_hat", G)
        object.__setattr__(self, "H_hat", H)

    @property
    def r(self) -> int:
        return self.sigma.shape[0]

    @property
    def p(self) -> int:
        return self.H_hat.shape[0]

    @property
    def h1(self) -> np.ndarray:
        return self.H_hat[:, 0]


def scale_counts(c: TransitionCounts, smoothing: float = 0.0) -> ScaledCountMatrix:
    """Divide each column of N by the square root of its mass.

    Raises ZeroColumnError listing every never-entered state when
    smoothing = 0; with smoothing > 0 the constant is added to every
    entry of N first, making all masses positive.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if smoothing == 0.0:
        zeros = np.flatnonzero(c.m == 0)
        if zeros.size:
            raise ZeroColumnError(tuple(int(j) for j in zeros))
        N = c.N.astype(float)
    else:
        N = c.N + float(smoothing)
    m = N.sum(axis=0)
    return ScaledCountMatrix(tilde_N=N / np.sqrt(m)[None, :], m=m, n=float(N.sum()))


def oracle_scaled_matrix(model: SoftAggregationModel, tol: float = 1e-12) -> ScaledCountMatrix:
    """Exact population analogue diag(pi) P diag(pi)^(-1/2) of the scaled
    count matrix; running the estimator on it must recover U and V exactly."""
    P = model.transition_matrix()
    pi = stationary_distribution(P, tol=tol).pi
    Q = (pi[:, None] * P.rows) / np.sqrt(pi)[None, :]
    return ScaledCountMatrix(tilde_N=Q, m=pi, n=1.0)


def _fix_signs(sigma: np.ndarray, G: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    G = G.copy()
    H = H.copy()
    for i in range(H.shape[1]):
        idx = int(np.argmax(np.abs(H[:, i])))
        if H[idx, i] < 0:
            H[:, i] = -H[:, i]
            G[:, i] = -G[:, i]
    if H[:, 0].sum() < 0:
        H[:, 0] = -H[:, 0]
        G[:, 0] = -G[:, 0]
    return G, H


def top_r_svd(
    s: ScaledCountMatrix, r: int, dense_cutoff: int | None = None
) -> SpectralDecomposition:
    """Top-r singular triplets of tilde_N with the deterministic sign
    convention. Warns (RankDeficientWarning) when sigma_r is numerically
    zero relative to sigma_1."""
    p = s.p
    if not (2 <= r <= p):
        raise ValueError(f"need 2 <= r <= p, got r={r}, p={p}")
    cutoff = DENSE_SVD_CUTOFF if dense_cutoff is None else dense_cutoff
    if p <= cutoff or r >= p - 1:
        G_full, sigma_full, Ht_full = np.linalg.svd(s.tilde_N, full_matrices=False)
        sigma = sigma_full[:r]
        G = G_full[:, :r]
        H = Ht_full[:r].T
    else:
        v0 = np.full(p, 1.0 / np.sqrt(p))
        G, sigma, Ht = svds(s.tilde_N, k=r, v0=v0)
        order = np.argsort(sigma)[::-1]
        sigma = sigma[order]
        G = G[:, order]
        H = Ht[order].T

    G, H = _fix_signs(sigma, G, H)
    if sigma[-1] <= 1e-12 * sigma[0]:
        warnings.warn(
            f"sigma_{r} = {sigma[-1]:.3g} is numerically zero relative to "
            f"sigma_1 = {sigma[0]:.3g}; r may be too large",
            RankDeficientWarning,
            stacklevel=2,
        )

    residual = np.linalg.norm(s.tilde_N @ H - G * sigma[None, :], axis=0).max()
    if residual > RESIDUAL_TOL * sigma[0]:
        raise NumericalError(
            f"singular triplet residual {residual:.3g} exceeds "
            f"{RESIDUAL_TOL:g} * sigma_1 = {RESIDUAL_TOL * sigma[0]:.3g}"
        )
    return SpectralDecomposition(sigma=sigma, G_hat=G, H_hat=H)
