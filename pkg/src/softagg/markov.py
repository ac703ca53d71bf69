"""Finite Markov chain primitives.

Transition matrices, sampled trajectories, transition counts, stationary
distributions, mixing times, and the low-rank soft-aggregation model
(row-stochastic U times column-stochastic V transposed).

Everything here works on dense arrays sized for a few thousand states;
all types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRowError, NonConvergentError, NotMixedError

ROW_SUM_TOL = 1e-10
ENTRY_SLACK = 1e-12

# p above which per-step sampling falls back to numpy searchsorted instead
# of materializing the cumulative rows as python lists.
_LIST_SAMPLING_MAX_P = 1024


def rng_from_seed(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for a 64-bit seed.

    Streams are bit-reproducible for a given seed on one platform.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def replication_seed(base_seed: int, rep: int) -> int:
    """Sub-seed for replication `rep` of an experiment seeded with `base_seed`."""
    return int(base_seed) + 1_000_000_000 * int(rep)


def _frozen_array(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic p x p matrix of one-step transition probabilities."""

    rows: np.ndarray

    def __post_init__(self):
        rows = _frozen_array(self.rows)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise ValueError(f"transition matrix must be square, got {rows.shape}")
        if rows.shape[0] < 2:
            raise ValueError("need at least 2 states")
        if rows.min() < 0.0 or rows.max() > 1.0 + ENTRY_SLACK:
            raise ValueError("transition probabilities must lie in [0, 1]")
        dev = np.abs(rows.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 within {ROW_SUM_TOL:g}, worst dev {dev:.3g}")
        object.__setattr__(self, "rows", rows)

    @property
    def p(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class StationaryDistribution:
    """Probability vector invariant under the chain."""

    pi: np.ndarray

    def __post_init__(self):
        pi = _frozen_array(self.pi)
        if pi.ndim != 1:
            raise ValueError("pi must be a vector")
        if pi.min() < 0.0:
            raise ValueError("pi must be nonnegative")
        if abs(pi.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("pi must sum to 1")
        object.__setattr__(self, "pi", pi)

    @property
    def p(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Observed state sequence X_0 .. X_n together with the seed that
    produced it (n = number of transitions)."""

    states: np.ndarray
    n: int
    seed: int

    def __post_init__(self):
        states = _frozen_array(self.states, dtype=np.int64)
        if states.ndim != 1:
            raise ValueError("states must be a vector")
        if states.shape[0] != self.n + 1:
            raise ValueError(f"expected n+1={self.n + 1} states, got {states.shape[0]}")
        if states.size and states.min() < 0:
            raise ValueError("state indices must be nonnegative")
        object.__setattr__(self, "states", states)


@dataclass(frozen=True)
class TransitionCounts:
    """p x p matrix N of observed transition counts.

    m holds the column sums (visits to each state as a destination) and
    n the total number of observed transitions.
    """

    p: int
    N: np.ndarray
    n: int
    m: np.ndarray

    def __post_init__(self):
        N = _frozen_array(self.N, dtype=np.int64)
        if N.shape != (self.p, self.p):
            raise ValueError(f"N must be {self.p}x{self.p}, got {N.shape}")
        if N.min() < 0:
            raise ValueError("counts must be nonnegative")
        m = _frozen_array(self.m, dtype=np.int64)
        if not np.array_equal(m, N.sum(axis=0)):
            raise ValueError("m must equal the column sums of N")
        if int(N.sum()) != self.n:
            raise ValueError("n must equal the total count")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matrix(cls, N) -> "TransitionCounts":
        N = np.asarray(N, dtype=np.int64)
        return cls(p=N.shape[0], N=N, n=int(N.sum()), m=N.sum(axis=0))


@dataclass(frozen=True)
class SoftAggregationModel:
    """Ground-truth factorization P = U V^T with planted anchor states.

    U is p x r row-stochastic (rows: meta-state membership of each state),
    V is p x r column-stochastic (columns: next-state distribution of each
    meta-state). anchor_sets[k] lists the states whose V row is supported
    on column k only; empty tuples mean the anchors are unknown.
    """

    p: int
    r: int
    U: np.ndarray
    V: np.ndarray
    anchor_sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not (2 <= self.r <= self.p):
            raise ValueError(f"need 2 <= r <= p, got r={self.r}, p={self.p}")
        U = _frozen_array(self.U)
        V = _frozen_array(self.V)
        if U.shape != (self.p, self.r) or V.shape != (self.p, self.r):
            raise ValueError("U and V must both be p x r")
        if U.min() < 0.0 or V.min() < 0.0:
            raise ValueError("U and V must be nonnegative")
        if np.abs(U.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
            raise ValueError("rows of U must sum to 1")
        if np.abs(V.sum(axis=0) - 1.0).max() > ROW_SUM_TOL:
            raise ValueError("columns of V must sum to 1")
        anchor_sets = tuple(tuple(int(j) for j in s) for s in self.anchor_sets)
        if len(anchor_sets) != self.r:
            raise ValueError("anchor_sets must have one entry per meta-state")
        for k, states in enumerate(anchor_sets):
            for j in states:
                if V[j, k] <= 0.0:
                    raise ValueError(f"anchor {j} of meta-state {k} has V[{j},{k}] <= 0")
                off = np.delete(V[j], k)
                if off.size and off.max() > 0.0:
                    raise ValueError(f"anchor {j} of meta-state {k} has off-column mass")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "anchor_sets", anchor_sets)

    def transition_matrix(self) -> TransitionMatrix:
        return TransitionMatrix(self.U @ self.V.T)

    @property
    def all_anchors(self) -> frozenset[int]:
        return frozenset(j for states in self.anchor_sets for j in states)

    def anchor_meta(self) -> dict[int, int]:
        """Map anchor state -> its meta-state."""
        return {j: k for k, states in enumerate(self.anchor_sets) for j in states}


def stationary_distribution(
    P: TransitionMatrix, tol: float = 1e-10, max_iter: int = 100_000
) -> StationaryDistribution:
    """Stationary distribution of an ergodic chain by damped power iteration.

    Iterates pi <- pi (P + I)/2 from a uniform start (the 1/2-lazy damping
    defeats periodicity) and stops once the *undamped* residual
    ||pi^T P - pi^T||_1 drops below tol. A second iteration from a ramp
    start probes for multiple stationary distributions; disagreement means
    the chain is reducible.

    Raises NonConvergentError on iteration budget exhaustion or when the
    probe exposes a non-unique stationary distribution.
    """
    rows = P.rows
    p = P.p

    def run(start: np.ndarray) -> np.ndarray:
        pi = start
        for _ in range(max_iter):
            y = pi @ rows
            if np.abs(y - pi).sum() <= tol:
                return pi
            pi = 0.5 * (y + pi)
            pi = pi / pi.sum()
        raise NonConvergentError(
            f"no stationary distribution found within {max_iter} iterations "
            f"(tol={tol:g}); the chain may be non-ergodic or ill-conditioned"
        )

    pi = run(np.full(p, 1.0 / p))
    probe = run(np.arange(1.0, p + 1.0) / (p * (p + 1.0) / 2.0))
    if np.abs(pi - probe).sum() > max(1e-6, 1e3 * tol):
        raise NonConvergentError(
            "power iterations from two starts disagree: the chain has multiple "
            "stationary distributions (reducible chain)"
        )
    return StationaryDistribution(pi)


def mixing_time(P: TransitionMatrix, pi: StationaryDistribution, k_max: int = 4096) -> int:
    """Smallest k >= 1 with max_i ||(P^k)_i - pi||_1 <= 1/2, by repeated
    multiplication. Raises NotMixedError if no such k <= k_max."""
    if pi.p != P.p:
        raise ValueError("pi and P have different sizes")
    target = pi.pi[None, :]
    power = P.rows
    for k in range(1, k_max + 1):
        if np.abs(power - target).sum(axis=1).max() <= 0.5:
            return k
        power = power @ P.rows
    raise NotMixedError(k_max)


def sample_trajectory(
    P: TransitionMatrix, n: int, x0: int | str = "stationary", seed: int = 0
) -> Trajectory:
    """Sample X_0 .. X_n from the chain.

    x0 is either a state index or "stationary", in which case X_0 is drawn
    from the stationary distribution (one extra uniform draw before the n
    step draws). Identical seeds give identical trajectories.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = P.p
    rng = rng_from_seed(seed)
    if isinstance(x0, str):
        if x0 != "stationary":
            raise ValueError(f"x0 must be a state index or 'stationary', got {x0!r}")
        pi = stationary_distribution(P).pi
        start = int(np.searchsorted(np.cumsum(pi), rng.random(), side="right"))
        start = min(start, p - 1)
    else:
        start = int(x0)
        if not (0 <= start < p):
            raise ValueError(f"x0={start} out of range for p={p}")

    u = rng.random(n)
    states = np.empty(n + 1, dtype=np.int64)
    states[0] = start
    cum = np.cumsum(P.rows, axis=1)
    if p <= _LIST_SAMPLING_MAX_P:
        cum_rows = cum.tolist()
        out = states.tolist()
        s = start
        last = p - 1
        for t, ut in enumerate(u.tolist()):
            nxt = bisect_right(cum_rows[s], ut)
            if nxt > last:
                nxt = last
            out[t + 1] = nxt
            s = nxt
        states = np.asarray(out, dtype=np.int64)
    else:
        s = start
        for t, ut in enumerate(u):
            nxt = int(np.searchsorted(cum[s], ut, side="right"))
            s = min(nxt, p - 1)
            states[t + 1] = s
    return Trajectory(states=states, n=n, seed=int(seed))


def count_transitions(t: Trajectory, p: int) -> TransitionCounts:
    """Tally N[i, j] = #{steps with X_t = i, X_{t+1} = j}."""
    states = t.states
    if states.max() >= p:
        raise ValueError(f"trajectory contains state {int(states.max())} >= p={p}")
    flat = states[:-1] * p + states[1:]
    N = np.bincount(flat, minlength=p * p).reshape(p, p)
    return TransitionCounts(p=p, N=N, n=t.n, m=N.sum(axis=0))


def empirical_transition_matrix(c: TransitionCounts, smoothing: float = 0.0) -> TransitionMatrix:
    """P_hat[i, j] = (N[i, j] + smoothing) / (row_sum_i + p * smoothing).

    With smoothing = 0 every state must have been visited as a source;
    otherwise EmptyRowError lists the offending states.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    row_sums = c.N.sum(axis=1).astype(float)
    if smoothing == 0.0:
        empty = np.flatnonzero(row_sums == 0)
        if empty.size:
            raise EmptyRowError(tuple(int(i) for i in empty))
    denom = row_sums + c.p * smoothing
    return TransitionMatrix((c.N + smoothing) / denom[:, None])
