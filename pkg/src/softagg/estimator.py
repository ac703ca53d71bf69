"""End-to-end estimation of the soft-aggregation model from counts.

Pipeline: scale counts -> top-r SVD -> SCORE embedding -> vertex hunting
-> barycentric weights -> disaggregation matrix V_hat -> aggregation
matrix U_hat by least squares -> anchor thresholding. The same pipeline
run on the exact population matrix (oracle mode) recovers U and V
exactly, which the tests rely on.

Meta-state labels follow vertex-hunting order and are arbitrary;
alignment against a ground truth happens in the evaluation module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import SingularGramError, SoftAggError, ZeroColumnError
from .markov import (
    SoftAggregationModel,
    TransitionCounts,
    TransitionMatrix,
    empirical_transition_matrix,
)
from .simplex import (
    SimplexVertices,
    WeightMatrix,
    hunt_vertices_cluster_sp,
    hunt_vertices_spa,
    score_normalize,
    solve_weights,
)
from .spectral import (
    ScaledCountMatrix,
    oracle_scaled_matrix,
    scale_counts,
    top_r_svd,
)

U_RIDGE = 1e-12
U_COND_LIMIT = 1e12


@dataclass(frozen=True)
class EstimateOptions:
    """Knobs for the estimation pipeline.

    on_zero_mass decides what happens to states never entered when
    smoothing is 0: "error" raises ZeroColumnError naming them, "drop"
    removes them (repeatedly, until no zero-mass state remains) and
    records the surviving state indices. smoothing > 0 adds the constant
    to every count entry, so zero-mass states cannot occur.
    """

    hunter: str = "spa"
    cluster_size: int | None = None
    seed: int = 0
    smoothing: float = 0.0
    on_zero_mass: str = "error"
    score_floor: float | None = None
    dense_cutoff: int | None = None

    def __post_init__(self):
        if self.hunter not in ("spa", "cluster-sp"):
            raise ValueError(f"unknown hunter {self.hunter!r}")
        if self.on_zero_mass not in ("error", "drop"):
            raise ValueError(f"on_zero_mass must be 'error' or 'drop', got {self.on_zero_mass!r}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")

    def as_dict(self) -> dict:
        return {
            "hunter": self.hunter,
            "cluster_size": self.cluster_size,
            "seed": self.seed,
            "smoothing": self.smoothing,
            "on_zero_mass": self.on_zero_mass,
            "score_floor": self.score_floor,
            "dense_cutoff": self.dense_cutoff,
        }


@dataclass(frozen=True)
class AggregationEstimate:
    """Output of the full pipeline.

    V_hat columns are probability vectors; U_hat is the raw least-squares
    solution (the canonical estimator, possibly with negative entries)
    and U_hat_projected its clipped-and-renormalized row-stochastic view.
    anchors is exactly {j : max_k W_hat[j,k] >= 1 - delta0}. kept_states
    maps the estimate's state indices back to the caller's when zero-mass
    states were dropped.
    """

    p: int
    r: int
    V_hat: np.ndarray
    U_hat: np.ndarray
    U_hat_projected: np.ndarray
    W_hat: WeightMatrix
    anchors: frozenset[int]
    delta0: float
    vertices: SimplexVertices | None = None
    provenance: dict = field(default_factory=dict)
    kept_states: tuple[int, ...] | None = None

    def __post_init__(self):
        V = np.array(self.V_hat, dtype=float)
        U = np.array(self.U_hat, dtype=float)
        Up = np.array(self.U_hat_projected, dtype=float)
        shape = (self.p, self.r)
        if V.shape != shape or U.shape != shape or Up.shape != shape:
            raise ValueError("V_hat, U_hat, U_hat_projected must all be p x r")
        if V.min() < 0 or np.abs(V.sum(axis=0) - 1.0).max() > 1e-10:
            raise ValueError("columns of V_hat must be probability vectors")
        if Up.min() < 0 or np.abs(Up.sum(axis=1) - 1.0).max() > 1e-10:
            raise ValueError("rows of U_hat_projected must be probability vectors")
        expected = frozenset(
            int(j) for j in np.flatnonzero(self.W_hat.W_hat.max(axis=1) >= 1.0 - self.delta0)
        )
        if frozenset(self.anchors) != expected:
            raise ValueError("anchors must equal the delta0 threshold set of W_hat")
        for arr in (V, U, Up):
            arr.setflags(write=False)
        object.__setattr__(self, "V_hat", V)
        object.__setattr__(self, "U_hat", U)
        object.__setattr__(self, "U_hat_projected", Up)
        object.__setattr__(self, "anchors", frozenset(int(j) for j in self.anchors))


def assemble_V(w: WeightMatrix, h1: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, int]:
    """V_hat = column-normalized diag(h1) diag(m)^(1/2) W_hat.

    Negative entries (possible only when h1 has negative components on
    badly sampled data) are clipped before normalization; the clip count
    is returned for the provenance record. Raises ZeroColumnError when a
    column vanishes, which signals failed vertex hunting.
    """
    scale = np.asarray(h1, dtype=float) * np.sqrt(np.asarray(m, dtype=float))
    M = scale[:, None] * w.W_hat
    clips = int((M < 0).sum())
    if clips:
        M = np.clip(M, 0.0, None)
    col_sums = M.sum(axis=0)
    dead = np.flatnonzero(col_sums <= 0.0)
    if dead.size:
        raise ZeroColumnError(tuple(int(k) for k in dead), context="V assembly")
    return M / col_sums[None, :], clips


def recover_U(
    P_hat: TransitionMatrix | np.ndarray, V_hat: np.ndarray
) -> tuple[np.ndarray, np.ndarray, bool, tuple[int, ...]]:
    """U_hat = P_hat V_hat (V_hat^T V_hat)^(-1), plus a projected view.

    The Gram matrix gets a small ridge when its condition number exceeds
    U_COND_LIMIT (flagged in the third return value). The projected view
    clips negatives row-wise and renormalizes; rows that clip to zero
    become uniform and are listed in the fourth return value.
    """
    P = P_hat.rows if isinstance(P_hat, TransitionMatrix) else np.asarray(P_hat, dtype=float)
    V = np.asarray(V_hat, dtype=float)
    r = V.shape[1]
    G = V.T @ V
    ridged = False
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > U_COND_LIMIT:
        G = G + (U_RIDGE * np.trace(G) / r) * np.eye(r)
        ridged = True
    try:
        U_raw = np.linalg.solve(G, (P @ V).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(f"Gram matrix of V_hat is singular even after ridging: {exc}") from exc
    if not np.isfinite(U_raw).all():
        raise SingularGramError("U recovery produced non-finite values")

    U_proj = np.clip(U_raw, 0.0, None)
    sums = U_proj.sum(axis=1)
    dead = np.flatnonzero(sums <= 0.0)
    if dead.size:
        U_proj[dead] = 1.0 / r
        sums = U_proj.sum(axis=1)
    U_proj = U_proj / sums[:, None]
    return U_raw, U_proj, ridged, tuple(int(i) for i in dead)


def detect_anchors(w: WeightMatrix, delta0: float) -> frozenset[int]:
    """States whose largest barycentric weight reaches 1 - delta0."""
    if not (0.0 < delta0 < 1.0):
        raise ValueError(f"delta0 must be in (0, 1), got {delta0}")
    return frozenset(int(j) for j in np.flatnonzero(w.W_hat.max(axis=1) >= 1.0 - delta0))


def _stage(exc: SoftAggError, name: str) -> SoftAggError:
    if exc.stage is None:
        exc.stage = name
    return exc


def _pipeline(
    scaled: ScaledCountMatrix,
    P_hat: TransitionMatrix | np.ndarray,
    r: int,
    delta0: float,
    options: EstimateOptions,
    mode: str,
    kept_states: tuple[int, ...] | None,
) -> AggregationEstimate:
    p = scaled.p
    try:
        decomp = top_r_svd(scaled, r, dense_cutoff=options.dense_cutoff)
    except SoftAggError as exc:
        raise _stage(exc, "svd")
    try:
        emb = score_normalize(decomp, floor=options.score_floor)
    except SoftAggError as exc:
        raise _stage(exc, "score")
    try:
        if options.hunter == "spa":
            verts = hunt_vertices_spa(emb, r)
        else:
            verts = hunt_vertices_cluster_sp(
                emb, r, L=options.cluster_size, seed=options.seed
            )
    except SoftAggError as exc:
        raise _stage(exc, "hunt")
    try:
        weights = solve_weights(emb, verts)
    except SoftAggError as exc:
        raise _stage(exc, "weights")
    try:
        V_hat, clips = assemble_V(weights, decomp.h1, scaled.m)
    except SoftAggError as exc:
        raise _stage(exc, "assemble_V")
    try:
        U_raw, U_proj, ridged, u_fallback = recover_U(P_hat, V_hat)
    except SoftAggError as exc:
        raise _stage(exc, "recover_U")
    anchors = detect_anchors(weights, delta0)

    provenance = {
        "mode": mode,
        "r": r,
        "delta0": delta0,
        "options": options.as_dict(),
        "score_floor_used": emb.floor,
        "invalid_rows": [int(j) for j in np.flatnonzero(~emb.valid_rows)],
        "weight_fallback_rows": list(weights.fallback_rows),
        "spa_pick_order": list(verts.source_indices) if verts.source_indices else None,
        "negative_clips": clips,
        "u_ridge_applied": ridged,
        "u_fallback_rows": list(u_fallback),
        "kept_states": list(kept_states) if kept_states is not None else None,
        "stage_hashes": {
            "scaled": fileio.sha256_of_array(scaled.tilde_N),
            "sigma": fileio.sha256_of_array(decomp.sigma),
            "H_hat": fileio.sha256_of_array(decomp.H_hat),
            "D_hat": fileio.sha256_of_array(emb.D_hat),
            "B_hat": fileio.sha256_of_array(verts.B_hat),
            "W_hat": fileio.sha256_of_array(weights.W_hat),
            "V_hat": fileio.sha256_of_array(V_hat),
            "U_hat": fileio.sha256_of_array(U_raw),
        },
    }
    return AggregationEstimate(
        p=p,
        r=r,
        V_hat=V_hat,
        U_hat=U_raw,
        U_hat_projected=U_proj,
        W_hat=weights,
        anchors=anchors,
        delta0=delta0,
        vertices=verts,
        provenance=provenance,
        kept_states=kept_states,
    )


def _rank_one_estimate(
    visitation: np.ndarray, delta0: float, mode: str, kept_states, provenance_extra: dict
) -> AggregationEstimate:
    # r = 1 degenerate convention: one meta-state emitting the visitation
    # distribution; every state is an anchor.
    p = visitation.shape[0]
    V = visitation[:, None] / visitation.sum()
    ones = np.ones((p, 1))
    weights = WeightMatrix(W_hat=ones.copy())
    provenance = {
        "mode": mode,
        "r": 1,
        "delta0": delta0,
        "kept_states": list(kept_states) if kept_states is not None else None,
        "stage_hashes": {"V_hat": fileio.sha256_of_array(V)},
    }
    provenance.update(provenance_extra)
    return AggregationEstimate(
        p=p,
        r=1,
        V_hat=V,
        U_hat=ones,
        U_hat_projected=ones,
        W_hat=weights,
        anchors=frozenset(range(p)),
        delta0=delta0,
        vertices=None,
        provenance=provenance,
        kept_states=kept_states,
    )


def _drop_zero_mass(counts: TransitionCounts) -> tuple[TransitionCounts, tuple[int, ...]]:
    keep = np.arange(counts.p)
    N = counts.N
    while True:
        mass = N.sum(axis=0)
        alive = np.flatnonzero(mass > 0)
        if alive.size == N.shape[0]:
            break
        if alive.size == 0:
            raise ZeroColumnError(tuple(int(j) for j in keep), context="zero-mass drop")
        N = N[np.ix_(alive, alive)]
        keep = keep[alive]
    return TransitionCounts.from_matrix(N), tuple(int(j) for j in keep)


def estimate(
    counts: TransitionCounts,
    r: int,
    delta0: float = 0.1,
    options: EstimateOptions | None = None,
) -> AggregationEstimate:
    """Run the full pipeline on observed transition counts.

    Deterministic given (counts, r, delta0, options); every intermediate
    artifact hash lands in the provenance record.
    """
    options = options or EstimateOptions()
    if not (0.0 < delta0 < 1.0):
        raise ValueError(f"delta0 must be in (0, 1), got {delta0}")
    if not (1 <= r <= counts.p):
        raise ValueError(f"need 1 <= r <= p, got r={r}, p={counts.p}")

    kept: tuple[int, ...] | None = None
    if options.smoothing == 0.0 and (counts.m == 0).any():
        if options.on_zero_mass == "drop":
            counts, kept = _drop_zero_mass(counts)
            if r > counts.p:
                raise ZeroColumnError(kept, context="zero-mass drop left fewer states than r")
        else:
            zeros = tuple(int(j) for j in np.flatnonzero(counts.m == 0))
            raise _stage(ZeroColumnError(zeros), "scale")

    if r == 1:
        if options.smoothing > 0:
            vis = counts.m + counts.p * options.smoothing
        else:
            vis = counts.m.astype(float)
        return _rank_one_estimate(
            vis, delta0, "counts", kept, {"options": options.as_dict()}
        )

    try:
        scaled = scale_counts(counts, smoothing=options.smoothing)
    except SoftAggError as exc:
        raise _stage(exc, "scale")
    try:
        P_hat = empirical_transition_matrix(counts, smoothing=options.smoothing)
    except SoftAggError as exc:
        raise _stage(exc, "empirical_P")
    return _pipeline(scaled, P_hat, r, delta0, options, "counts", kept)


def estimate_oracle(
    model: SoftAggregationModel,
    r: int | None = None,
    delta0: float = 0.1,
    options: EstimateOptions | None = None,
) -> AggregationEstimate:
    """Run the pipeline on the exact population matrix of a model.

    Recovery is exact up to numerical precision and meta-state
    permutation; r defaults to the model's own rank.
    """
    options = options or EstimateOptions()
    r = model.r if r is None else r
    scaled = oracle_scaled_matrix(model)
    if r == 1:
        return _rank_one_estimate(
            scaled.m.copy(), delta0, "oracle", None, {"options": options.as_dict()}
        )
    P = model.transition_matrix()
    return _pipeline(scaled, P, r, delta0, options, "oracle", None)


# -- archives ----------------------------------------------------------------

def save_estimate(directory, est: AggregationEstimate, manifest_extra: dict | None = None) -> None:
    """Write the estimate archive: V_hat.csv, U_hat.csv, U_hat_projected.csv,
    W_hat.csv, vertices.csv (when present), anchors.json, flags.json and
    run_manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fileio.write_matrix_csv(d / "V_hat.csv", est.V_hat)
    fileio.write_matrix_csv(d / "U_hat.csv", est.U_hat)
    fileio.write_matrix_csv(d / "U_hat_projected.csv", est.U_hat_projected)
    fileio.write_matrix_csv(d / "W_hat.csv", est.W_hat.W_hat)
    if est.vertices is not None:
        fileio.write_matrix_csv(d / "vertices.csv", est.vertices.B_hat)
    fileio.write_json(
        d / "anchors.json",
        {"delta0": est.delta0, "anchors": sorted(est.anchors)},
    )
    flags = {
        "weight_fallback_rows": list(est.W_hat.fallback_rows),
        "kept_states": list(est.kept_states) if est.kept_states is not None else None,
        "hunter": est.provenance.get("options", {}).get("hunter"),
        "invalid_rows": est.provenance.get("invalid_rows", []),
        "spa_pick_order": est.provenance.get("spa_pick_order"),
    }
    fileio.write_json(d / "flags.json", flags)
    manifest = {"p": est.p, "r": est.r, "provenance": est.provenance}
    if manifest_extra:
        manifest.update(manifest_extra)
    fileio.write_json(d / "run_manifest.json", manifest)


def load_estimate(directory) -> AggregationEstimate:
    d = Path(directory)
    V = fileio.read_matrix_csv(d / "V_hat.csv")
    U = fileio.read_matrix_csv(d / "U_hat.csv")
    Up = fileio.read_matrix_csv(d / "U_hat_projected.csv")
    W = fileio.read_matrix_csv(d / "W_hat.csv")
    anchors_info = fileio.read_json(d / "anchors.json")
    flags = fileio.read_json(d / "flags.json")
    manifest = fileio.read_json(d / "run_manifest.json")
    vertices = None
    if (d / "vertices.csv").exists():
        vertices = SimplexVertices(B_hat=fileio.read_matrix_csv(d / "vertices.csv"))
    kept = flags.get("kept_states")
    return AggregationEstimate(
        p=V.shape[0],
        r=V.shape[1],
        V_hat=V,
        U_hat=U,
        U_hat_projected=Up,
        W_hat=WeightMatrix(
            W_hat=W, fallback_rows=tuple(flags.get("weight_fallback_rows", ()))
        ),
        anchors=frozenset(anchors_info["anchors"]),
        delta0=anchors_info["delta0"],
        vertices=vertices,
        provenance=manifest.get("provenance", {}),
        kept_states=tuple(kept) if kept is not None else None,
    )
