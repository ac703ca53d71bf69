from pathlib import Path

import numpy as np
import pytest

from softagg import SoftAggregationModel, SynthSpec, generate_model
from softagg.fileio import sha256_of_file


@pytest.fixture
def hand_model() -> SoftAggregationModel:
    """Tiny p=4, r=2 model with one anchor per meta-state."""
    U = np.array([
        [1.0, 0.0],
        [0.0, 1.0],
        [0.5, 0.5],
        [0.3, 0.7],
    ])
    V = np.array([
        [0.5, 0.0],
        [0.0, 0.4],
        [0.3, 0.2],
        [0.2, 0.4],
    ])
    return SoftAggregationModel(p=4, r=2, U=U, V=V, anchor_sets=((0,), (1,)))


@pytest.fixture
def small_model() -> SoftAggregationModel:
    return generate_model(SynthSpec(p=40, r=3, anchors_per_meta=4, seed=7))


def random_transition_matrix(p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(p), size=p)


def random_simplex_cloud(r: int, n_interior: int, seed: int, concentration: float = 1.0):
    """Random nondegenerate simplex in R^(r-1): vertices plus interior
    convex combinations, shuffled. Returns (data, vertex matrix)."""
    rng = np.random.default_rng(seed)
    while True:
        B = rng.normal(size=(r, r - 1))
        M = np.hstack([np.ones((r, 1)), B])
        if abs(np.linalg.det(M)) > 1e-3:
            break
    weights = rng.dirichlet(np.full(r, concentration), size=n_interior)
    interior = weights @ B
    data = np.vstack([interior, B])
    order = rng.permutation(data.shape[0])
    return data[order], B


def hash_tree(root: Path, exclude=("run_manifest.json",)) -> dict[str, str]:
    """Content hashes of every file under root (manifests excluded: they
    carry wall-clock timings)."""
    return {
        str(p.relative_to(root)): sha256_of_file(p)
        for p in sorted(Path(root).rglob("*"))
        if p.is_file() and p.name not in exclude
    }
