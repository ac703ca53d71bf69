"""File formats and archives.

Matrices are CSV, row-major, no header, 17 significant digits (lossless
float64 round trip). Trajectories are one state index per line. Count
matrices use a "p n" header followed by sparse "i j count" triplets.
JSON is written with sorted keys so identical runs produce identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .markov import SoftAggregationModel, TransitionCounts, Trajectory


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(format_float(x) for x in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    try:
        rows = [
            [float(tok) for tok in line.split(",")]
            for line in text.splitlines()
            if line.strip()
        ]
    except ValueError as exc:
        raise DataError(f"bad matrix entry in {path}: {exc}") from exc
    if not rows:
        raise DataError(f"empty matrix file {path}")
    return np.asarray(rows, dtype=float)


def write_trajectory(path, t: Trajectory) -> None:
    Path(path).write_text("\n".join(str(int(s)) for s in t.states) + "\n", encoding="utf-8")


def read_trajectory(path, seed: int = 0) -> Trajectory:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError(f"trajectory file {path} needs at least 2 states")
    try:
        states = np.asarray([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"bad state index in {path}: {exc}") from exc
    return Trajectory(states=states, n=len(states) - 1, seed=seed)


def write_counts(path, c: TransitionCounts) -> None:
    lines = [f"{c.p} {c.n}"]
    ii, jj = np.nonzero(c.N)
    for i, j in zip(ii.tolist(), jj.tolist()):
        lines.append(f"{i} {j} {int(c.N[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_counts(path) -> TransitionCounts:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"empty counts file {path}")
    try:
        p, n = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise DataError(f"bad counts header in {path}: {lines[0]!r}") from exc
    N = np.zeros((p, p), dtype=np.int64)
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != 3:
            raise DataError(f"bad counts triplet in {path}: {ln!r}")
        try:
            i, j, cnt = int(toks[0]), int(toks[1]), int(toks[2])
            N[i, j] += cnt
        except (ValueError, IndexError) as exc:
            raise DataError(f"bad counts triplet in {path}: {ln!r}") from exc
    c = TransitionCounts.from_matrix(N)
    if c.n != n:
        raise DataError(f"counts file {path} header says n={n} but triplets sum to {c.n}")
    return c


def write_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from exc


def sha256_of_array(arr: np.ndarray) -> str:
    data = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(data.dtype).encode())
    h.update(str(data.shape).encode())
    h.update(data.tobytes())
    return h.hexdigest()


def sha256_of_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- model archives ----------------------------------------------------------

def save_model(directory, model: SoftAggregationModel, spec_info: dict | None = None) -> None:
    """Write U.csv, V.csv, anchors.json and spec.json into `directory`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "U.csv", model.U)
    write_matrix_csv(d / "V.csv", model.V)
    write_json(
        d / "anchors.json",
        {str(k): list(states) for k, states in enumerate(model.anchor_sets)},
    )
    info = {"p": model.p, "r": model.r}
    if spec_info:
        info.update(spec_info)
    write_json(d / "spec.json", info)


def load_model(directory) -> SoftAggregationModel:
    d = Path(directory)
    U = read_matrix_csv(d / "U.csv")
    V = read_matrix_csv(d / "V.csv")
    anchors = read_json(d / "anchors.json")
    r = U.shape[1]
    anchor_sets = tuple(tuple(anchors.get(str(k), ())) for k in range(r))
    return SoftAggregationModel(p=U.shape[0], r=r, U=U, V=V, anchor_sets=anchor_sets)
