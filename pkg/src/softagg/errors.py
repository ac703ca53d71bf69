"""Exception hierarchy shared across the package.

DataError covers malformed or insufficient input (CLI exit code 2);
NumericalError covers failures of the numerical procedures themselves
(CLI exit code 3).
"""

from __future__ import annotations


class SoftAggError(Exception):
    """Base class for all package errors.

    A pipeline may attach a ``stage`` attribute to locate where in a
    multi-step computation the error occurred.
    """

    stage: str | None = None

    def __str__(self) -> str:
        base = super().__str__()
        if self.stage:
            return f"[stage: {self.stage}] {base}"
        return base


class DataError(SoftAggError):
    """Input data is malformed, inconsistent, or insufficient."""


class NumericalError(SoftAggError):
    """A numerical procedure failed or did not converge."""


class NonConvergentError(NumericalError):
    """Stationary-distribution iteration failed; the chain is likely
    non-ergodic (e.g. reducible) or severely ill-conditioned."""


class NotMixedError(NumericalError):
    """The chain did not mix within the allotted number of steps."""

    def __init__(self, k_max: int):
        super().__init__(f"chain not mixed within k_max={k_max} steps")
        self.k_max = k_max


class EmptyRowError(DataError):
    """States never observed as a transition source; the empirical
    transition matrix is undefined without smoothing."""

    def __init__(self, states: tuple[int, ...]):
        super().__init__(
            f"states never visited as a source (empty count rows): {list(states)}; "
            "use smoothing or drop them"
        )
        self.states = tuple(states)


class ZeroColumnError(DataError):
    """States never entered (zero column mass); callers must drop or
    smooth before column scaling."""

    def __init__(self, states: tuple[int, ...], context: str = "column scaling"):
        super().__init__(
            f"zero-mass states in {context}: {list(states)}; drop or smooth them"
        )
        self.states = tuple(states)


class TooManyInvalidRowsError(NumericalError):
    """Too many near-zero leading-singular-vector entries; the chain is
    under-sampled for SCORE normalization."""

    def __init__(self, invalid: int, total: int, floor: float):
        super().__init__(
            f"{invalid}/{total} rows have leading singular vector entries below "
            f"floor {floor:.3g} (limit is 20%); the chain looks under-sampled"
        )
        self.invalid = invalid
        self.total = total


class DegenerateDataError(NumericalError):
    """Vertex hunting collapsed before finding the requested number of
    vertices; the embedded point cloud is degenerate."""


class SingularSystemError(NumericalError):
    """The ridge-stabilized weight system is numerically singular."""


class SingularGramError(NumericalError):
    """The Gram matrix of the estimated disaggregation columns is singular
    even after ridging."""


class MissingColumnError(DataError):
    def __init__(self, column: str, available: tuple[str, ...]):
        super().__init__(f"column {column!r} not found; file has {list(available)}")
        self.column = column


class EmptyFileError(DataError):
    def __init__(self, path):
        super().__init__(f"no data rows in {path}")
        self.path = path


class DimensionMismatchError(DataError):
    def __init__(self, message: str):
        super().__init__(message)
