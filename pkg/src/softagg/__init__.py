"""Learning soft state-aggregation models of finite Markov chains.

A p-state transition matrix with r latent meta-states factorizes as
P = U V^T where rows of U are per-state meta-state memberships and
columns of V are per-meta-state next-state distributions. This package
estimates (U, V) and the anchor states from a single observed trajectory
via a spectral embedding and simplex vertex hunting, and ships the
synthetic-experiment harness used to check the estimator's error rates.
"""

from .errors import (
    DataError,
    DegenerateDataError,
    DimensionMismatchError,
    EmptyFileError,
    EmptyRowError,
    MissingColumnError,
    NonConvergentError,
    NotMixedError,
    NumericalError,
    SingularGramError,
    SingularSystemError,
    SoftAggError,
    TooManyInvalidRowsError,
    ZeroColumnError,
)
from .estimator import (
    AggregationEstimate,
    EstimateOptions,
    assemble_V,
    detect_anchors,
    estimate,
    estimate_oracle,
    load_estimate,
    recover_U,
    save_estimate,
)
from .evaluation import (
    AlignedErrors,
    CellRecord,
    PComparison,
    RateFit,
    SingularDiagnostics,
    SweepConfig,
    align_and_score,
    compare_P_estimators,
    fit_log_slope,
    rate_sweep,
    singular_diagnostics,
)
from .ingest import (
    GridSpec,
    IngestSummary,
    StateDictionary,
    ingest_coordinate_trips,
    ingest_labeled_trips,
)
from .markov import (
    SoftAggregationModel,
    StationaryDistribution,
    Trajectory,
    TransitionCounts,
    TransitionMatrix,
    count_transitions,
    empirical_transition_matrix,
    mixing_time,
    replication_seed,
    rng_from_seed,
    sample_trajectory,
    stationary_distribution,
)
from .simplex import (
    ScoreEmbedding,
    SimplexVertices,
    WeightMatrix,
    hunt_vertices_cluster_sp,
    hunt_vertices_spa,
    score_normalize,
    score_rows,
    solve_weights,
)
from .spectral import (
    RankDeficientWarning,
    ScaledCountMatrix,
    SpectralDecomposition,
    oracle_scaled_matrix,
    scale_counts,
    top_r_svd,
)
from .synth import (
    RegularityReport,
    SynthSpec,
    check_regularity,
    generate_model,
    state_posterior_margins,
)

__version__ = "0.1.0"
