"""Optimistic online learning under stochastically extended adversaries:
learners, two-layer ensembles, synthetic environments, guarantee calculators,
and a benchmark harness."""

from .ensemble import (
    AltOptimismEnsemble,
    NonsmoothEnsemble,
    PoolKind,
    SmoothEnsemble,
    StepSizePool,
    build_pool,
)
from .environments import (
    AdversarialEnv,
    CorruptedIidEnv,
    EndOfHorizonError,
    IidEnv,
    LimitedResourcesEnv,
    RandomOrderEnv,
    RoundSpec,
    SlowShiftAbsoluteEnv,
    SlowShiftQuadraticEnv,
    minimize_expected,
    sigma_tilde_sq_estimate,
)
from .geometry import (
    Ball,
    Box,
    DegenerateUpdateError,
    DimensionMismatchError,
    ProblemParams,
    Simplex,
    SolverFailureError,
    SpdMatrix,
    project_euclidean,
    project_mahalanobis,
    rank_one_inverse_update,
)
from .harness import (
    ExperimentConfig,
    ExperimentError,
    config_hash,
    emit,
    load_config,
    run_experiment,
    run_trial,
    summary_csv_bytes,
    summary_json_bytes,
)
from .learners import (
    ConfigurationError,
    FtrlConvex,
    FtrlExpConcave,
    FtrlStronglyConvex,
    ImplicitOmd,
    OmdConvex,
    OmdStronglyConvex,
    OnlineNewtonStep,
    make_learner,
)
from .losses import (
    Absolute,
    ExpectedLoss,
    Linear,
    ShiftedQuadratic,
    SquaredLinear,
    eval_loss,
    grad,
    prox,
)
from .metrics import (
    RegretLedger,
    VariationTracker,
    bound_value,
    dynamic_regret,
    fuzz_lemmas,
    lemma_oracle,
    nonsmooth_bound_forms,
    nonsmooth_dynamic_bound,
    smooth_dynamic_bound,
    static_regret,
)

__version__ = "0.1.0"
