"""Quickest detection of a rate up-shift in a compound Poisson observation stream.

The observation process has baseline arrival rate ``mu``; at a hidden
exponential time the rate rises to ``mu + 1`` or ``mu + 2`` and the jump-size
law may change too.  The package filters the two-dimensional sufficient
statistic of the change, solves the optimal-stopping problem by grid value
iteration with an analytic error bound, classifies parameters into the
closed-form regimes, and estimates Bayes risk of stopping rules by seeded
Monte Carlo under either the physical or the reference law.
"""

__version__ = "0.1.0"

from .errors import (
    DisorderError,
    InvalidParamsError,
    MarkSupportError,
    PathDataError,
    RegionUndefinedError,
    SolverInvariantError,
)
from .model import (
    DegenerateMarks,
    ExponentialPairMarks,
    FiniteDiscreteMarks,
    MarkModel,
    ModelParams,
    RegimeClass,
    Statistic,
    classify_regime,
    initial_statistic,
    likelihood_ratio,
    load_params,
    validate_params,
)
from .flow import (
    RegionSpec,
    deterministic_exit_time,
    discounted_flow_cost,
    drift,
    flow,
    flow_xy,
    in_advantageous_region,
    in_region,
    jump_update,
    mean_reversion_point,
    region_spec,
    sum_drift,
    sum_threshold_exit_time,
)
from .simulate import (
    PathBatch,
    PathRecord,
    read_paths_jsonl,
    sample_batch,
    sample_path_physical,
    sample_path_reference,
    stream_events,
    write_paths_jsonl,
)
from .filtering import (
    Trajectory,
    evolve_filter,
    export_trajectory_csv,
    odds_invert,
    odds_reconstruct,
    posterior,
    pre_jump_statistic,
    statistic_at,
)
from .solve import (
    Boundary,
    GridSpec,
    ValueGrid,
    bellman_value,
    convergence_factor,
    default_grid_spec,
    delay_equation_residual,
    error_bound,
    extract_boundary,
    interpolate,
    interpolate_many,
    load_value_grid,
    post_jump_average,
    running_integrand,
    save_value_grid,
    stage_exit_time,
    value_iteration,
)
from .policy import (
    AdvantageExitStop,
    GridBoundaryStop,
    HittingTimeCheck,
    ImmediateStop,
    PolicyComparison,
    PolicySpec,
    PosteriorThresholdStop,
    RiskEstimate,
    StagedLadderStop,
    StopOutcome,
    bayes_risk_physical,
    bayes_risk_reference,
    compare_policies,
    hitting_time_bound_check,
    stopping_time,
)

__all__ = [name for name in dir() if not name.startswith("_")]
