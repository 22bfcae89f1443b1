"""Change-point detection for low-rank, high-dimensional VAR(1) processes.

The package is organised in layers:

* :mod:`varcpd.var_model` simulates stable low-rank VAR(1) trajectories with
  an optional change in the transition matrix;
* :mod:`varcpd.estimator` fits nuclear-norm penalised least squares on a
  segment;
* :mod:`varcpd.detection` turns segment fits into change-point statistics and
  the closed-form test;
* :mod:`varcpd.calibration` calibrates the test by Monte Carlo under fitted
  null models;
* :mod:`varcpd.harness` and :mod:`varcpd.cli` run replicated power studies.
"""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .var_model import (
    ChangeSpec,
    NoiseModel,
    TransitionMatrix,
    Trajectory,
    change_energy,
    location_weight,
    make_change_pair,
    max_feasible_jump,
    random_low_rank_transition,
    simulate,
    simulate_batch,
    solve_lyapunov,
)
from .estimator import (
    EstimateResult,
    PenaltyMode,
    SegmentProblem,
    SolverConfig,
    StepRule,
    default_lambda,
    estimate,
    estimate_long,
    estimate_short,
    kkt_residual,
    nuclear_norm,
    objective,
    segment_problem,
    svt,
)
from .detection import (
    CandidateGrid,
    FixedLambda,
    GridKind,
    ScaledLambda,
    TheoreticalLambda,
    ThresholdInputs,
    argmax_changepoint,
    custom_grid,
    dyadic_grid,
    f_statistic,
    full_grid,
    g_statistic,
    objective_gaps,
    pair_statistics,
    run_theoretical_test,
    single_point,
    threshold_H,
    window_grid,
)
from .calibration import (
    CalibrationConfig,
    DetectionResult,
    QuantileSource,
    QuantileTable,
    calibrate_null,
    cross_validate_constants,
    detect,
    simulate_quantile,
    simulate_quantile_table,
)
from .harness import (
    PowerRow,
    Preset,
    ScenarioConfig,
    emit_power_csv,
    preset_figures,
    run_scenario,
    wilson_interval,
)
