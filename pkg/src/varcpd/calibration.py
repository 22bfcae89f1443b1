"""Practical calibration: cross-validated penalties, Monte Carlo quantiles of
``G(t)`` under fitted null models, and the resulting detection procedure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detection import (
    CandidateGrid,
    ScaledLambda,
    TestEvaluation,
    evaluate_rejections,
    pair_statistics,
)
from .estimator import SolverConfig, estimate, segment_problem
from .exceptions import ConfigInvalid, DegenerateSplit, SolverFailure, ZeroMatrix
from .var_model import NoiseModel, Trajectory, TransitionMatrix, simulate_batch, solve_lyapunov

__all__ = [
    "DEFAULT_CONSTANT_GRID",
    "CalibrationConfig",
    "CVResult",
    "QuantileSource",
    "QuantileTable",
    "DetectionResult",
    "boundary_length",
    "cross_validate_constants",
    "validation_loss",
    "empirical_quantile",
    "simulate_statistics",
    "simulate_quantile",
    "simulate_quantile_table",
    "adjust_operator_norm",
    "estimate_gamma",
    "decide",
    "detect",
    "NullCalibration",
    "calibrate_null",
    "check_pipeline_inputs",
]

DEFAULT_CONSTANT_GRID = tuple(np.logspace(-2, 1, 20))
GAMMA_CAP = 0.95


@dataclass(frozen=True)
class CalibrationConfig:
    """Settings of the practical procedure.

    ``h=None`` uses boundary intervals of ``5 p`` observations.
    """

    h: Optional[float] = None
    delta: float = 0.8
    constant_grid: tuple = DEFAULT_CONSTANT_GRID
    quantile_samples: int = 1500
    alpha: float = 0.05

    def __post_init__(self):
        grid = tuple(sorted(float(c) for c in self.constant_grid))
        object.__setattr__(self, "constant_grid", grid)
        if not grid or grid[0] <= 0:
            raise ConfigInvalid("constant grid must be non-empty and positive")
        if not 0 < self.delta < 1:
            raise ConfigInvalid("delta must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigInvalid("alpha must lie in (0, 1)")
        if self.quantile_samples < 2:
            raise ConfigInvalid("need at least 2 quantile samples")
        if self.h is not None and not 0 < self.h < 0.5:
            raise ConfigInvalid("h must lie in (0, 1/2)")

    def resolve_h(self, T: int, p: int) -> float:
        return 5.0 * p / T if self.h is None else self.h


def boundary_length(T: int, h: float) -> int:
    """``floor(T h)``, robust to ``T h`` landing a hair below an integer."""
    return int(math.floor(T * h + 1e-9))


# ----------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    c1: float
    c2: float
    grid: tuple
    losses1: np.ndarray
    losses2: np.ndarray


def _cv_windows(T: int, th: int, delta: float):
    n_train = int(math.floor(delta * th + 1e-9))
    n_valid = int(math.floor((1 - delta) * th + 1e-9))
    if n_train < 2 or n_valid < 1:
        raise DegenerateSplit(f"floor(delta Th)={n_train}, floor((1-delta) Th)={n_valid}")
    head_fit = (1, n_train)
    head_valid = (n_train, th)
    tail_fit = (T - th, T - n_valid)
    tail_valid = (T - n_valid, T)
    return head_fit, head_valid, tail_fit, tail_valid


def validation_loss(traj: Trajectory, theta: np.ndarray, t1: int, t2: int) -> float:
    """``sum_{t=t1}^{t2-1} ||X_{t+1} - Theta X_t||^2``."""
    resid = traj.responses(t1, t2) - theta @ traj.predictors(t1, t2)
    return float(np.sum(resid**2))


def _fit_constant(traj, fit, c, cfg):
    t1, t2 = fit
    lam = c * math.sqrt(traj.p / (t2 - t1))
    return estimate(segment_problem(traj, t1, t2, lam), cfg).theta_hat


def cross_validate_constants(
    traj: Trajectory,
    h: float,
    delta: float = 0.8,
    grid: Sequence[float] = DEFAULT_CONSTANT_GRID,
    cfg: SolverConfig = SolverConfig(),
) -> CVResult:
    """Pick ``c1`` (head) and ``c2`` (tail) for ``lam = c sqrt(p / n)``.

    The head fit uses ``X_1..X_{floor(delta Th)}`` and is validated on the
    one-step predictions up to ``X_{floor(Th)}``; the tail mirrors this on the
    last ``floor(Th)`` observations. Ties go to the smallest constant.
    """
    grid = tuple(sorted(float(c) for c in grid))
    if not grid:
        raise ConfigInvalid("constant grid is empty")
    T, p = traj.T, traj.p
    th = boundary_length(T, h)
    if th < p + 2:
        raise ConfigInvalid(f"floor(T h)={th} must be at least p + 2 = {p + 2}")
    head_fit, head_valid, tail_fit, tail_valid = _cv_windows(T, th, delta)
    losses1 = np.array(
        [validation_loss(traj, _fit_constant(traj, head_fit, c, cfg), *head_valid) for c in grid]
    )
    losses2 = np.array(
        [validation_loss(traj, _fit_constant(traj, tail_fit, c, cfg), *tail_valid) for c in grid]
    )
    return CVResult(grid[int(np.argmin(losses1))], grid[int(np.argmin(losses2))], grid, losses1, losses2)


# ----------------------------------------------------------------------------
# Monte Carlo quantiles


class QuantileSource(enum.Enum):
    FIRST = "first"
    LAST = "last"
    MAX = "max"


@dataclass
class QuantileTable:
    ts: tuple
    quantiles: np.ndarray
    source: QuantileSource
    alpha: float
    sample_count: int
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.quantiles = np.asarray(self.quantiles, dtype=float)
        if not np.all(np.isfinite(self.quantiles)):
            raise SolverFailure("non-finite quantile")

    def __getitem__(self, t: int) -> float:
        return float(self.quantiles[self.ts.index(t)])

    def as_dict(self) -> dict:
        return dict(zip(self.ts, self.quantiles.tolist()))

    @classmethod
    def combine(cls, first: "QuantileTable", last: "QuantileTable") -> "QuantileTable":
        if first.ts != last.ts:
            raise ConfigInvalid("quantile tables cover different candidates")
        return cls(
            first.ts,
            np.maximum(first.quantiles, last.quantiles),
            QuantileSource.MAX,
            first.alpha,
            first.sample_count,
        )


def empirical_quantile(samples, alpha: float) -> np.ndarray:
    """Ascending order statistic at 0-based index ``ceil((1 - alpha) S)``,
    capped at ``S - 1``. Works along the first axis.
    """
    x = np.sort(np.asarray(samples, dtype=float), axis=0)
    S = x.shape[0]
    idx = min(int(math.ceil((1.0 - alpha) * S - 1e-9)), S - 1)
    return x[idx]


def simulate_statistics(
    theta,
    noise: NoiseModel,
    pool: np.ndarray,
    ts: Sequence[int],
    T: int,
    S: int,
    lam_rule,
    cfg: SolverConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """``G_s(t)`` for ``S`` trajectories of the stationary ``VAR(theta)``
    started from rows of ``pool`` drawn with replacement. Shape ``(S, K)``.

    All candidates share the same simulated trajectories.
    """
    if S < 2:
        raise ConfigInvalid("need at least 2 replicates")
    a = np.asarray(getattr(theta, "entries", theta), dtype=float)
    solve_lyapunov(a, noise)
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if pool.shape[0] == 0:
        raise ConfigInvalid("empty starting-point pool")
    starts = pool[rng.integers(0, pool.shape[0], size=S)]
    x = simulate_batch(a, a, T, noise, T, starts, rng)
    stats = pair_statistics(x, ts, lam_rule, cfg)
    failed = np.flatnonzero(~stats.converged.all(axis=1))
    if failed.size:
        raise SolverFailure(f"quantile replicate {int(failed[0])} did not converge")
    return stats.g


def simulate_quantile_table(
    theta,
    noise: NoiseModel,
    pool: np.ndarray,
    alpha: float,
    ts: Sequence[int],
    T: int,
    S: int,
    lam_rule,
    cfg: SolverConfig = SolverConfig(),
    rng: Optional[np.random.Generator] = None,
    source: QuantileSource = QuantileSource.FIRST,
) -> QuantileTable:
    rng = np.random.default_rng() if rng is None else rng
    ts = tuple(int(t) for t in ts)
    g = simulate_statistics(theta, noise, pool, ts, T, S, lam_rule, cfg, rng)
    return QuantileTable(ts, empirical_quantile(g, alpha), source, alpha, S, samples=g)


def simulate_quantile(
    theta,
    noise: NoiseModel,
    pool: np.ndarray,
    alpha: float,
    t: int,
    T: int,
    S: int,
    lam_rule,
    cfg: SolverConfig = SolverConfig(),
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Monte Carlo ``(1 - alpha)`` quantile of ``G(t)`` under ``VAR(theta)``."""
    table = simulate_quantile_table(theta, noise, pool, alpha, [t], T, S, lam_rule, cfg, rng)
    return float(table.quantiles[0])


# ----------------------------------------------------------------------------
# pipeline


def adjust_operator_norm(theta_hat, gamma_target: float) -> TransitionMatrix:
    """Rescale to operator norm ``gamma_target``."""
    if not 0 < gamma_target < 1:
        raise ConfigInvalid("gamma_target must lie in (0, 1)")
    a = np.asarray(getattr(theta_hat, "entries", theta_hat), dtype=float)
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        raise ZeroMatrix("cannot rescale a zero matrix")
    out = a * (gamma_target / s[0])
    rank = max(1, int(np.count_nonzero(s > 1e-8 * s[0])))
    return TransitionMatrix(out, rank, gamma_target)


def estimate_gamma(theta_hat) -> float:
    """Operator norm of an estimate, capped at 0.95."""
    a = np.asarray(getattr(theta_hat, "entries", theta_hat), dtype=float)
    g = float(np.linalg.norm(a, 2))
    if g == 0:
        raise ZeroMatrix("cannot infer gamma from a zero matrix")
    return min(g, GAMMA_CAP)


@dataclass
class DetectionResult:
    psi: bool
    evaluations: list
    constants: CVResult
    quantiles_first: QuantileTable
    quantiles_last: QuantileTable
    quantiles: QuantileTable
    g_values: np.ndarray
    theta_first: TransitionMatrix
    theta_last: TransitionMatrix

    def report_rows(self):
        """Rows ``(t, g_stat, q1, q2, reject)``."""
        return [
            (e.t, e.statistic, float(q1), float(q2), e.reject)
            for e, q1, q2 in zip(
                self.evaluations, self.quantiles_first.quantiles, self.quantiles_last.quantiles
            )
        ]


def _boundary_estimate(traj, t1, t2, c, grid, cfg):
    """Fit on ``X_{t1}..X_{t2}`` with constant ``c``; if the fit is zero, retry
    with the next smaller grid constants so the result can be rescaled."""
    n = t2 - t1
    candidates = [c] + [g for g in reversed(grid) if g < c]
    for const in candidates:
        theta = estimate(segment_problem(traj, t1, t2, const * math.sqrt(traj.p / n)), cfg).theta_hat
        if np.any(theta):
            return theta
    raise ZeroMatrix(f"boundary estimate on [{t1}, {t2}] is zero for every grid constant")


def decide(ts, g_values, q_first, q_last) -> tuple[bool, list]:
    """Reject at ``t`` when ``G(t) > max(q1(t), q2(t))``."""
    thresholds = np.maximum(np.asarray(q_first, dtype=float), np.asarray(q_last, dtype=float))
    return evaluate_rejections(ts, g_values, thresholds)


@dataclass
class NullCalibration:
    """Fitted boundary models and the simulated quantile tables."""

    constants: CVResult
    theta_first: TransitionMatrix
    theta_last: TransitionMatrix
    quantiles_first: QuantileTable
    quantiles_last: QuantileTable

    @property
    def lam_rule(self) -> ScaledLambda:
        return ScaledLambda(self.constants.c1, self.constants.c2)


def check_pipeline_inputs(T: int, p: int, grid: CandidateGrid, config: CalibrationConfig) -> int:
    """Validate the practical-pipeline preconditions; returns ``floor(Th)``."""
    h = config.resolve_h(T, p)
    if not p / T < h < 0.5:
        raise ConfigInvalid(f"h={h:.4g} must lie in (p/T, 1/2) = ({p / T:.4g}, 0.5)")
    th = boundary_length(T, h)
    if T < 2 * math.ceil(T * h) + 2:
        raise ConfigInvalid(f"T={T} must be at least 2 ceil(Th) + 2")
    if grid.T != T:
        raise ConfigInvalid(f"grid built for T={grid.T}, trajectory has T={T}")
    if grid.points[0] < th or grid.points[-1] > T - th:
        raise ConfigInvalid(f"grid must lie inside [Th, T - Th] = [{th}, {T - th}]")
    return th


def calibrate_null(
    traj: Trajectory,
    gamma1: Optional[float],
    gamma2: Optional[float],
    grid: CandidateGrid,
    config: CalibrationConfig = CalibrationConfig(),
    cfg: SolverConfig = SolverConfig(),
    rng: Optional[np.random.Generator] = None,
    noise: Optional[NoiseModel] = None,
) -> NullCalibration:
    """Cross-validate the penalty constants, fit the boundary models and
    simulate the ``G(t)`` quantile tables under both of them."""
    rng = np.random.default_rng() if rng is None else rng
    T, p = traj.T, traj.p
    noise = NoiseModel.identity(p) if noise is None else noise
    th = check_pipeline_inputs(T, p, grid, config)
    h = config.resolve_h(T, p)
    rng_first, rng_last = rng.spawn(2)

    cv = cross_validate_constants(traj, h, config.delta, config.constant_grid, cfg)
    lam_rule = ScaledLambda(cv.c1, cv.c2)

    head = _boundary_estimate(traj, 1, th, cv.c1, cv.grid, cfg)
    tail = _boundary_estimate(traj, T - th + 1, T, cv.c2, cv.grid, cfg)
    g1 = estimate_gamma(head) if gamma1 is None else gamma1
    g2 = estimate_gamma(tail) if gamma2 is None else gamma2
    theta_first = adjust_operator_norm(head, g1)
    theta_last = adjust_operator_norm(tail, g2)

    alpha, S = config.alpha, config.quantile_samples
    q1 = simulate_quantile_table(
        theta_first, noise, traj.samples[: th + 1], alpha, grid.points, T, S,
        lam_rule, cfg, rng_first, QuantileSource.FIRST,
    )
    q2 = simulate_quantile_table(
        theta_last, noise, traj.samples[T - th :], alpha, grid.points, T, S,
        lam_rule, cfg, rng_last, QuantileSource.LAST,
    )
    return NullCalibration(cv, theta_first, theta_last, q1, q2)


def detect(
    traj: Trajectory,
    gamma1: Optional[float],
    gamma2: Optional[float],
    grid: CandidateGrid,
    config: CalibrationConfig = CalibrationConfig(),
    cfg: SolverConfig = SolverConfig(),
    rng: Optional[np.random.Generator] = None,
    noise: Optional[NoiseModel] = None,
) -> DetectionResult:
    """Run the calibrated test on ``traj``.

    1. cross-validate ``c1``, ``c2`` on the boundary intervals;
    2. fit the head/tail matrices on the first/last ``floor(Th)`` observations
       and rescale them to operator norms ``gamma1``/``gamma2`` (estimated
       when ``None``);
    3. simulate ``G(t)`` quantiles under both fitted null models;
    4. compare ``G(t)`` on the data with the larger quantile.
    """
    null = calibrate_null(traj, gamma1, gamma2, grid, config, cfg, rng, noise)
    cv, lam_rule = null.constants, null.lam_rule
    theta_first, theta_last = null.theta_first, null.theta_last
    q1, q2 = null.quantiles_first, null.quantiles_last
    stats = pair_statistics(traj, grid.points, lam_rule, cfg)
    if not stats.converged.all():
        raise SolverFailure("segment fit on the observed trajectory did not converge")
    g = stats.g[0]
    psi, evals = decide(grid.points, g, q1.quantiles, q2.quantiles)
    return DetectionResult(
        psi=psi,
        evaluations=evals,
        constants=cv,
        quantiles_first=q1,
        quantiles_last=q2,
        quantiles=QuantileTable.combine(q1, q2),
        g_values=g,
        theta_first=theta_first,
        theta_last=theta_last,
    )
