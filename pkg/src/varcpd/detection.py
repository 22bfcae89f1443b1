"""Change-point statistics, candidate grids and the threshold test.

For a candidate ``t`` the transition matrix is fitted separately on
``[0, t]`` and ``[t, T]``. Each fit is then scored under the other segment's
objective::

    a(t) = phi_1(Theta_2) - phi_1(Theta_1)
    b(t) = phi_2(Theta_1) - phi_2(Theta_2)

``F(t)`` takes ``a`` for ``t < T/2`` and ``b`` otherwise; ``G(t)`` is the
location-weighted mix ``(t/T) a + ((T - t)/T) b``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimator import (
    SegmentProblem,
    SolverConfig,
    default_lambda,
    estimate_long_batch,
    estimate_short,
    objective,
)
from .exceptions import ConfigInvalid, ConvergenceWarning, RankDeficientPredictors
from .var_model import NoiseModel, Trajectory

__all__ = [
    "GridKind",
    "CandidateGrid",
    "dyadic_grid",
    "full_grid",
    "single_point",
    "custom_grid",
    "window_grid",
    "FixedLambda",
    "ScaledLambda",
    "TheoreticalLambda",
    "PairStatistics",
    "pair_statistics",
    "objective_gaps",
    "f_statistic",
    "g_statistic",
    "ThresholdInputs",
    "threshold_H",
    "c_star",
    "sigma_bounds",
    "TestEvaluation",
    "evaluate_rejections",
    "run_theoretical_test",
    "argmax_changepoint",
    "argmax_from_values",
]


# ----------------------------------------------------------------------------
# candidate grids


class GridKind(enum.Enum):
    FULL = "full"
    DYADIC = "dyadic"
    SINGLE = "single"
    CUSTOM = "custom"


@dataclass(frozen=True)
class CandidateGrid:
    points: tuple
    T: int
    kind: GridKind = GridKind.CUSTOM
    search_window: Optional[tuple] = None

    def __post_init__(self):
        pts = tuple(int(t) for t in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ConfigInvalid("candidate grid is empty")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigInvalid("candidate grid must be strictly increasing")
        if pts[0] < 1 or pts[-1] > self.T - 1:
            raise ConfigInvalid(f"candidate grid must lie in [1, {self.T - 1}]")

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def restrict(self, lo: int, hi: int) -> "CandidateGrid":
        """Keep the points in ``[lo, hi]``."""
        kept = [t for t in self.points if lo <= t <= hi]
        if not kept:
            raise ConfigInvalid(f"no {self.kind.value} grid point inside [{lo}, {hi}]")
        return CandidateGrid(tuple(kept), self.T, self.kind, (lo, hi))


def dyadic_grid(T: int) -> CandidateGrid:
    """``{2^k} U {T - 2^k}`` for ``k = 0..floor(log2(T/2))``."""
    if T < 4:
        raise ConfigInvalid("dyadic grid needs T >= 4")
    kmax = (T // 2).bit_length() - 1  # floor(log2(T/2)) for integer T
    pts = {2**k for k in range(kmax + 1)} | {T - 2**k for k in range(kmax + 1)}
    return CandidateGrid(tuple(sorted(pts)), T, GridKind.DYADIC)


def full_grid(T: int) -> CandidateGrid:
    """Every ``t`` with ``min(t, T - t) >= 2``."""
    return CandidateGrid(tuple(range(2, T - 1)), T, GridKind.FULL)


def single_point(t: int, T: int) -> CandidateGrid:
    return CandidateGrid((t,), T, GridKind.SINGLE)


def custom_grid(points: Sequence[int], T: int) -> CandidateGrid:
    return CandidateGrid(tuple(sorted(set(points))), T, GridKind.CUSTOM)


def window_grid(T: int, th: int) -> CandidateGrid:
    """Full grid restricted to ``[th, T - th]``."""
    return full_grid(T).restrict(th, T - th)


# ----------------------------------------------------------------------------
# regularisation rules; each maps (segment index, n, p) to a penalty weight


@dataclass(frozen=True)
class FixedLambda:
    lam1: float
    lam2: float

    def __call__(self, segment: int, n: int, p: int) -> float:
        return self.lam1 if segment == 1 else self.lam2


@dataclass(frozen=True)
class ScaledLambda:
    """``c_i * sqrt(p / n)`` in both regimes."""

    c1: float
    c2: float

    def __call__(self, segment: int, n: int, p: int) -> float:
        c = self.c1 if segment == 1 else self.c2
        return c * math.sqrt(p / n)


@dataclass(frozen=True)
class TheoreticalLambda:
    """Per-segment :func:`~varcpd.estimator.default_lambda`."""

    sigma_z_op: float
    sigma_op: tuple
    gamma: tuple
    c1: float = 1.0
    c2: float = 1.0

    def __call__(self, segment: int, n: int, p: int) -> float:
        i = 0 if segment == 1 else 1
        return default_lambda(
            n, p, self.sigma_z_op, self.sigma_op[i], self.gamma[i], self.c1, self.c2
        )


# ----------------------------------------------------------------------------
# statistics


def _stats(x, t1, t2):
    pred = x[:, t1:t2]
    resp = x[:, t1 + 1 : t2 + 1]
    pred_t = np.swapaxes(pred, 1, 2)
    gram = pred_t @ pred
    cross = np.swapaxes(resp, 1, 2) @ pred
    yy = np.sum(resp * resp, axis=(1, 2))
    return gram, cross, yy


def _fit_and_score(x, bounds, lams, cfg):
    """Fit every segment in ``bounds`` for every trajectory in ``x``.

    Returns the estimates, shape (S, K, p, p), a callable scoring arbitrary
    matrices of that shape under each segment objective, and a convergence
    mask of shape (S, K).
    """
    S, _, p = x.shape
    K = len(bounds)
    theta = np.empty((S, K, p, p))
    converged = np.ones((S, K), dtype=bool)
    long_idx = [k for k, (t1, t2) in enumerate(bounds) if t2 - t1 > p]
    short_idx = [k for k, (t1, t2) in enumerate(bounds) if t2 - t1 <= p]

    stats = {k: _stats(x, *bounds[k]) for k in long_idx}
    if long_idx:
        gram = np.stack([stats[k][0] for k in long_idx], axis=1).reshape(-1, p, p)
        cross = np.stack([stats[k][1] for k in long_idx], axis=1).reshape(-1, p, p)
        n = np.tile([bounds[k][1] - bounds[k][0] for k in long_idx], S)
        lam = np.tile([lams[k] for k in long_idx], S)
        res = estimate_long_batch(gram, cross, n, lam, cfg)
        theta[:, long_idx] = res.theta_hat.reshape(S, len(long_idx), p, p)
        converged[:, long_idx] = res.converged.reshape(S, len(long_idx))

    problems = {}
    for k in short_idx:
        t1, t2 = bounds[k]
        for s in range(S):
            prob = SegmentProblem(x[s, t1:t2].T, x[s, t1 + 1 : t2 + 1].T, lams[k])
            problems[s, k] = prob
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankDeficientPredictors)
                theta[s, k] = estimate_short(prob).theta_hat

    def score(m):
        out = np.empty((S, K))
        for k in long_idx:
            gram, cross, yy = stats[k]
            mk = m[:, k]
            n = bounds[k][1] - bounds[k][0]
            fit = np.einsum("sij,sij->s", mk, mk @ gram) - 2.0 * np.einsum("sij,sij->s", mk, cross)
            nuc = np.linalg.svd(mk, compute_uv=False).sum(axis=1)
            out[:, k] = (yy + fit) / n + lams[k] * nuc
        for (s, k), prob in problems.items():
            out[s, k] = objective(prob, m[s, k])
        return out

    return theta, score, converged


@dataclass
class PairStatistics:
    """Cross-fitted objective gaps for every candidate and trajectory.

    ``a`` and ``b`` have shape ``(S, K)`` for ``S`` trajectories and ``K``
    candidates.
    """

    ts: np.ndarray
    T: int
    a: np.ndarray
    b: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    converged: np.ndarray

    @property
    def f(self) -> np.ndarray:
        first = 2 * self.ts < self.T
        return np.where(first, self.a, self.b)

    @property
    def g(self) -> np.ndarray:
        w = self.ts / self.T
        return w * self.a + (1.0 - w) * self.b


def pair_statistics(data, ts: Sequence[int], lam_rule, cfg: SolverConfig = SolverConfig()) -> PairStatistics:
    """Compute ``a(t)`` and ``b(t)`` for one trajectory or a stack of them.

    ``data`` is a :class:`Trajectory`, an array of shape ``(T + 1, p)`` or a
    stack of shape ``(S, T + 1, p)``. All segment fits are solved in a single
    batch.
    """
    x = data.samples if isinstance(data, Trajectory) else np.asarray(data, dtype=float)
    if x.ndim == 2:
        x = x[None]
    S, T1, p = x.shape
    T = T1 - 1
    ts = np.asarray(list(ts), dtype=int)
    if ts.size == 0 or ts.min() < 1 or ts.max() > T - 1:
        raise ConfigInvalid(f"candidates must lie in [1, {T - 1}]")
    bounds = [(0, int(t)) for t in ts] + [(int(t), T) for t in ts]
    lams = [lam_rule(1, int(t), p) for t in ts] + [lam_rule(2, T - int(t), p) for t in ts]
    theta, score, converged = _fit_and_score(x, bounds, lams, cfg)
    K = ts.size
    th1, th2 = theta[:, :K], theta[:, K:]
    swapped = np.concatenate([th2, th1], axis=1)
    own, cross = score(theta), score(swapped)
    a = cross[:, :K] - own[:, :K]
    b = cross[:, K:] - own[:, K:]
    conv = converged[:, :K] & converged[:, K:]
    return PairStatistics(ts, T, a, b, th1, th2, conv)


def objective_gaps(traj: Trajectory, t: int, theta1, theta2, lam1: float, lam2: float) -> tuple[float, float]:
    """``(a, b)`` for given estimates, bypassing the solver."""
    p1 = SegmentProblem(*traj.before(t), lam1)
    p2 = SegmentProblem(*traj.after(t), lam2)
    a = objective(p1, theta2) - objective(p1, theta1)
    b = objective(p2, theta1) - objective(p2, theta2)
    return a, b


def _single(traj, t, lam1, lam2, cfg):
    stats = pair_statistics(traj, [t], FixedLambda(lam1, lam2), cfg)
    if not stats.converged.all():
        warnings.warn(f"segment fit at t={t} did not converge", ConvergenceWarning, stacklevel=3)
    return stats


def f_statistic(traj: Trajectory, t: int, lam1: float, lam2: float, cfg: SolverConfig = SolverConfig()) -> float:
    return float(_single(traj, t, lam1, lam2, cfg).f[0, 0])


def g_statistic(traj: Trajectory, t: int, lam1: float, lam2: float, cfg: SolverConfig = SolverConfig()) -> float:
    return float(_single(traj, t, lam1, lam2, cfg).g[0, 0])


# ----------------------------------------------------------------------------
# thresholds and tests


@dataclass(frozen=True)
class ThresholdInputs:
    alpha: float
    R: int
    p: int
    T: int
    gamma: float
    grid_size: int
    sigma_z_op: float
    sigma_op: float
    kappa_sigma: float
    c_star: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigInvalid("alpha must lie in (0, 1)")
        for name in ("R", "p", "T", "grid_size", "sigma_z_op", "sigma_op", "kappa_sigma", "c_star"):
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigInvalid("gamma must lie in (0, 1)")


def sigma_bounds(sigma_z: NoiseModel, gamma: float) -> tuple[float, float]:
    """Upper bounds on ``||Sigma||_op`` and ``kappa(Sigma)`` from the Lyapunov
    equation for any ``Theta`` with ``||Theta||_op <= gamma``."""
    g2 = gamma * gamma
    return sigma_z.op_norm / (1.0 - g2), sigma_z.condition_number * (1.0 + g2) / (1.0 - g2)


def c_star(C: float, sigma_z_op: float, sigma_op: float, kappa_sigma: float, gamma: float) -> float:
    """``C * max(||Sigma_Z||, ||Sigma|| kappa^2 / (1 - gamma)^2)``."""
    return C * max(sigma_z_op, sigma_op * kappa_sigma**2 / (1.0 - gamma) ** 2)


def threshold_H(inputs: ThresholdInputs, t: int) -> float:
    T, p = inputs.T, inputs.p
    if not 1 <= t <= T - 1:
        raise ConfigInvalid(f"t={t} outside [1, {T - 1}]")
    # R p / (T q^2(t/T)) with q^2 = t (T - t) / T^2
    base = inputs.c_star * inputs.R * p * T / (t * (T - t))
    log_term = math.log(8 * inputs.grid_size / inputs.alpha)
    slope = 2.0 / (1.0 - inputs.gamma)
    if min(t, T - t) <= p:
        return base * (1.0 + slope * (p + log_term) / T)
    return base * (1.0 + slope * (1.0 + log_term / T))


@dataclass(frozen=True)
class TestEvaluation:
    t: int
    statistic: float
    threshold: float
    ratio: float
    reject: bool


def evaluate_rejections(ts, statistics, thresholds) -> tuple[bool, list]:
    """Per-candidate records and the overall decision ``any(stat > thr)``."""
    evals = []
    for t, s, h in zip(ts, statistics, thresholds):
        s, h = float(s), float(h)
        ratio = s / h if h != 0 else math.copysign(math.inf, s) if s else 0.0
        evals.append(TestEvaluation(int(t), s, h, ratio, s > h))
    return any(e.reject for e in evals), evals


def run_theoretical_test(
    traj: Trajectory,
    grid: CandidateGrid,
    inputs: ThresholdInputs,
    cfg: SolverConfig = SolverConfig(),
    lam_rule=None,
) -> tuple[bool, list]:
    """Reject when ``F(t) > H_{alpha,t}`` for some grid point."""
    if grid.T != traj.T:
        raise ConfigInvalid(f"grid built for T={grid.T}, trajectory has T={traj.T}")
    if lam_rule is None:
        lam_rule = TheoreticalLambda(
            inputs.sigma_z_op, (inputs.sigma_op,) * 2, (inputs.gamma,) * 2
        )
    stats = pair_statistics(traj, grid.points, lam_rule, cfg)
    thresholds = [threshold_H(inputs, t) for t in grid.points]
    return evaluate_rejections(grid.points, stats.f[0], thresholds)


def argmax_changepoint(
    traj: Trajectory,
    grid: CandidateGrid,
    lam_rule,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[int, np.ndarray]:
    """``argmax_t G(t)`` over the grid; ties go to the smallest ``t``."""
    g = pair_statistics(traj, grid.points, lam_rule, cfg).g[0]
    return argmax_from_values(grid.points, g), g


def argmax_from_values(ts, g) -> int:
    return int(ts[int(np.argmax(np.asarray(g)))])
