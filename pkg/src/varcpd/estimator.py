"""Nuclear-norm penalised least squares for VAR(1) transition matrices.

For a segment with predictors ``X`` (p x n) and responses ``Y`` (p x n) the
objective is::

    phi(M) = ||Y - M X||_F^2 / n + lam * pen(M)

with ``pen(M) = ||M||_*`` when ``n > p`` (matrix-norm mode) and
``pen(M) = ||M X||_*`` when ``n <= p`` (predicted-norm mode).

The matrix-norm problem is solved by accelerated proximal gradient with
adaptive restart. The predicted-norm problem reduces to one singular value
thresholding step after substituting ``N = M X``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    ConfigInvalid,
    ConvergenceWarning,
    RankDeficientPredictors,
    ShapeMismatch,
    SvdFailure,
)

__all__ = [
    "PenaltyMode",
    "StepRule",
    "SegmentProblem",
    "SolverConfig",
    "EstimateResult",
    "BatchResult",
    "segment_problem",
    "objective",
    "default_lambda",
    "svt",
    "nuclear_norm",
    "estimate",
    "estimate_long",
    "estimate_short",
    "estimate_long_batch",
    "kkt_residual",
]

PINV_RTOL = 1e-10
_RANK_RTOL = 1e-9


class PenaltyMode(enum.Enum):
    MATRIX_NORM = "matrix"
    PREDICTED_NORM = "predicted"


class StepRule(enum.Enum):
    FIXED_LIPSCHITZ = "fixed"
    BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the accelerated proximal gradient solver.

    ``tolerance`` bounds a computable upper bound on the KKT residual of the
    returned iterate; the solver stops once the bound drops below it.
    """

    max_iterations: int = 5000
    tolerance: float = 1e-6
    step_rule: StepRule = StepRule.FIXED_LIPSCHITZ
    restart: bool = True
    record_history: bool = False

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigInvalid("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigInvalid("max_iterations must be at least 1")
        if isinstance(self.step_rule, str):
            object.__setattr__(self, "step_rule", StepRule(self.step_rule))


@dataclass(frozen=True)
class SegmentProblem:
    """One estimation instance on a segment of length ``n``."""

    predictors: np.ndarray
    responses: np.ndarray
    lam: float

    def __post_init__(self):
        x = np.asarray(self.predictors, dtype=float)
        y = np.asarray(self.responses, dtype=float)
        if x.ndim != 2 or x.shape != y.shape:
            raise ShapeMismatch(f"predictors {x.shape} and responses {y.shape} must match")
        if x.shape[1] < 1:
            raise ShapeMismatch("segment must contain at least one transition")
        if self.lam < 0:
            raise ConfigInvalid("lambda must be non-negative")
        object.__setattr__(self, "predictors", x)
        object.__setattr__(self, "responses", y)

    @property
    def p(self) -> int:
        return self.predictors.shape[0]

    @property
    def n(self) -> int:
        return self.predictors.shape[1]

    @property
    def penalty_mode(self) -> PenaltyMode:
        return PenaltyMode.PREDICTED_NORM if self.n <= self.p else PenaltyMode.MATRIX_NORM

    def transformed(self, q: np.ndarray) -> "SegmentProblem":
        """The same problem after the change of basis ``X -> Q X``."""
        return SegmentProblem(q @ self.predictors, q @ self.responses, self.lam)


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    objective_value: float
    iterations_used: int
    kkt_residual: float
    converged: bool = True
    rank_deficient: bool = False
    history: Optional[np.ndarray] = field(default=None, repr=False)
    kkt_history: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class BatchResult:
    theta_hat: np.ndarray
    iterations: np.ndarray
    certificate: np.ndarray
    converged: np.ndarray
    history: Optional[list] = field(default=None, repr=False)
    kkt_history: Optional[list] = field(default=None, repr=False)


def segment_problem(traj, t1: int, t2: int, lam: float) -> SegmentProblem:
    """Problem on the segment ``X_{t1}..X_{t2}`` of a trajectory."""
    if not 0 <= t1 < t2 <= traj.T:
        raise ShapeMismatch(f"segment [{t1}, {t2}] outside [0, {traj.T}]")
    return SegmentProblem(traj.predictors(t1, t2), traj.responses(t1, t2), lam)


def nuclear_norm(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False).sum()) if m.size else 0.0


def objective(problem: SegmentProblem, m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    if m.shape != (problem.p, problem.p):
        raise ShapeMismatch(f"candidate shape {m.shape}, expected {(problem.p, problem.p)}")
    fitted = m @ problem.predictors
    loss = np.sum((problem.responses - fitted) ** 2) / problem.n
    if problem.lam == 0:
        return float(loss)
    if problem.penalty_mode is PenaltyMode.MATRIX_NORM:
        return float(loss + problem.lam * nuclear_norm(m))
    return float(loss + problem.lam * nuclear_norm(fitted))


def default_lambda(
    n: int,
    p: int,
    sigma_z_op: float,
    sigma_op: float,
    gamma: float,
    c1: float = 1.0,
    c2: float = 1.0,
) -> float:
    """Theoretical regularisation weight for a segment of length ``n``.

    ``6 c1 sqrt(||Sigma_Z||) sqrt(p) / n`` when ``n <= p``, otherwise
    ``2 c2 ||Sigma|| / (1 - gamma) * sqrt(p / n)``.
    """
    if n < 1:
        raise ConfigInvalid("segment length must be positive")
    if n <= p:
        return 6.0 * c1 * np.sqrt(sigma_z_op) * np.sqrt(p) / n
    return 2.0 * c2 * sigma_op / (1.0 - gamma) * np.sqrt(p / n)


def _svd(a, compute_uv=True):
    try:
        return np.linalg.svd(a, full_matrices=False, compute_uv=compute_uv)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc


def svt(m: np.ndarray, threshold: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of ``threshold * ||.||_*``."""
    if threshold < 0:
        raise ConfigInvalid("threshold must be non-negative")
    m = np.asarray(m, dtype=float)
    if threshold == 0:
        return m.copy()
    u, s, vt = _svd(m)
    s = np.maximum(s - threshold, 0.0)
    return (u * s) @ vt


def _prox_batch(v: np.ndarray, thr: np.ndarray):
    u, s, vt = _svd(v)
    s = np.maximum(s - thr[:, None], 0.0)
    return (u * s[:, None, :]) @ vt, s


def _inner(a, b):
    return np.einsum("bij,bij->b", a, b)


def estimate_long_batch(
    gram: np.ndarray,
    cross: np.ndarray,
    n: np.ndarray,
    lam: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
) -> BatchResult:
    """Solve a stack of matrix-norm problems given sufficient statistics.

    Parameters
    ----------
    gram : (B, p, p) array
        ``X X^T`` for each problem.
    cross : (B, p, p) array
        ``Y X^T`` for each problem.
    n : (B,) array
        Segment lengths.
    lam : (B,) array
        Penalty weights.

    Every problem starts at ``M = 0``. Problems leave the active set as soon
    as their KKT bound ``||grad f(y) - grad f(z) - L (y - z)||_F`` drops below
    ``cfg.tolerance``; this bounds the exact residual at the prox output ``z``.
    """
    gram = np.asarray(gram, dtype=float)
    cross = np.asarray(cross, dtype=float)
    B, p, _ = gram.shape
    n = np.broadcast_to(np.asarray(n, dtype=float), (B,)).copy()
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B,)).copy()
    scale = (2.0 / n)[:, None, None]

    lip_exact = 2.0 / n * np.linalg.eigvalsh(gram)[:, -1]
    lip_exact = np.maximum(lip_exact, 1e-300)
    backtrack = cfg.step_rule is StepRule.BACKTRACKING
    lip = 0.1 * lip_exact if backtrack else lip_exact.copy()

    x = np.zeros_like(gram)
    y = np.zeros_like(gram)
    fx = np.zeros(B)
    mom = np.ones(B)
    iters = np.zeros(B, dtype=int)
    cert = np.full(B, np.inf)
    done = np.zeros(B, dtype=bool)
    hist = [[] for _ in range(B)] if cfg.record_history else None
    khist = [[] for _ in range(B)] if cfg.record_history else None

    def smooth(m, mg, idx):
        # f(M) - ||Y||^2 / n, from (M G) precomputed
        return (_inner(m, mg) - 2.0 * _inner(m, cross[idx])) / n[idx]

    def step(src, idx):
        """One prox-gradient step from ``src`` for problems ``idx``."""
        g = scale[idx] * (src @ gram[idx] - cross[idx])
        while True:
            z, s = _prox_batch(src - g / lip[idx, None, None], lam[idx] / lip[idx])
            zg = z @ gram[idx]
            fz_s = smooth(z, zg, idx)
            if not backtrack:
                break
            d = z - src
            fs = smooth(src, src @ gram[idx], idx)
            ok = fz_s <= fs + _inner(g, d) + 0.5 * lip[idx] * _inner(d, d) + 1e-12 * np.abs(fs)
            if ok.all():
                break
            lip[idx[~ok]] = np.minimum(2.0 * lip[idx[~ok]], lip_exact[idx[~ok]] * (1 + 1e-12))
        fz = fz_s + lam[idx] * s.sum(axis=1)
        gz = scale[idx] * (zg - cross[idx])
        r = g - gz - lip[idx, None, None] * (src - z)
        c = np.sqrt(_inner(r, r))
        return z, fz, c

    active = np.arange(B)
    for k in range(1, cfg.max_iterations + 1):
        idx = active
        z, fz, c = step(y[idx], idx)
        if cfg.restart:
            worse = fz > fx[idx]
            if worse.any():
                w = idx[worse]
                zw, fzw, cw = step(x[w], w)
                z[worse], fz[worse], c[worse] = zw, fzw, cw
                y[w] = x[w]
                mom[w] = 1.0
            # gradient-based restart: momentum pointing uphill
            uphill = _inner(y[idx] - z, z - x[idx]) > 0
            mom[idx[uphill]] = 1.0
        mom_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom[idx] ** 2))
        beta = ((mom[idx] - 1.0) / mom_next)[:, None, None]
        y[idx] = z + beta * (z - x[idx])
        x[idx] = z
        fx[idx] = fz
        mom[idx] = mom_next
        iters[idx] = k
        cert[idx] = c
        if hist is not None:
            for j, i in enumerate(idx):
                hist[i].append(float(fz[j]))
                khist[i].append(float(c[j]))
        finished = c <= cfg.tolerance
        done[idx[finished]] = True
        active = idx[~finished]
        if active.size == 0:
            break

    return BatchResult(
        theta_hat=x,
        iterations=iters,
        certificate=cert,
        converged=done,
        history=[np.array(h) for h in hist] if hist is not None else None,
        kkt_history=[np.array(h) for h in khist] if khist is not None else None,
    )


def kkt_residual(problem: SegmentProblem, m: np.ndarray) -> float:
    """Distance of ``-grad f(M)`` from ``lam * subdiff ||M||_*`` (Frobenius).

    With ``M = U_r S V_r^T`` the subdifferential is
    ``{U_r V_r^T + W : U_r^T W = 0, W V_r = 0, ||W||_op <= 1}``; the minimum
    splits into the tangent part and a singular value excess on the
    orthogonal complement.
    """
    x, y, lam = problem.predictors, problem.responses, problem.lam
    neg_grad = (2.0 / problem.n) * (y - m @ x) @ x.T
    return _subdiff_distance(neg_grad, m, lam)


def _subdiff_distance(g: np.ndarray, m: np.ndarray, lam: float) -> float:
    u, s, vt = _svd(m)
    r = int(np.count_nonzero(s > _RANK_RTOL * max(1.0, s[0] if s.size else 0.0)))
    ur, vr = u[:, :r], vt[:r].T
    if r:
        proj_u = np.eye(g.shape[0]) - ur @ ur.T
        proj_v = np.eye(g.shape[1]) - vr @ vr.T
        orth = proj_u @ g @ proj_v
        tangent = g - orth - lam * (ur @ vr.T)
    else:
        orth = g
        tangent = np.zeros_like(g)
    excess = np.maximum(_svd(orth, compute_uv=False) - lam, 0.0)
    return float(np.sqrt(np.sum(tangent**2) + np.sum(excess**2)))


def estimate_long(problem: SegmentProblem, cfg: SolverConfig = SolverConfig()) -> EstimateResult:
    """Matrix-norm estimate by accelerated proximal gradient."""
    if problem.penalty_mode is not PenaltyMode.MATRIX_NORM:
        raise ConfigInvalid(f"matrix-norm mode needs n > p, got n={problem.n}, p={problem.p}")
    x, y = problem.predictors, problem.responses
    res = estimate_long_batch(
        (x @ x.T)[None], (y @ x.T)[None], np.array([problem.n]), np.array([problem.lam]), cfg
    )
    theta = res.theta_hat[0]
    converged = bool(res.converged[0])
    if not converged:
        warnings.warn(
            f"solver stopped after {cfg.max_iterations} iterations with KKT bound "
            f"{res.certificate[0]:.3g} > {cfg.tolerance:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    history = kkt_history = None
    if res.history is not None:
        history = res.history[0] + np.sum(y**2) / problem.n
        kkt_history = res.kkt_history[0]
    return EstimateResult(
        theta_hat=theta,
        objective_value=objective(problem, theta),
        iterations_used=int(res.iterations[0]),
        kkt_residual=kkt_residual(problem, theta),
        converged=converged,
        history=history,
        kkt_history=kkt_history,
    )


def _row_space_projector(x: np.ndarray):
    u, s, vt = _svd(x)
    r = int(np.count_nonzero(s > PINV_RTOL * s[0])) if s.size and s[0] > 0 else 0
    v = vt[:r].T
    pinv = (v / s[:r]) @ u[:, :r].T
    return v @ v.T, pinv, r


def estimate_short(problem: SegmentProblem) -> EstimateResult:
    """Predicted-norm estimate in closed form.

    Substituting ``N = M X`` turns the objective into
    ``||Y - N||^2 / n + lam ||N||_*`` over matrices whose rows lie in the row
    space of ``X``; the minimiser is ``svt(Y P, lam n / 2)`` with ``P`` the
    projector onto that row space, and ``M = N X^+`` is the minimum-norm
    preimage.
    """
    x, y, n = problem.predictors, problem.responses, problem.n
    proj, pinv, r = _row_space_projector(x)
    rank_deficient = r < n
    if rank_deficient:
        warnings.warn(
            f"predictors have rank {r} < {n}; returning minimum-norm solution",
            RankDeficientPredictors,
            stacklevel=2,
        )
    yp = y @ proj
    fitted = svt(yp, problem.lam * n / 2.0)
    theta = fitted @ pinv
    neg_grad = (2.0 / n) * (yp - fitted)
    return EstimateResult(
        theta_hat=theta,
        objective_value=objective(problem, theta),
        iterations_used=1,
        kkt_residual=_subdiff_distance(neg_grad, fitted, problem.lam),
        rank_deficient=rank_deficient,
    )


def estimate(problem: SegmentProblem, cfg: SolverConfig = SolverConfig()) -> EstimateResult:
    """Dispatch on the penalty mode of ``problem``."""
    if problem.penalty_mode is PenaltyMode.MATRIX_NORM:
        return estimate_long(problem, cfg)
    return estimate_short(problem)
