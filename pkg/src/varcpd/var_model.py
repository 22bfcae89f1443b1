"""Piecewise-stationary VAR(1) processes with low-rank transition matrices.

A trajectory ``X_0, ..., X_T`` follows ``X_{t+1} = Theta^t X_t + Z_{t+1}``
with ``Theta^t = Theta_1`` for ``t <= tau`` and ``Theta_2`` afterwards, and
i.i.d. innovations ``Z_t ~ N(0, Sigma_Z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    ConfigInvalid,
    InfeasibleJump,
    InvalidRank,
    NotSPD,
    ShapeMismatch,
    SpectralRadiusViolation,
)

__all__ = [
    "TransitionMatrix",
    "NoiseModel",
    "Trajectory",
    "ChangeSpec",
    "solve_lyapunov",
    "random_low_rank_transition",
    "make_change_pair",
    "max_feasible_jump",
    "simulate",
    "simulate_batch",
    "change_energy",
    "location_weight",
]

_RANK_RTOL = 1e-8
_OPNORM_SLACK = 1e-10
_BOUND_SLACK = 1e-12  # rounding allowance when comparing diagonals to gamma


def _op_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionMatrix:
    """A p x p transition matrix of rank at most ``declared_rank`` and
    operator norm at most ``spectral_bound``.

    ``basis`` and ``diagonal`` hold the factorisation ``U diag(d) U^T`` when
    the matrix was built that way; they are ``None`` otherwise.
    """

    entries: np.ndarray
    declared_rank: int
    spectral_bound: float
    basis: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    diagonal: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        a = _readonly(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatch(f"transition matrix must be square, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ConfigInvalid("transition matrix has non-finite entries")
        object.__setattr__(self, "entries", a)
        if self.basis is not None:
            object.__setattr__(self, "basis", _readonly(self.basis))
            object.__setattr__(self, "diagonal", _readonly(self.diagonal))
        p = a.shape[0]
        if not 1 <= self.declared_rank <= p:
            raise InvalidRank(f"declared rank {self.declared_rank} outside [1, {p}]")
        if not 0.0 < self.spectral_bound < 1.0:
            raise ConfigInvalid(f"spectral bound {self.spectral_bound} outside (0, 1)")
        s = np.linalg.svd(a, compute_uv=False)
        if s[0] > self.spectral_bound + _OPNORM_SLACK:
            raise SpectralRadiusViolation(
                f"operator norm {s[0]:.6g} exceeds bound {self.spectral_bound:.6g}"
            )
        if np.count_nonzero(s > _RANK_RTOL * max(s[0], np.finfo(float).tiny)) > self.declared_rank:
            raise InvalidRank(f"numerical rank exceeds declared rank {self.declared_rank}")

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def op_norm(self) -> float:
        return _op_norm(self.entries)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian innovation covariance with a cached Cholesky factor."""

    covariance: np.ndarray
    cholesky_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = _readonly(self.covariance)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeMismatch(f"covariance must be square, got {c.shape}")
        if not np.allclose(c, c.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(c).max())):
            raise NotSPD("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise NotSPD("covariance is not positive definite") from exc
        object.__setattr__(self, "covariance", c)
        object.__setattr__(self, "cholesky_factor", _readonly(chol))

    @classmethod
    def identity(cls, p: int) -> "NoiseModel":
        return cls(np.eye(p))

    @property
    def p(self) -> int:
        return self.covariance.shape[0]

    @property
    def op_norm(self) -> float:
        return float(np.linalg.eigvalsh(self.covariance)[-1])

    @property
    def condition_number(self) -> float:
        w = np.linalg.eigvalsh(self.covariance)
        return float(w[-1] / w[0])


@dataclass(frozen=True)
class Trajectory:
    """Observations ``X_0..X_T`` stored row-wise, shape ``(T + 1, p)``."""

    samples: np.ndarray

    def __post_init__(self):
        x = _readonly(self.samples)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ShapeMismatch(f"trajectory needs shape (T+1, p) with T >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ConfigInvalid("trajectory has non-finite entries")
        object.__setattr__(self, "samples", x)

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    @property
    def T(self) -> int:
        return self.samples.shape[0] - 1

    def predictors(self, t1: int, t2: int) -> np.ndarray:
        """``(X_{t1}, ..., X_{t2-1})`` as a p x (t2 - t1) matrix."""
        return self.samples[t1:t2].T

    def responses(self, t1: int, t2: int) -> np.ndarray:
        """``(X_{t1+1}, ..., X_{t2})`` as a p x (t2 - t1) matrix."""
        return self.samples[t1 + 1 : t2 + 1].T

    def before(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Predictor/response pair on ``[0, t]``: ``(X_{<t}, Y_{<=t})``."""
        return self.predictors(0, t), self.responses(0, t)

    def after(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Predictor/response pair on ``[t, T]``: ``(X_{>=t}, Y_{>t})``."""
        return self.predictors(t, self.T), self.responses(t, self.T)

    def window(self, start: int, stop: int) -> "Trajectory":
        """Sub-trajectory ``X_start..X_stop`` (inclusive)."""
        return Trajectory(self.samples[start : stop + 1])


@dataclass(frozen=True)
class ChangeSpec:
    theta_before: TransitionMatrix
    theta_after: TransitionMatrix
    change_point: Optional[int] = None

    def __post_init__(self):
        if self.theta_before.p != self.theta_after.p:
            raise ShapeMismatch("transition matrices differ in dimension")
        if self.change_point is None and not np.array_equal(
            self.theta_before.entries, self.theta_after.entries
        ):
            raise ConfigInvalid("null model requires identical transition matrices")

    @classmethod
    def null(cls, theta: TransitionMatrix) -> "ChangeSpec":
        return cls(theta, theta, None)

    @property
    def p(self) -> int:
        return self.theta_before.p


def solve_lyapunov(theta, noise: NoiseModel, max_iter: int = 200, rtol: float = 1e-12) -> np.ndarray:
    """Stationary covariance solving ``Sigma = Theta Sigma Theta^T + Sigma_Z``.

    Uses the doubling recursion ``Sigma <- Sigma + A Sigma A^T``, ``A <- A^2``
    starting from ``Sigma = Sigma_Z``, ``A = Theta``; after ``k`` steps this
    sums the first ``2^k`` terms of the series ``sum_j Theta^j Sigma_Z Theta^{jT}``.
    """
    a = np.asarray(getattr(theta, "entries", theta), dtype=float)
    sz = noise.covariance
    if a.shape != sz.shape:
        raise ShapeMismatch(f"theta {a.shape} vs noise {sz.shape}")
    gamma = _op_norm(a)
    if gamma >= 1.0:
        raise SpectralRadiusViolation(f"operator norm {gamma:.6g} >= 1, series diverges")

    sigma = sz.copy()
    power = a.copy()
    for _ in range(max_iter):
        sigma = sigma + power @ sigma @ power.T
        power = power @ power
        resid = np.linalg.norm(sigma - a @ sigma @ a.T - sz)
        if resid <= rtol * np.linalg.norm(sigma) or not power.any():
            break
    return 0.5 * (sigma + sigma.T)


def random_low_rank_transition(p: int, R: int, gamma: float, rng: np.random.Generator) -> TransitionMatrix:
    """Draw ``Theta = U D U^T`` with Haar-distributed ``U`` and ``R`` non-zero
    diagonal entries, the largest in absolute value equal to ``gamma``.
    """
    if not 1 <= R <= p:
        raise InvalidRank(f"rank {R} outside [1, {p}]")
    if not 0.0 < gamma < 1.0:
        raise ConfigInvalid(f"gamma {gamma} outside (0, 1)")
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    u = q * np.sign(np.diag(r))
    d = np.zeros(p)
    active = rng.uniform(-gamma, gamma, size=R)
    active *= gamma / np.abs(active).max()
    d[:R] = active
    return _from_factors(u, d, R, gamma)


def _from_factors(u: np.ndarray, d: np.ndarray, R: int, gamma: float) -> TransitionMatrix:
    theta = (u * d) @ u.T
    theta = 0.5 * (theta + theta.T)
    return TransitionMatrix(theta, R, gamma, basis=u, diagonal=d)


def max_feasible_jump(base: TransitionMatrix, gamma_after: Optional[float] = None) -> float:
    """Largest Frobenius jump :func:`make_change_pair` accepts for ``base``."""
    d = _require_factors(base)
    gamma = base.spectral_bound if gamma_after is None else gamma_after
    active = np.abs(d[np.flatnonzero(d)])
    if active.max() > gamma + _BOUND_SLACK:
        # entries above the bound must shrink by at least the excess
        lo = np.sqrt(active.size) * (active.max() - gamma)
        hi = np.sqrt(active.size) * (gamma + active.min())
        return float(hi) if lo <= hi else 0.0
    return float(np.sqrt(active.size) * (gamma + active.min()))


def _require_factors(base: TransitionMatrix) -> np.ndarray:
    if base.basis is None:
        raise ConfigInvalid("base matrix must carry its U D U^T factorisation")
    return base.diagonal


def make_change_pair(
    base: TransitionMatrix,
    jump_fro: float,
    rng: Optional[np.random.Generator] = None,
    gamma_after: Optional[float] = None,
) -> tuple[TransitionMatrix, TransitionMatrix]:
    """Two matrices sharing the eigenbasis of ``base`` at Frobenius distance
    ``jump_fro``.

    The shifted matrix moves every active diagonal entry of ``base`` towards
    (and possibly through) zero by ``jump_fro / sqrt(R)``; it must respect
    ``gamma_after`` (default: the bound of ``base``). Without ``rng`` the pair
    is ``(base, shifted)``. With ``rng`` the order is a fair coin flip, which
    makes the pre- and post-change roles exchangeable. The shifted matrix
    usually has the smaller spectrum, so a fixed order would make changes
    near the start of a series systematically harder to detect than changes
    near its end.
    """
    if jump_fro < 0:
        raise ConfigInvalid("jump_fro must be non-negative")
    swap = rng is not None and bool(rng.random() < 0.5)
    d1 = _require_factors(base)
    gamma = base.spectral_bound if gamma_after is None else gamma_after
    if jump_fro == 0:
        if np.abs(d1).max() > gamma + _BOUND_SLACK:
            raise InfeasibleJump(f"base matrix exceeds post-change bound {gamma:.6g}")
        return base, base
    active = np.flatnonzero(d1)
    step = jump_fro / np.sqrt(active.size)
    d2 = d1.copy()
    d2[active] -= np.sign(d1[active]) * step
    if np.abs(d2).max() > gamma + _BOUND_SLACK:
        raise InfeasibleJump(
            f"jump {jump_fro:.6g} exceeds feasible maximum "
            f"{max_feasible_jump(base, gamma):.6g}"
        )
    theta2 = _from_factors(base.basis, d2, base.declared_rank, gamma)
    return (theta2, base) if swap else (base, theta2)


def simulate(
    spec: ChangeSpec,
    noise: NoiseModel,
    T: int,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
    noiseless: bool = False,
) -> Trajectory:
    """Simulate ``X_0..X_T``.

    ``X_0`` is drawn from the stationary law of the pre-change process unless
    given. ``noiseless=True`` zeroes the innovations.
    """
    if T < 2:
        raise ConfigInvalid("T must be at least 2")
    p = spec.p
    if noise.p != p:
        raise ShapeMismatch("noise dimension differs from transition matrices")
    sigma1 = solve_lyapunov(spec.theta_before, noise)
    solve_lyapunov(spec.theta_after, noise)
    if x0 is None:
        start = np.linalg.cholesky(sigma1) @ rng.standard_normal(p)
    else:
        start = np.asarray(x0, dtype=float).reshape(p)
    tau = T if spec.change_point is None else spec.change_point
    x = simulate_batch(
        spec.theta_before.entries,
        spec.theta_after.entries,
        tau,
        noise,
        T,
        start[None, :],
        rng,
        noiseless=noiseless,
    )
    return Trajectory(x[0])


def simulate_batch(
    theta1: np.ndarray,
    theta2: np.ndarray,
    tau: int,
    noise: NoiseModel,
    T: int,
    x0: np.ndarray,
    rng: np.random.Generator,
    noiseless: bool = False,
) -> np.ndarray:
    """Run the recursion for a batch of starting points ``x0`` of shape (S, p).

    Returns an array of shape ``(S, T + 1, p)``.
    """
    x0 = np.atleast_2d(x0)
    S, p = x0.shape
    out = np.empty((S, T + 1, p))
    out[:, 0] = x0
    if noiseless:
        z = np.zeros((S, T, p))
    else:
        z = rng.standard_normal((S, T, p)) @ noise.cholesky_factor.T
    a1, a2 = theta1.T, theta2.T
    for t in range(T):
        a = a1 if t <= tau else a2
        out[:, t + 1] = out[:, t] @ a + z[:, t]
    return out


def location_weight(t: int, T: int) -> float:
    """``q(t/T) = sqrt((t/T)(1 - t/T))``, computed symmetrically in ``t``."""
    return float(np.sqrt(t * (T - t))) / T


def change_energy(t: int, T: int, theta1, theta2) -> float:
    """Jump energy ``q(t/T) * ||Theta_1 - Theta_2||_F``."""
    if not 0 <= t <= T:
        raise ConfigInvalid(f"t={t} outside [0, {T}]")
    a = np.asarray(getattr(theta1, "entries", theta1))
    b = np.asarray(getattr(theta2, "entries", theta2))
    return location_weight(t, T) * float(np.linalg.norm(a - b))
