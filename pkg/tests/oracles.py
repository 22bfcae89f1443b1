"""Independent reference computations used by the test-suite.

Nothing here calls into the package's numerical routines: each oracle
re-derives its answer by a different method (dense Kronecker solves,
interior-point conic solves, closed forms, brute-force enumeration).
"""

from __future__ import annotations

import math

import cvxpy as cp
import numpy as np

CLARABEL_TIGHT = dict(tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11, max_iter=500)


def _solve(problem: cp.Problem) -> float:
    problem.solve(solver=cp.CLARABEL, **CLARABEL_TIGHT)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise RuntimeError(f"oracle solve failed: {problem.status}")
    return float(problem.value)


def lyapunov_kron(theta: np.ndarray, sigma_z: np.ndarray) -> np.ndarray:
    """Solve ``vec(S) = (I - Theta (x) Theta)^{-1} vec(Sigma_Z)`` densely."""
    p = theta.shape[0]
    lhs = np.eye(p * p) - np.kron(theta, theta)
    vec = np.linalg.solve(lhs, sigma_z.reshape(-1, order="F"))
    return vec.reshape(p, p, order="F")


def objective_termwise(responses, predictors, m, lam, predicted: bool) -> float:
    """Loss as an explicit sum over time steps plus a nuclear norm from a full SVD."""
    n = predictors.shape[1]
    loss = 0.0
    for i in range(n):
        r = responses[:, i] - m @ predictors[:, i]
        loss += float(r @ r)
    target = m @ predictors if predicted else m
    sv = np.linalg.svd(target, compute_uv=False, full_matrices=True)
    return loss / n + lam * float(sv.sum())


def prox_nuclear(m: np.ndarray, tau: float) -> np.ndarray:
    """``argmin_X 1/2 ||X - M||_F^2 + tau ||X||_*`` by a conic solver."""
    x = cp.Variable(m.shape)
    _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(x - m) + tau * cp.normNuc(x))))
    return x.value


def long_regime(responses, predictors, lam) -> tuple[float, np.ndarray]:
    """Minimise ``||Y - M X||_F^2 / n + lam ||M||_*``."""
    p, n = predictors.shape
    m = cp.Variable((p, p))
    val = _solve(cp.Problem(cp.Minimize(
        cp.sum_squares(responses - m @ predictors) / n + lam * cp.normNuc(m)
    )))
    return val, m.value


def short_regime(responses, predictors, lam) -> tuple[float, np.ndarray]:
    """Minimise ``||Y - M X||_F^2 / n + lam ||M X||_*`` directly in ``M``."""
    p, n = predictors.shape
    m = cp.Variable((p, p))
    val = _solve(cp.Problem(cp.Minimize(
        cp.sum_squares(responses - m @ predictors) / n + lam * cp.normNuc(m @ predictors)
    )))
    return val, m.value


def kkt_distance(responses, predictors, m, lam, rank_tol=1e-9) -> float:
    """``min_W ||(2/n)(Y - M X) X^T - lam W||_F`` over subgradients ``W`` of
    the nuclear norm at ``M``, solved as a conic program in the free block."""
    p, n = predictors.shape
    g = 2.0 / n * (responses - m @ predictors) @ predictors.T
    u, s, vt = np.linalg.svd(m)
    r = int(np.sum(s > rank_tol * max(1.0, s[0] if s.size else 0.0)))
    fixed = u[:, :r] @ vt[:r]
    k = p - r
    if k == 0:
        return float(np.linalg.norm(g - lam * fixed))
    u2, v2 = u[:, r:], vt[r:].T
    a = cp.Variable((k, k))
    w = fixed + u2 @ a @ v2.T
    val = _solve(cp.Problem(cp.Minimize(cp.norm(g - lam * w, "fro")), [cp.sigma_max(a) <= 1]))
    return val


def wilson_upper_zero(n: int, z: float = 1.959963984540054) -> float:
    """Upper Wilson bound when no successes are observed: ``z^2 / (n + z^2)``."""
    return z * z / (n + z * z)


def wilson_closed_form(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    ph = k / n
    denom = 1 + z * z / n
    centre = (ph + z * z / (2 * n)) / denom
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


def dyadic_enumeration(T: int) -> list[int]:
    """``{2^k} U {T - 2^k}`` for ``k = 0..floor(log2(T/2))`` by direct looping."""
    pts = set()
    k = 0
    while 2**k <= T / 2:
        pts.add(2**k)
        pts.add(T - 2**k)
        k += 1
    return sorted(pts)


def order_statistic_quantile(samples, alpha: float) -> float:
    """Ascending order statistic at 0-based index ``ceil((1 - alpha) S)``, capped at ``S - 1``."""
    xs = sorted(float(v) for v in samples)
    S = len(xs)
    idx = min(S - 1, math.ceil(round((1 - alpha) * S, 9)))
    return xs[idx]
