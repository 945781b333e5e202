"""Least-squares identification and the confidence-set machinery shared by the
adaptive strategies.

The regression model is x_{k+1} = A x_k + B u_k + w_k with regressors
z_k = [x_k; u_k]; estimates stack as Theta = [A B] (n x (n+p)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linsys import LinearSystem, Trajectory, dare_solve, fit_decay_bound, spectral_norm

__all__ = [
    "ParamEstimate",
    "ConfidenceEllipsoid",
    "RLSState",
    "DegenerateDataError",
    "MissingTruthError",
    "ols_estimate",
    "rls_update",
    "rls_init",
    "gram_matrix",
    "error_schedule",
    "theoretical_epsilon",
    "ellipsoid_from_data",
]

COND_LIMIT = 1e12


class DegenerateDataError(RuntimeError):
    """Regressor Gram matrix is numerically singular (insufficient excitation)."""


class MissingTruthError(ValueError):
    """Error policy requires the true system but none was supplied."""


@dataclass(frozen=True)
class ParamEstimate:
    """Estimated dynamics with the operator-norm error radii used for synthesis."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    eps_A: float = 0.0
    eps_B: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.eps_A) and math.isfinite(self.eps_B)):
            raise ValueError("error radii must be finite")
        if self.eps_A < 0 or self.eps_B < 0:
            raise ValueError("error radii must be nonnegative")

    @property
    def n(self) -> int:
        return self.A_hat.shape[0]

    @property
    def p(self) -> int:
        return self.B_hat.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.A_hat, self.B_hat])


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Ellipsoidal uncertainty set {Theta : tr((Theta-Theta_hat) Z (Theta-Theta_hat)') <= eps}."""

    theta_hat: np.ndarray   # n x (n+p)
    Z: np.ndarray           # (n+p) x (n+p), positive definite
    eps: float

    def membership(self, theta: np.ndarray) -> float:
        d = theta - self.theta_hat
        return float(np.trace(d @ self.Z @ d.T))

    def contains(self, theta: np.ndarray, slack: float = 1e-9) -> bool:
        return self.membership(theta) <= self.eps * (1 + slack) + slack


def _regressors(traj: Trajectory):
    z = np.hstack([traj.states[:-1], traj.inputs])
    y = traj.states[1:]
    return z, y


def gram_matrix(traj: Trajectory, lam: float = 0.0) -> np.ndarray:
    """lam * I + sum_k z_k z_k' over the trajectory's (x_k, u_k) pairs."""
    if lam < 0:
        raise ValueError("regularization must be nonnegative")
    z, _ = _regressors(traj)
    d = z.shape[1]
    return lam * np.eye(d) + z.T @ z


def ols_estimate(traj: Trajectory, policy: str | None = None,
                 truth: LinearSystem | None = None, multiplier: float = 1.0,
                 context: dict | None = None) -> ParamEstimate:
    """Ordinary least squares fit of (A, B) from one trajectory.

    Solved through a QR factorization of the stacked regressors, which behaves
    better than the normal equations on marginally unstable data.  When an
    error policy is given, the returned estimate carries (eps_A, eps_B) from
    error_schedule; otherwise the radii are zero.

    Raises DegenerateDataError when the regressor Gram matrix has condition
    number beyond 1e12.
    """
    z, y = _regressors(traj)
    n = traj.states.shape[1]
    p = traj.inputs.shape[1]
    if len(z) < n + p + 1:
        raise DegenerateDataError("trajectory too short to identify (A, B)")
    sv = np.linalg.svd(z, compute_uv=False)
    if sv[0] <= 0 or (sv[-1] == 0.0) or (sv[0] / sv[-1]) ** 2 > COND_LIMIT:
        raise DegenerateDataError("regressor Gram matrix is numerically singular")
    theta, *_ = np.linalg.lstsq(z, y, rcond=None)
    theta = theta.T
    est = ParamEstimate(A_hat=theta[:, :n], B_hat=theta[:, n:])
    if policy is not None:
        eps_A, eps_B = error_schedule(policy, truth, est, multiplier, context=context)
        est = replace(est, eps_A=eps_A, eps_B=eps_B)
    return est


@dataclass(frozen=True)
class RLSState:
    """Functional recursive-least-squares state: P = (lam I + sum z z')^{-1}
    and W = sum x_next z'."""

    P: np.ndarray
    W: np.ndarray
    n: int
    p: int
    count: int = 0

    @property
    def theta(self) -> np.ndarray:
        return self.W @ self.P

    @property
    def estimate(self) -> ParamEstimate:
        th = self.theta
        return ParamEstimate(A_hat=th[:, :self.n], B_hat=th[:, self.n:])


def rls_init(n: int, p: int, lam: float = 1e-5) -> RLSState:
    if lam <= 0:
        raise ValueError("RLS needs strictly positive regularization")
    d = n + p
    return RLSState(P=np.eye(d) / lam, W=np.zeros((n, d)), n=n, p=p)


def rls_update(state: RLSState, x: np.ndarray, u: np.ndarray,
               x_next: np.ndarray) -> RLSState:
    """Rank-one Sherman-Morrison update; matches the batch regularized solve."""
    z = np.concatenate([np.asarray(x, float), np.asarray(u, float)])
    Pz = state.P @ z
    denom = 1.0 + z @ Pz
    P = state.P - np.outer(Pz, Pz) / denom
    W = state.W + np.outer(np.asarray(x_next, float), z)
    return RLSState(P=P, W=W, n=state.n, p=state.p, count=state.count + 1)


def theoretical_epsilon(sigma_w: float, sigma_eta: float, T: int,
                        C_star: float, rho_star: float, K_norm: float,
                        n: int, p: int, big_o_const: float = 1.0) -> float:
    """Per-epoch error bound from the algorithm's schedule,

        eps = const * sigma_w ||K*|| C* / (sigma_eta (1-rho*)^3) * sqrt((n+p)/T),

    with the hidden polylog factor folded into `big_o_const` (a documented
    heuristic knob; the bound is far too conservative to size epochs with).
    """
    if sigma_eta <= 0:
        return math.inf
    return (big_o_const * sigma_w * K_norm * C_star
            / (sigma_eta * (1.0 - rho_star) ** 3) * math.sqrt((n + p) / T))


def error_schedule(policy: str, truth: LinearSystem | None, est: ParamEstimate,
                   multiplier: float = 1.0, context: dict | None = None):
    """Produce (eps_A, eps_B) for synthesis.

    policy "actual": operator norms of the true estimation errors (requires
    truth).  "scaled": actual errors times `multiplier`.  "theoretical": the
    schedule bound via theoretical_epsilon, with constants taken from the true
    system when available, else from `context` entries C_star/rho_star/K_norm.
    `context` must carry sigma_w, sigma_eta and T for the theoretical policy.
    """
    if policy in ("actual", "scaled"):
        if truth is None:
            raise MissingTruthError(f"policy '{policy}' needs the true system")
        eps_A = spectral_norm(est.A_hat - truth.A)
        eps_B = spectral_norm(est.B_hat - truth.B)
        if policy == "scaled":
            eps_A *= multiplier
            eps_B *= multiplier
        return eps_A, eps_B
    if policy == "theoretical":
        ctx = dict(context or {})
        if truth is not None and not {"C_star", "rho_star", "K_norm"} <= ctx.keys():
            K = dare_solve(truth).K
            bound = fit_decay_bound(truth.A + truth.B @ K)
            ctx.setdefault("C_star", bound.C)
            ctx.setdefault("rho_star", bound.rho)
            ctx.setdefault("K_norm", spectral_norm(K))
        try:
            eps = theoretical_epsilon(
                sigma_w=ctx["sigma_w"], sigma_eta=ctx["sigma_eta"], T=ctx["T"],
                C_star=ctx["C_star"], rho_star=ctx["rho_star"],
                K_norm=ctx["K_norm"], n=est.n, p=est.p,
                big_o_const=ctx.get("big_o_const", 1.0))
        except KeyError as missing:
            raise MissingTruthError(f"theoretical policy missing {missing}") from None
        return eps, eps
    raise ValueError(f"unknown error policy {policy!r}")


def ellipsoid_from_data(z_gram: np.ndarray, theta_hat: np.ndarray,
                        truth: LinearSystem | None = None,
                        eps: float | None = None,
                        multiplier: float = 1.0) -> ConfidenceEllipsoid:
    """Confidence set from a (regularized) Gram matrix and estimate.

    With `truth` given and eps omitted, the radius is the exact membership
    value of the true parameters, scaled by multiplier**2 (inflating the
    estimation error by `multiplier` inflates the quadratic form by its
    square).
    """
    if eps is None:
        if truth is None:
            raise MissingTruthError("need the true system to calibrate the radius")
        theta_star = np.hstack([truth.A, truth.B])
        d = theta_hat - theta_star
        eps = float(np.trace(d @ z_gram @ d.T)) * multiplier**2
    return ConfidenceEllipsoid(theta_hat=theta_hat, Z=z_gram, eps=float(eps))
