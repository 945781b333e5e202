"""Linear-system primitives: system/trajectory types, Riccati and Lyapunov
solvers, rollouts, closed-loop costs, and spectral-decay utilities.

Dynamics convention throughout the package:

    x_{k+1} = A x_k + B u_k + w_k,   w_k ~ N(0, sigma_w^2 I)

with stage cost x^T Q x + u^T R u and controllers acting as u_k = pi(x_k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearSystem",
    "Trajectory",
    "LQRSolution",
    "DecayBound",
    "StaticGain",
    "NonConvergentError",
    "UnstableError",
    "spectral_radius",
    "spectral_norm",
    "dare_solve",
    "riccati_step",
    "lyapunov_solve",
    "simulate_rollout",
    "infinite_horizon_cost",
    "fit_decay_bound",
    "make_rng",
    "OVERFLOW_GUARD",
]

# State-norm threshold beyond which a rollout is flagged as diverged.
OVERFLOW_GUARD = 1e10


class NonConvergentError(RuntimeError):
    """Riccati value iteration failed to reach tolerance (unstabilizable pair?)."""


class UnstableError(RuntimeError):
    """Operation requires a Schur-stable matrix (spectral radius < 1)."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; per-trial streams are derived as base_seed + trial index."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array")
    return M


@dataclass(frozen=True)
class LinearSystem:
    """True or estimated dynamics (A, B) with quadratic cost (Q, R) and noise level.

    Q must be symmetric PSD and R symmetric PD; dimensions are checked at
    construction.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma_w: float = 1.0

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n, p = self.n, self.p
        if A.shape != (n, n) or B.shape != (n, p):
            raise ValueError("A must be n x n and B n x p")
        if Q.shape != (n, n) or R.shape != (p, p):
            raise ValueError("Q must be n x n and R p x p")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-10):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Trajectory:
    """Recorded rollout: len(states) == len(inputs) + 1 == len(process_noise) + 1.

    Replaying x_{k+1} = A x_k + B u_k + w_k from (states[0], inputs,
    process_noise) reproduces `states` exactly.
    """

    states: np.ndarray          # (T+1, n)
    inputs: np.ndarray          # (T, p)
    process_noise: np.ndarray   # (T, n)
    exploration_noise: np.ndarray  # (T, p)
    diverged: bool = False

    def __post_init__(self):
        T = len(self.inputs)
        if len(self.states) != T + 1 or len(self.process_noise) != T:
            raise ValueError("trajectory length mismatch")
        if len(self.exploration_noise) != T:
            raise ValueError("exploration noise length mismatch")

    def __len__(self) -> int:
        return len(self.inputs)

    def replay_states(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Reconstruct states from (x0, inputs, noise) under the given dynamics."""
        xs = np.empty_like(self.states)
        xs[0] = self.states[0]
        for k in range(len(self.inputs)):
            xs[k + 1] = A @ xs[k] + B @ self.inputs[k] + self.process_noise[k]
        return xs

    def stage_costs(self, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
        """Per-step costs x_k^T Q x_k + u_k^T R u_k for k = 0..T-1."""
        x = self.states[:-1]
        u = self.inputs
        return np.einsum("ki,ij,kj->k", x, Q, x) + np.einsum("ki,ij,kj->k", u, R, u)


@dataclass(frozen=True)
class LQRSolution:
    """DARE fixed point P, optimal gain K (u = Kx), and rate J_star = sigma_w^2 tr(P)."""

    P: np.ndarray
    K: np.ndarray
    J_star: float


@dataclass(frozen=True)
class DecayBound:
    """Certified envelope ||M^k|| <= C rho^k over the checked power range."""

    C: float
    rho: float


class StaticGain:
    """Wraps a gain matrix K as a (stateless) controller with u = K x."""

    def __init__(self, K: np.ndarray):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))

    def reset(self) -> None:
        pass

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.K @ x


def _as_controller(controller):
    if isinstance(controller, np.ndarray):
        return StaticGain(controller)
    return controller


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude (dense eigensolve; matrices here are small)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(M)).max())


def spectral_norm(M: np.ndarray) -> float:
    """Largest singular value."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if min(M.shape) == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def riccati_step(sys: LinearSystem, P: np.ndarray) -> np.ndarray:
    """One step of the Riccati value recursion starting from P."""
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    BtP = B.T @ P
    G = R + BtP @ B
    AtPB = A.T @ BtP.T
    return A.T @ P @ A - AtPB @ np.linalg.solve(G, AtPB.T) + Q


def dare_solve(sys: LinearSystem, tol: float = 1e-10, max_iter: int = 1_000_000) -> LQRSolution:
    """Solve the discrete algebraic Riccati equation by value iteration from P0 = 0.

    Returns the stabilizing solution with gain K = -(R + B'PB)^{-1} B'PA and
    J_star = sigma_w^2 tr(P).  Raises NonConvergentError if the residual has not
    dropped below tol after max_iter steps or the iterates blow up, which is how
    an unstabilizable pair manifests.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = sys.n
    P = np.zeros((n, n))
    blowup = 1e14 * max(1.0, np.trace(sys.Q))
    for _ in range(max_iter):
        P_next = riccati_step(sys, P)
        P_next = 0.5 * (P_next + P_next.T)
        res = np.linalg.norm(P_next - P, 2)
        P = P_next
        if res <= tol:
            break
        if np.trace(P) > blowup or not np.isfinite(P).all():
            raise NonConvergentError("Riccati iteration diverged (pair unstabilizable?)")
    else:
        raise NonConvergentError(f"no DARE fixed point after {max_iter} iterations")
    G = sys.R + sys.B.T @ P @ sys.B
    K = -np.linalg.solve(G, sys.B.T @ P @ sys.A)
    return LQRSolution(P=P, K=K, J_star=float(sys.sigma_w**2 * np.trace(P)))


def lyapunov_solve(M: np.ndarray, W: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Unique solution of P = M P M^T + W for Schur-stable M, by doubling.

    The doubling recursion S <- S + A S A^T, A <- A^2 converges quadratically;
    the result satisfies the fixed-point equation to ~1e-10 even for spectral
    radii close to 1.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if spectral_radius(M) >= 1.0:
        raise UnstableError("Lyapunov solve requires spectral radius < 1")
    S = W.copy()
    A = M.copy()
    for _ in range(200):
        inc = A @ S @ A.T
        S = S + inc
        norm_inc = np.linalg.norm(inc, "fro")
        if norm_inc <= tol * max(1.0, np.linalg.norm(S, "fro")):
            break
        A = A @ A
    return 0.5 * (S + S.T)


def simulate_rollout(
    sys: LinearSystem,
    controller,
    horizon: int,
    eta_std: float = 0.0,
    rng_seed=0,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Roll the closed loop forward `horizon` steps.

    u_k = controller(x_k) + eta_k with eta_k ~ N(0, eta_std^2 I_p).  `rng_seed`
    may be an integer seed or an existing Generator (consumed in place).
    Divergence (||x|| beyond OVERFLOW_GUARD) truncates the rollout and flags the
    trajectory; it is recorded rather than raised so regret accounting can clamp.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if eta_std < 0:
        raise ValueError("eta_std must be nonnegative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    ctrl = _as_controller(controller)
    ctrl.reset()
    n, p = sys.n, sys.p
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    w = sys.sigma_w * rng.standard_normal((horizon, n))
    eta = eta_std * rng.standard_normal((horizon, p))

    states = np.empty((horizon + 1, n))
    inputs = np.empty((horizon, p))
    states[0] = x
    diverged = False
    k_stop = horizon
    for k in range(horizon):
        u = ctrl.step(x) + eta[k]
        inputs[k] = u
        x = sys.A @ x + sys.B @ u + w[k]
        states[k + 1] = x
        if not np.isfinite(x).all() or np.linalg.norm(x) > OVERFLOW_GUARD:
            diverged = True
            k_stop = k + 1
            break
    if diverged:
        states = states[: k_stop + 1]
        inputs = inputs[:k_stop]
        w = w[:k_stop]
        eta = eta[:k_stop]
    return Trajectory(states=states, inputs=inputs, process_noise=w,
                      exploration_noise=eta, diverged=diverged)


def _augmented_closed_loop(sys_A, sys_B, controller):
    """Closed-loop transition matrix on [x; controller state], plus the output
    map u = C_z z and the noise injection selector."""
    ctrl = _as_controller(controller)
    if isinstance(ctrl, StaticGain):
        K = ctrl.K
        A_cl = sys_A + sys_B @ K
        return A_cl, K, np.eye(sys_A.shape[0]), sys_A.shape[0]
    # Dynamic (FIR-realized) controller: delegate to its own augmentation.
    return ctrl.augmented_closed_loop(sys_A, sys_B)


def infinite_horizon_cost(sys: LinearSystem, controller) -> float:
    """Steady-state LQR rate of the controller on `sys`, or +inf if unstable.

    For a static gain this is sigma_w^2 tr(Sigma (Q + K'RK)) with Sigma the
    closed-loop state covariance; dynamic controllers are evaluated on the
    augmented state [x; controller state] with cost blockdiag(Q, 0) plus the
    input-cost pullback through the controller output map.
    """
    A_cl, C_z, G, n_x = _augmented_closed_loop(sys.A, sys.B, controller)
    if spectral_radius(A_cl) >= 1.0:
        return math.inf
    n_aug = A_cl.shape[0]
    W = np.zeros((n_aug, n_aug))
    W[:n_x, :n_x] = sys.sigma_w**2 * (G @ G.T)
    Sigma = lyapunov_solve(A_cl, W)
    cost_mat = np.zeros((n_aug, n_aug))
    cost_mat[:n_x, :n_x] = sys.Q
    cost_mat += C_z.T @ sys.R @ C_z
    return float(np.trace(Sigma @ cost_mat))


def fit_decay_bound(M: np.ndarray, k_max: int = 200) -> DecayBound:
    """Fit (C, rho) with rho = (rho(M)+1)/2 and the smallest C >= 1 such that
    ||M^k|| <= C rho^k for k = 1..k_max."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r = spectral_radius(M)
    if r >= 1.0:
        raise UnstableError("decay bound requires spectral radius < 1")
    rho = 0.5 * (r + 1.0)
    C = 1.0
    Mk = np.eye(M.shape[0])
    scale = 1.0
    for _ in range(1, k_max + 1):
        Mk = Mk @ M
        scale *= rho
        C = max(C, spectral_norm(Mk) / scale)
    return DecayBound(C=float(C), rho=float(rho))
