"""FIR-truncated system-level synthesis.

The synthesis program searches over finite impulse responses {Phi_x(k),
Phi_u(k)}_{k=1..F} mapping disturbances to closed-loop states and inputs for
the model (A_hat, B_hat), with a truncation residual V:

    minimize_{gamma in [0,1)}  (1-gamma)^{-1} || blkdiag(Q^1/2, R^1/2) [Phi_x; Phi_u] ||_H2
    s.t.  Phi_x(1) = I,
          Phi_x(k+1) = A_hat Phi_x(k) + B_hat Phi_u(k),   k < F,
          V = A_hat Phi_x(F) + B_hat Phi_u(F),
          (eps_A/sqrt(a)) , (eps_B/sqrt(1-a)) scaled H-infinity norm of the
              stacked response <= gamma * (1 - C_x rho^{F+1}),
          ||V|| <= C_x rho^{F+1},
          ||Phi_x(k)|| <= C_x rho^k,  ||Phi_u(k)|| <= C_u rho^k.

The inner problem at fixed gamma is a small SDP (H2 cost as a second-order
cone, spectral-norm caps and the H-infinity bound as PSD blocks); gamma enters
only through one right-hand side, so a single factorization serves the whole
outer search.  A feasible certificate with gamma < 1 guarantees the realized
controller stabilizes every system within the declared error radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conic import (
    ConicSolver,
    LinExpr,
    ProblemBuilder,
    hinf_lmi_block,
    spectral_norm_constraint,
)
from .linsys import LinearSystem, dare_solve, fit_decay_bound, spectral_norm
from .sysid import ParamEstimate

__all__ = [
    "FIRResponse",
    "SynthesisConfig",
    "GammaGrid",
    "RealizedController",
    "SynthesisInfeasibleError",
    "synthesize_robust",
    "synthesize_constrained",
    "gamma_search",
    "realize_controller",
    "validate_realization",
    "fir_l1_norm",
    "fir_to_dict",
    "fir_from_dict",
    "implied_truncation_gap",
]


class SynthesisInfeasibleError(RuntimeError):
    """No gamma in the grid admits a feasible response (error radii too large
    for the current decay envelope); callers keep the previous controller."""


@dataclass(frozen=True)
class FIRResponse:
    """Closed-loop FIR response pair with truncation residual and certificate.

    phi_x has shape (F, n, n), phi_u (F, p, n); V is the residual
    A_hat Phi_x(F) + B_hat Phi_u(F); gamma is the certified robustness level.
    """

    phi_x: np.ndarray
    phi_u: np.ndarray
    V: np.ndarray
    F: int
    gamma: float
    eps_A: float = 0.0
    eps_B: float = 0.0

    @property
    def n(self) -> int:
        return self.phi_x.shape[1]

    @property
    def p(self) -> int:
        return self.phi_u.shape[1]

    def subspace_residual(self, est: ParamEstimate) -> float:
        """max_k ||Phi_x(k+1) - A_hat Phi_x(k) - B_hat Phi_u(k)|| plus the V defect."""
        A, B = est.A_hat, est.B_hat
        worst = spectral_norm(self.phi_x[0] - np.eye(self.n))
        for k in range(self.F - 1):
            worst = max(worst, spectral_norm(
                self.phi_x[k + 1] - A @ self.phi_x[k] - B @ self.phi_u[k]))
        worst = max(worst, spectral_norm(
            self.V - A @ self.phi_x[-1] - B @ self.phi_u[-1]))
        return worst

    def h2_norm(self, Q: np.ndarray, R: np.ndarray) -> float:
        Qs, Rs = _psd_sqrt(Q), _psd_sqrt(R)
        acc = 0.0
        for k in range(self.F):
            acc += np.linalg.norm(Qs @ self.phi_x[k], "fro") ** 2
            acc += np.linalg.norm(Rs @ self.phi_u[k], "fro") ** 2
        return math.sqrt(acc)


@dataclass(frozen=True)
class GammaGrid:
    points: int = 20
    gamma_max: float = 0.995
    golden_iters: int = 8


@dataclass(frozen=True)
class SynthesisConfig:
    """Decay envelope, FIR length, error radii and solver knobs for synthesis.

    eps_A/eps_B of None defer to the radii carried by the estimate.  The
    alpha_split fixes the Cauchy-Schwarz weighting between the A and B error
    channels (1/2 reproduces the sqrt(2)*eps form of the equal-radius case).
    """

    C_x: float
    C_u: float
    rho: float
    F: int = 12
    eps_A: float | None = None
    eps_B: float | None = None
    alpha_split: float = 0.5
    grid: GammaGrid = field(default_factory=GammaGrid)
    final_gamma_margin: float = 0.01
    scan_tol: float = 3e-4
    final_tol: float = 1e-6
    scan_max_iters: int = 20_000
    final_max_iters: int = 100_000
    boundary_tol: float = 1e-3
    boundary_max_iters: int = 20_000

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        if self.F < 1:
            raise ValueError("F must be at least 1")
        if self.C_x < 1.0 or self.C_u < 1.0:
            raise ValueError("decay magnitudes must be >= 1")

    @property
    def tail(self) -> float:
        """Residual cap C_x rho^{F+1}."""
        return self.C_x * self.rho ** (self.F + 1)

    @staticmethod
    def from_estimate(est: ParamEstimate, Q: np.ndarray, R: np.ndarray,
                      F: int = 12, slack: float = 2.0, **kw) -> "SynthesisConfig":
        """Derive the decay envelope from the certainty-equivalent closed loop
        of the estimate, with multiplicative headroom for the robust response."""
        sys_hat = LinearSystem(est.A_hat, est.B_hat, Q, R)
        K = dare_solve(sys_hat).K
        bound = fit_decay_bound(est.A_hat + est.B_hat @ K, k_max=max(200, 4 * F))
        rho = bound.rho
        C_x = max(1.0, bound.C / rho) * slack
        C_u = max(1.0, spectral_norm(K) * bound.C / rho) * slack
        return SynthesisConfig(C_x=C_x, C_u=C_u, rho=rho, F=F, **kw)


def implied_truncation_gap(cfg: SynthesisConfig) -> float:
    """Relative cost-inflation constant implied by the fixed FIR length:
    the largest C_J with F >= log((1 + 1/C_J) C_x) / log(1/rho) - 1."""
    tail = cfg.tail
    if tail >= 1.0:
        return math.inf
    return tail / (1.0 - tail)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(np.atleast_2d(np.asarray(M, float)))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


# ---------------------------------------------------------------------------
# SDP assembly
# ---------------------------------------------------------------------------

def _lin(idx_list, coef_list):
    return LinExpr(list(idx_list), list(coef_list))


def _add_subspace_rows(b, A, B, Phx, Phu, V):
    n = A.shape[0]
    p = B.shape[1]
    F = len(Phx)
    for i in range(n):
        for j in range(n):
            b.add_eq(LinExpr.var(Phx[0][i, j]), float(i == j))
    for k in range(F - 1):
        for i in range(n):
            for j in range(n):
                idx = [Phx[k + 1][i, j]]
                coef = [1.0]
                idx += [Phx[k][l, j] for l in range(n)]
                coef += [-A[i, l] for l in range(n)]
                idx += [Phu[k][l, j] for l in range(p)]
                coef += [-B[i, l] for l in range(p)]
                b.add_eq(_lin(idx, coef))
    for i in range(n):
        for j in range(n):
            idx = [V[i, j]]
            coef = [1.0]
            idx += [Phx[F - 1][l, j] for l in range(n)]
            coef += [-A[i, l] for l in range(n)]
            idx += [Phu[F - 1][l, j] for l in range(p)]
            coef += [-B[i, l] for l in range(p)]
            b.add_eq(_lin(idx, coef))


def _add_h2_soc(b, t_var, Qs, Rs, Phx, Phu, cols):
    n = Phx[0].shape[0]
    p = Phu[0].shape[0]
    ents = [LinExpr.var(t_var)]
    for Pk in Phx:
        for i in range(n):
            for j in cols:
                ents.append(_lin([Pk[l, j] for l in range(n)], Qs[i, :n]))
    for Pk in Phu:
        for i in range(p):
            for j in cols:
                ents.append(_lin([Pk[l, j] for l in range(p)], Rs[i, :p]))
    b.add_soc(b.alias_vector(ents))


def _add_decay_caps(b, cfg, Phx, Phu, V):
    for k, Pk in enumerate(Phx):
        spectral_norm_constraint(b, b.expr_matrix(Pk), cfg.C_x * cfg.rho ** (k + 1))
    for k, Pk in enumerate(Phu):
        spectral_norm_constraint(b, b.expr_matrix(Pk), cfg.C_u * cfg.rho ** (k + 1))
    spectral_norm_constraint(b, b.expr_matrix(V), cfg.tail)


class _SynthesisProgram:
    """One assembled inner SDP with a variable gamma^2 budget.

    The H-infinity fragment is written against gamma^2 as a variable g bounded
    by a patchable inequality g <= value, so the feasibility boundary solve
    (minimize g) and the fixed-gamma scans (minimize the H2 epigraph) share a
    single presolve/factorization.
    """

    def __init__(self, A_hat, B_hat, Q, R, cfg: SynthesisConfig,
                 eps_A: float, eps_B: float, h2_cols=None,
                 l1_caps=None):
        n = A_hat.shape[0]
        p = B_hat.shape[1]
        F = cfg.F
        self._A_hat, self._B_hat = np.asarray(A_hat, float), np.asarray(B_hat, float)
        b = ProblemBuilder()
        self.Phx = [b.new_var_matrix(n, n) for _ in range(F)]
        self.Phu = [b.new_var_matrix(p, n) for _ in range(F)]
        self.Vv = b.new_var_matrix(n, n)
        self.t = b.new_var()
        _add_subspace_rows(b, A_hat, B_hat, self.Phx, self.Phu, self.Vv)
        cols = list(range(n)) if h2_cols is None else list(h2_cols)
        _add_h2_soc(b, self.t, _psd_sqrt(Q), _psd_sqrt(R), self.Phx, self.Phu, cols)
        _add_decay_caps(b, cfg, self.Phx, self.Phu, self.Vv)

        tail = cfg.tail
        if tail >= 1.0:
            raise SynthesisInfeasibleError(
                "decay envelope leaves no residual headroom: C_x rho^(F+1) >= 1")
        self.robust = eps_A > 0 or eps_B > 0
        self.g = None
        self.bound_row = None
        if self.robust:
            s_A = eps_A / math.sqrt(cfg.alpha_split) / (1.0 - tail)
            s_B = eps_B / math.sqrt(1.0 - cfg.alpha_split) / (1.0 - tail)
            self.g = b.new_var()
            taps = [np.zeros((n, n + p))]
            for k in range(F):
                grid = np.empty((n, n + p), dtype=object)
                for i in range(n):
                    for j in range(n):
                        grid[i, j] = LinExpr.var(self.Phx[k][j, i], s_A)
                    for j in range(p):
                        grid[i, n + j] = LinExpr.var(self.Phu[k][j, i], s_B)
                taps.append(grid)
            hinf_lmi_block(b, taps, LinExpr.var(self.g))
            slack, self.bound_row = b.aliased_var(LinExpr.var(self.g) * -1.0, 1.0)
            b.add_nonneg([slack])

        if l1_caps is not None:
            for rows, cols_l1, cap in l1_caps:
                self._add_l1_cap(b, rows, cols_l1, cap)

        b.minimize(LinExpr.var(self.t))
        self.problem = b.build()
        self.c_obj = self.problem.c.copy()
        if self.robust:
            self.c_boundary = np.zeros_like(self.c_obj)
            self.c_boundary[self.g] = 1.0
        self.solver = ConicSolver(self.problem)
        self.cfg = cfg
        self.shape = (n, p, F)

    def _add_l1_cap(self, b, rows, cols, cap):
        """Bound the ell_inf -> ell_inf gain of the selected tap block:
        max_i sum_k sum_j |Phi_x(k)[i, j]| <= cap over i in rows, j in cols."""
        if cap < 0:
            raise ValueError("L1 cap must be nonnegative")
        F = len(self.Phx)
        absvars = {}
        for k in range(F):
            for i in rows:
                for j in cols:
                    s = b.new_var()
                    absvars[(k, i, j)] = s
                    b.nonneg_expr([LinExpr.var(s) - LinExpr.var(self.Phx[k][i, j]),
                                   LinExpr.var(s) + LinExpr.var(self.Phx[k][i, j])])
        for i in rows:
            total = LinExpr(const=cap)
            for k in range(F):
                for j in cols:
                    total = total - LinExpr.var(absvars[(k, i, j)])
            b.nonneg_expr([total])

    def solve_gamma(self, gamma: float, tol: float, max_iters: int, warm=True):
        """Inner H2 minimization at a fixed gamma; None when infeasible or
        unconverged."""
        if self.robust:
            self.solver.patch_objective(self.c_obj)
            self.solver.patch_rhs([self.bound_row], [float(gamma) ** 2])
        sol = self.solver.solve(tol=tol, max_iters=max_iters, warm=warm)
        if sol.status != "optimal":
            return None
        return sol

    def feasibility_boundary(self) -> float:
        """Smallest achievable gamma (the H-infinity norm floor), found by
        minimizing the gamma^2 variable."""
        if not self.robust:
            return 0.0
        cfg = self.cfg
        self.solver.patch_objective(self.c_boundary)
        self.solver.patch_rhs([self.bound_row], [1e6])
        sol = self.solver.solve(tol=cfg.boundary_tol,
                                max_iters=cfg.boundary_max_iters, warm=True)
        if sol.status != "optimal":
            raise SynthesisInfeasibleError(
                f"feasibility-boundary solve ended with status {sol.status}")
        return math.sqrt(max(sol.primal[self.g], 0.0))

    def extract(self, sol, gamma: float, eps_A: float, eps_B: float,
                polish: bool = True) -> FIRResponse:
        n, p, F = self.shape
        phi_x = np.stack([sol.primal[P] for P in self.Phx])
        phi_u = np.stack([sol.primal[P] for P in self.Phu])
        V = sol.primal[self.Vv]
        if polish:
            phi_x, V = _polish_taps(self._A_hat, self._B_hat, phi_x, phi_u)
        return FIRResponse(phi_x=phi_x, phi_u=phi_u, V=V, F=F,
                           gamma=float(gamma), eps_A=eps_A, eps_B=eps_B)


def _polish_taps(A, B, phi_x, phi_u):
    """Re-derive the state taps from the input taps so the affine recursion
    holds exactly (removes the first-order solver residual)."""
    F, n, _ = phi_x.shape
    out = np.empty_like(phi_x)
    out[0] = np.eye(n)
    for k in range(F - 1):
        out[k + 1] = A @ out[k] + B @ phi_u[k]
    V = A @ out[F - 1] + B @ phi_u[F - 1]
    return out, V


def gamma_search(inner_solve, grid: GammaGrid = GammaGrid(), *,
                 lower_bound: float = 0.0, objective_floor_prune: bool = True):
    """Minimize (1-gamma)^{-1} * inner(gamma) over a coarse grid followed by
    golden-section refinement around the best grid point.

    inner_solve(gamma) returns the inner optimal value (or an object with an
    `obj_primal` attribute), or None when infeasible at that gamma.  Grid
    points below `lower_bound` (a certified feasibility threshold) are skipped.
    When `objective_floor_prune` is set, the largest grid point is evaluated
    first and its value is used as a lower bound on the nonincreasing inner
    objective, letting provably suboptimal grid points be skipped; this changes
    which points are solved but not the returned minimizer.

    Returns (gamma, outer_value, payload).  Raises SynthesisInfeasibleError
    when every evaluated point is infeasible.
    """
    gammas = np.linspace(0.0, grid.gamma_max, grid.points)
    cache: dict[float, tuple] = {}

    def value_of(payload):
        return payload if isinstance(payload, (int, float)) else payload.obj_primal

    def outer(g):
        if g in cache:
            return cache[g][0]
        payload = inner_solve(g)
        if payload is None:
            cache[g] = (math.inf, None)
        else:
            cache[g] = (value_of(payload) / (1.0 - g), payload)
        return cache[g][0]

    h_floor = -math.inf
    order = [g for g in gammas if g >= lower_bound - 1e-12]
    if not order and lower_bound <= grid.gamma_max:
        order = [min(grid.gamma_max, max(lower_bound, 0.0))]
    if objective_floor_prune and order:
        top = order[-1]
        if outer(top) < math.inf:
            h_floor = cache[top][1].obj_primal if not isinstance(cache[top][1], (int, float)) \
                else cache[top][1]
            h_floor = value_of(cache[top][1])
    best_g, best_v = None, math.inf
    for g in order:
        if h_floor > -math.inf and best_v < math.inf and h_floor / (1.0 - g) > best_v:
            break
        v = outer(g)
        if v < best_v:
            best_g, best_v = g, v
    if best_g is None:
        raise SynthesisInfeasibleError("no gamma in the grid is feasible")

    # golden-section refinement between the neighbors of the best grid point
    evaluated = sorted(order)
    pos = evaluated.index(best_g)
    lo = evaluated[pos - 1] if pos > 0 else max(lower_bound, 0.0)
    hi = evaluated[pos + 1] if pos + 1 < len(evaluated) else grid.gamma_max
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, bb = lo, hi
    x1 = bb - invphi * (bb - a)
    x2 = a + invphi * (bb - a)
    f1, f2 = outer(x1), outer(x2)
    for _ in range(grid.golden_iters):
        if f1 <= f2:
            bb, x2, f2 = x2, x1, f1
            x1 = bb - invphi * (bb - a)
            f1 = outer(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (bb - a)
            f2 = outer(x2)
    candidates = [(v, g) for g, (v, _) in cache.items() if v < math.inf]
    best_v, best_g = min(candidates)
    return best_g, best_v, cache[best_g][1]


def synthesize_robust(est: ParamEstimate, cfg: SynthesisConfig,
                      Q: np.ndarray, R: np.ndarray):
    """Robust FIR synthesis for the estimate's model and error radii.

    Returns (FIRResponse, outer objective value).  Raises
    SynthesisInfeasibleError when no gamma in the grid admits a solution, the
    documented signal that the current error radii are too large (callers keep
    the previous controller).
    """
    eps_A = est.eps_A if cfg.eps_A is None else cfg.eps_A
    eps_B = est.eps_B if cfg.eps_B is None else cfg.eps_B
    prog = _SynthesisProgram(est.A_hat, est.B_hat, Q, R, cfg, eps_A, eps_B)

    if not prog.robust:
        sol = prog.solve_gamma(0.0, cfg.final_tol, cfg.final_max_iters, warm=False)
        if sol is None:
            raise SynthesisInfeasibleError("synthesis infeasible at gamma = 0")
        resp = prog.extract(sol, 0.0, eps_A, eps_B)
        return resp, resp.h2_norm(Q, R)

    gamma_min = prog.feasibility_boundary()
    if gamma_min >= cfg.grid.gamma_max:
        raise SynthesisInfeasibleError(
            f"H-infinity floor {gamma_min:.3f} exceeds the gamma grid")

    def inner(g):
        return prog.solve_gamma(g, cfg.scan_tol, cfg.scan_max_iters)

    g_star, _, _ = gamma_search(inner, cfg.grid,
                                lower_bound=min(gamma_min * 1.02 + 1e-4, cfg.grid.gamma_max))
    g_final = min(g_star + cfg.final_gamma_margin, cfg.grid.gamma_max)
    sol = prog.solve_gamma(g_final, cfg.final_tol, cfg.final_max_iters)
    if sol is None:
        sol = prog.solve_gamma(g_final, cfg.scan_tol, cfg.scan_max_iters)
        if sol is None:
            raise SynthesisInfeasibleError("refinement solve failed")
    resp = prog.extract(sol, g_final, eps_A, eps_B)
    return resp, resp.h2_norm(Q, R) / (1.0 - g_final)


# ---------------------------------------------------------------------------
# Constrained (demand-forecasting) variant
# ---------------------------------------------------------------------------

def synthesize_constrained(est_Ad: ParamEstimate, known: LinearSystem,
                           cfg: SynthesisConfig, a: float, b: float,
                           gamma: float = 0.98, constrained: bool = True):
    """Synthesis for the augmented plant [x; d] with known (A, B) dynamics and
    an estimated autonomous disturbance block A_d.

    est_Ad.A_hat is the d x d disturbance transition estimate and est_Ad.eps_A
    its ell_inf -> ell_inf (max-row-sum) error radius.  The L1 constraints

        ||(Phi_z)_22||_L1 <= gamma / eps_Ad,   ||(Phi_z)_12||_L1 <= (a/b)(1-gamma)

    guarantee ||x_k||_inf <= a whenever ||w_k||_inf <= b.  The H2 objective is
    restricted to the disturbance input channel [0; I].  With
    constrained=False the two caps are dropped (the comparison baseline).
    """
    Ad = est_Ad.A_hat
    d = Ad.shape[0]
    n = known.n
    nz = n + d
    A_aug = np.zeros((nz, nz))
    A_aug[:n, :n] = known.A
    A_aug[:n, n:] = np.eye(n, d)
    A_aug[n:, n:] = Ad
    B_aug = np.vstack([known.B, np.zeros((d, known.p))])
    Q_aug = np.zeros((nz, nz))
    Q_aug[:n, :n] = known.Q
    Q_aug[n:, n:] = np.eye(d)

    caps = []
    if constrained:
        c_cap = (a / b) * (1.0 - gamma)
        caps.append((list(range(n)), list(range(n, nz)), c_cap))
        if est_Ad.eps_A > 0:
            caps.append((list(range(n, nz)), list(range(n, nz)), gamma / est_Ad.eps_A))
    prog = _SynthesisProgram(A_aug, B_aug, Q_aug, known.R, cfg,
                             eps_A=0.0, eps_B=0.0,
                             h2_cols=list(range(n, nz)), l1_caps=caps or None)
    sol = prog.solve_gamma(0.0, cfg.final_tol, cfg.final_max_iters, warm=False)
    if sol is None:
        raise SynthesisInfeasibleError(
            "constrained synthesis infeasible (state cap unattainable)")
    return prog.extract(sol, gamma, est_Ad.eps_A, 0.0)


def fir_l1_norm(taps: np.ndarray) -> float:
    """ell_inf -> ell_inf operator norm of an FIR map: the largest absolute
    row sum of the horizontally stacked tap matrices."""
    taps = np.asarray(taps, dtype=float)
    return float(np.abs(taps).sum(axis=(0, 2)).max()) if taps.size else 0.0


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------

class RealizedController:
    """State-space implementation of u = Phi_u Phi_x^{-1} x.

    Maintains a ring buffer of disturbance estimates w_hat reconstructed from
    the internal response model,

        w_hat_k = x_k - sum_{t=2..F} Phi_x(t) w_hat_{k-t+1},
        u_k     = sum_{t=1..F} Phi_u(t) w_hat_{k-t+1};

    on the synthesis model with x_0 = 0 this reproduces {Phi_x, Phi_u} as the
    impulse response, with the residual V appearing at step F+1.
    """

    def __init__(self, resp: FIRResponse):
        self.resp = resp
        F, n, p = resp.F, resp.n, resp.p
        self.n, self.p, self.F = n, p, F
        # Mx = [Phi_x(2) ... Phi_x(F)], Mu = [Phi_u(2) ... Phi_u(F)]
        self.Mx = resp.phi_x[1:].transpose(1, 0, 2).reshape(n, (F - 1) * n) \
            if F > 1 else np.zeros((n, 0))
        self.Mu = resp.phi_u[1:].transpose(1, 0, 2).reshape(p, (F - 1) * n) \
            if F > 1 else np.zeros((p, 0))
        self.Phu1 = resp.phi_u[0]
        self.reset()

    def reset(self) -> None:
        self.buf = np.zeros((self.F - 1) * self.n)

    def step(self, x: np.ndarray) -> np.ndarray:
        w_hat = x - self.Mx @ self.buf
        u = self.Phu1 @ w_hat + self.Mu @ self.buf
        if self.F > 1:
            self.buf = np.concatenate([w_hat, self.buf[:-self.n]])
        return u

    def augmented_closed_loop(self, A: np.ndarray, B: np.ndarray):
        """Closed-loop transition on z = [x; w_hat_{k-1}; ...; w_hat_{k-F+1}],
        the output map u = C_z z, and the noise selector."""
        n, p, F = self.n, self.p, self.F
        nbuf = (F - 1) * n
        naug = n + nbuf
        C_z = np.zeros((p, naug))
        C_z[:, :n] = self.Phu1
        if F > 1:
            C_z[:, n:] = self.Mu - self.Phu1 @ self.Mx
        D_z = np.zeros((n, naug))
        D_z[:, :n] = np.eye(n)
        if F > 1:
            D_z[:, n:] = -self.Mx
        A_aug = np.zeros((naug, naug))
        A_aug[:n, :n] = A
        A_aug[:n] += B @ C_z
        if F > 1:
            A_aug[n:2 * n] = D_z
            if F > 2:
                A_aug[2 * n:, n:-n] = np.eye(nbuf - n)
        G = np.eye(n)
        return A_aug, C_z, G, n


def realize_controller(resp: FIRResponse) -> RealizedController:
    return RealizedController(resp)


def validate_realization(resp: FIRResponse, est: ParamEstimate) -> float:
    """Impulse-response replay check of the realized controller on the
    synthesis model: returns the worst deviation of the simulated (x_k, u_k)
    from (Phi_x(k), Phi_u(k)) for k <= F and of x_{F+1} from the residual V."""
    A, B = est.A_hat, est.B_hat
    n, F = resp.n, resp.F
    ctrl = RealizedController(resp)
    worst = 0.0
    for j in range(n):
        ctrl.reset()
        x = np.zeros(n)
        xs = [x]
        us = []
        for k in range(F + 1):
            u = ctrl.step(x)
            us.append(u)
            w = np.eye(n)[j] if k == 0 else np.zeros(n)
            x = A @ x + B @ u + w
            xs.append(x)
        for k in range(1, F + 1):
            worst = max(worst, np.abs(xs[k] - resp.phi_x[k - 1][:, j]).max())
            worst = max(worst, np.abs(us[k] - resp.phi_u[k - 1][:, j]).max())
        worst = max(worst, np.abs(xs[F + 1] - resp.V[:, j]).max())
    return worst


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def fir_to_dict(resp: FIRResponse) -> dict:
    """JSON-ready structure with row-major tap matrices."""
    return {
        "F": resp.F,
        "gamma": resp.gamma,
        "eps_A": resp.eps_A,
        "eps_B": resp.eps_B,
        "n": resp.n,
        "p": resp.p,
        "phi_x": [m.tolist() for m in resp.phi_x],
        "phi_u": [m.tolist() for m in resp.phi_u],
        "V": resp.V.tolist(),
    }


def fir_from_dict(data: dict) -> FIRResponse:
    return FIRResponse(
        phi_x=np.asarray(data["phi_x"], dtype=float),
        phi_u=np.asarray(data["phi_u"], dtype=float),
        V=np.asarray(data["V"], dtype=float),
        F=int(data["F"]),
        gamma=float(data["gamma"]),
        eps_A=float(data.get("eps_A", 0.0)),
        eps_B=float(data.get("eps_B", 0.0)),
    )
