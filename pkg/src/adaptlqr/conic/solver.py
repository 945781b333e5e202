"""Operator-splitting conic solver.

Solves the ConicProblem form (linear objective, affine equalities, cone
memberships on variable slices) by reducing it to the standard primal/dual pair

    minimize c'x                maximize -b'y
    s.t. Ax + s = b, s in K     s.t. A'y + c = 0, y in K*

and running ADMM on the homogeneous self-dual embedding, the same first-order
scheme used by splitting conic solvers.  One linear system (I + A'A) is
factored per problem and reused across iterations and re-solves, so sweeping a
scalar that only enters the right-hand side (the synthesis gamma) is cheap.

Alias variables introduced by the ProblemBuilder (fresh variables tied to an
affine expression by a tagged equality, used only inside one cone slice) are
eliminated in presolve: their cone rows absorb the defining equality, which
keeps the factored system at the size of the natural variables.

Diagonal (Ruiz) equilibration is applied with uniform scaling inside SOC/PSD
blocks so cone membership survives the scaling.  Termination follows the usual
normalized residuals; infeasibility and unboundedness are declared from
certificate residuals sustained over a window of iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .problem import Cone, ConicProblem, svec_indices, svec_len

__all__ = ["ConicSolution", "ConicSolver", "solve_conic", "SolverLimitError"]


class SolverLimitError(ValueError):
    """Problem exceeds the configured dense size limit."""


@dataclass
class ConicSolution:
    primal: np.ndarray
    dual_eq: np.ndarray
    dual_members: list
    status: str                  # optimal | infeasible | unbounded | max_iters
    primal_residual: float
    dual_residual: float
    gap: float
    obj_primal: float
    obj_dual: float
    iterations: int

    @property
    def dual(self) -> np.ndarray:
        parts = [self.dual_eq] + [np.asarray(d) for d in self.dual_members]
        return np.concatenate(parts) if parts else np.zeros(0)


def _validate_aliases(problem: ConicProblem):
    """Return the set of alias variables that can safely be eliminated."""
    A = problem.A_eq.tocsc()
    col_counts = np.diff(A.indptr)
    member_count = np.zeros(problem.n_vars, dtype=int)
    for idx, _ in problem.members:
        member_count[idx] += 1
    ok = {}
    for v, r in problem.alias_hint.items():
        if problem.c[v] != 0.0 or col_counts[v] != 1 or member_count[v] != 1:
            continue
        start, end = A.indptr[v], A.indptr[v + 1]
        if A.indices[start] != r or abs(A.data[start] - 1.0) > 1e-12:
            continue
        ok[v] = r
    # an alias row must not reference other eliminated aliases
    Ar = problem.A_eq.tocsr()
    stable = False
    while not stable:
        stable = True
        for v, r in list(ok.items()):
            cols = Ar.indices[Ar.indptr[r]:Ar.indptr[r + 1]]
            if any((w in ok) and w != v for w in cols):
                del ok[v]
                stable = False
    return ok


class _Reduction:
    """Original problem mapped to grouped SCS-form data (A, b, c, cones)."""

    def __init__(self, problem: ConicProblem):
        elim = _validate_aliases(problem)
        n = problem.n_vars
        A_eq = problem.A_eq.tocsr()
        m_eq = A_eq.shape[0]

        elim_rows = {r: v for v, r in elim.items()}
        keep_rows = np.asarray([r for r in range(m_eq) if r not in elim_rows], dtype=int)

        # Memberships sorted into canonical cone order (nonneg, soc, psd by side).
        order = {"nonneg": 0, "soc": 1, "psd": 2}
        mem_sorted = sorted(
            range(len(problem.members)),
            key=lambda k: (order[problem.members[k][1].kind],
                           problem.members[k][1].dim if problem.members[k][1].kind == "psd" else 0,
                           k),
        )

        cone_rows = []          # (A-row as (cols, vals), b value)
        mem_positions = []      # per membership: row offsets inside the cone zone
        row_of_eq = np.full(m_eq, -1, dtype=int)   # original eq row -> reduced b position
        for pos, r in enumerate(keep_rows):
            row_of_eq[r] = pos
        m_zero = len(keep_rows)

        layout = []             # (kind, side_or_len, start, length) in the s vector
        elim_value_rows = {}    # var -> cone row position (for primal recovery)
        offset = m_zero
        mem_positions = [None] * len(problem.members)
        for k in mem_sorted:
            idx, cone = problem.members[k]
            start = offset
            rows_here = []
            for v in idx:
                v = int(v)
                if v in elim:
                    r = elim[v]
                    lo, hi = A_eq.indptr[r], A_eq.indptr[r + 1]
                    cols = A_eq.indices[lo:hi]
                    vals = A_eq.data[lo:hi].copy()
                    vals[cols == v] = 0.0
                    cone_rows.append((cols, vals, problem.b_eq[r]))
                    row_of_eq[r] = offset
                    elim_value_rows[v] = offset
                else:
                    cone_rows.append((np.asarray([v]), np.asarray([-1.0]), 0.0))
                rows_here.append(offset)
                offset += 1
            layout.append((cone.kind, cone.dim, start, offset - start))
            mem_positions[k] = np.asarray(rows_here, dtype=int)

        m_total = offset
        # assemble A
        r_list, c_list, v_list = [], [], []
        Ak = A_eq[keep_rows] if m_zero else sp.csr_matrix((0, n))
        Ak = Ak.tocoo()
        r_list.append(Ak.row)
        c_list.append(Ak.col)
        v_list.append(Ak.data)
        b = np.zeros(m_total)
        b[:m_zero] = problem.b_eq[keep_rows] if m_zero else []
        for i, (cols, vals, brhs) in enumerate(cone_rows):
            rr = m_zero + i
            r_list.append(np.full(len(cols), rr))
            c_list.append(cols)
            v_list.append(vals)
            b[rr] = brhs
        A_full = sp.csr_matrix(
            (np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))),
            shape=(m_total, n),
        )
        keep_cols = np.asarray([j for j in range(n) if j not in elim], dtype=int)
        A_red = A_full[:, keep_cols].tocsr()
        A_red.sum_duplicates()
        A_red.eliminate_zeros()

        self.problem = problem
        self.elim = elim
        self.elim_value_rows = elim_value_rows
        self.keep_cols = keep_cols
        self.keep_rows = keep_rows
        self.row_of_eq = row_of_eq
        self.mem_positions = mem_positions
        self.m_zero = m_zero
        self.layout = layout
        self.A = A_red
        self.b = b
        self.c = problem.c[keep_cols].copy()

    def expand_primal(self, x_red: np.ndarray, s: np.ndarray) -> np.ndarray:
        x = np.zeros(self.problem.n_vars)
        x[self.keep_cols] = x_red
        for v, rowpos in self.elim_value_rows.items():
            x[v] = s[rowpos]
        return x

    def expand_duals(self, y: np.ndarray):
        dual_eq = np.zeros(self.problem.A_eq.shape[0])
        mask = self.row_of_eq >= 0
        dual_eq[mask] = y[self.row_of_eq[mask]]
        dual_members = [y[pos] for pos in self.mem_positions]
        return dual_eq, dual_members


class _ConeOps:
    """Vectorized projection onto the product cone of the non-zero-cone tail of
    the s/y layout; operates in place on the tail segment (offsets are relative
    to the end of the zero block, whose duals are free)."""

    def __init__(self, layout, m_zero: int):
        self.nonneg = [(s - m_zero, s - m_zero + ln)
                       for kind, _, s, ln in layout if kind == "nonneg"]
        self.soc = [(s - m_zero, s - m_zero + ln)
                    for kind, _, s, ln in layout if kind == "soc"]
        psd = [(dim, s - m_zero) for kind, dim, s, _ in layout if kind == "psd"]
        groups: dict[int, list[int]] = {}
        for dim, s in psd:
            groups.setdefault(dim, []).append(s)
        self.psd_groups = []
        for d, starts in sorted(groups.items()):
            ii, jj = svec_indices(d)
            L = svec_len(d)
            gather = np.zeros((len(starts), d, d), dtype=int)
            base = np.zeros((d, d), dtype=int)
            base[ii, jj] = np.arange(L)
            base[jj, ii] = np.arange(L)
            for k, st in enumerate(starts):
                gather[k] = base + st
            scale_in = np.ones((d, d))
            off = ii != jj
            scale_in[ii[off], jj[off]] = 1.0 / math.sqrt(2.0)
            scale_in[jj[off], ii[off]] = 1.0 / math.sqrt(2.0)
            pack_scale = np.ones(L)
            pack_scale[off] = math.sqrt(2.0)
            flat = np.stack([st + np.arange(L) for st in starts])
            self.psd_groups.append((gather, scale_in, ii, jj, pack_scale, flat))

    def project(self, y: np.ndarray) -> None:
        for s, e in self.nonneg:
            np.maximum(y[s:e], 0.0, out=y[s:e])
        for s, e in self.soc:
            t = y[s]
            z = y[s + 1:e]
            nz = np.linalg.norm(z)
            if nz <= t:
                continue
            if nz <= -t:
                y[s:e] = 0.0
            else:
                coef = 0.5 * (1.0 + t / nz)
                y[s] = coef * nz
                y[s + 1:e] = coef * z
        for gather, scale_in, ii, jj, pack_scale, flat in self.psd_groups:
            X = y[gather] * scale_in
            w, V = np.linalg.eigh(X)
            np.maximum(w, 0.0, out=w)
            Xp = np.einsum("bik,bk,bjk->bij", V, w, V, optimize=True)
            y[flat] = Xp[:, ii, jj] * pack_scale


class ConicSolver:
    """Reusable solver instance: presolve, scaling, and the (I + A'A)
    factorization are computed once; `solve` can be called repeatedly with
    warm starts and right-hand-side patches."""

    def __init__(self, problem: ConicProblem, over_relax: float = 1.5,
                 ruiz_iters: int = 12, dense_limit: int = 5000):
        if problem.n_vars > dense_limit:
            raise SolverLimitError(
                f"{problem.n_vars} variables exceeds the dense limit {dense_limit}")
        self.red = _Reduction(problem)
        self.alpha = float(over_relax)
        A, b, c = self.red.A, self.red.b, self.red.c
        self.m, self.n = A.shape

        # Ruiz equilibration with block-uniform row scales on SOC/PSD slices.
        D = np.ones(self.m)
        E = np.ones(self.n)
        blocks = [(s, s + ln) for kind, _, s, ln in self.red.layout if kind in ("soc", "psd")]
        As = A.copy().astype(float)
        for _ in range(ruiz_iters):
            As_abs = abs(As)
            rmax = np.asarray(As_abs.max(axis=1).todense()).ravel()
            rmax[rmax == 0] = 1.0
            dr = 1.0 / np.sqrt(rmax)
            for s, e in blocks:
                dr[s:e] = dr[s:e].mean()
            cmax = np.asarray(As_abs.max(axis=0).todense()).ravel()
            cmax[cmax == 0] = 1.0
            dc = 1.0 / np.sqrt(cmax)
            As = sp.diags(dr) @ As @ sp.diags(dc)
            D *= dr
            E *= dc
        self.D, self.E = D, E
        self.A_s = As.tocsr()
        self.At_s = As.T.tocsr()
        self.c_s = E * c
        b_s = D * b
        self.sigma = (1.0 + np.linalg.norm(self.c_s)) / (1.0 + np.linalg.norm(b_s))
        self.b_s = self.sigma * b_s

        G = (self.At_s @ self.A_s).toarray()
        G[np.diag_indices_from(G)] += 1.0
        self.chol = cho_factor(G, lower=True, check_finite=False)
        self._refresh_g()

        self.cones = _ConeOps(self.red.layout, self.red.m_zero)
        self.u = None
        self.v = None

    # -- internals -----------------------------------------------------------
    def _refresh_g(self):
        gx = cho_solve(self.chol, self.c_s - self.At_s @ self.b_s, check_finite=False)
        gy = self.b_s + self.A_s @ gx
        self.g_x, self.g_y = gx, gy
        self.g_denom = 1.0 + self.c_s @ gx + self.b_s @ gy

    def _solve_iq(self, wx, wy, wt):
        px = cho_solve(self.chol, wx - self.At_s @ wy, check_finite=False)
        py = wy + self.A_s @ px
        tau = (wt + self.c_s @ px + self.b_s @ py) / self.g_denom
        return px - self.g_x * tau, py - self.g_y * tau, tau

    def patch_rhs(self, eq_rows, values) -> None:
        """Replace right-hand sides of original equality rows (by row id)."""
        pos = self.red.row_of_eq[np.asarray(eq_rows, dtype=int)]
        if np.any(pos < 0):
            raise ValueError("cannot patch a dropped equality row")
        self.red.b[pos] = values
        self.b_s[pos] = self.sigma * self.D[pos] * np.asarray(values, dtype=float)
        self._refresh_g()

    def patch_objective(self, c_new: np.ndarray) -> None:
        """Swap the objective vector (indexed over the original variables).

        The factorization does not involve c, so this is cheap; eliminated
        alias variables must keep zero cost.
        """
        c_new = np.asarray(c_new, dtype=float)
        if any(c_new[v] != 0.0 for v in self.red.elim):
            raise ValueError("objective touches an eliminated alias variable")
        self.red.c = c_new[self.red.keep_cols].copy()
        self.c_s = self.E * self.red.c
        self._refresh_g()

    # -- main loop -------------------------------------------------------------
    def solve(self, tol: float = 1e-7, max_iters: int = 200_000,
              warm: bool = False, infeas_tol: float = 1e-7,
              sustain_iters: int = 100, check_every: int = 5) -> ConicSolution:
        m, n = self.m, self.n
        if not warm or self.u is None:
            u = np.zeros(n + m + 1)
            u[-1] = 1.0
            v = np.zeros(n + m + 1)
        else:
            u, v = self.u, self.v

        alpha = self.alpha
        m_zero = self.red.m_zero
        nb = 1.0 + np.linalg.norm(self.red.b)
        nc = 1.0 + np.linalg.norm(self.red.c)
        scale_b = max(1.0, np.linalg.norm(self.red.b))
        scale_c = max(1.0, np.linalg.norm(self.red.c))
        Dinv = 1.0 / self.D
        best = None
        pinf_run = 0
        dinf_run = 0
        status = "max_iters"
        it = 0
        for it in range(1, max_iters + 1):
            w = u + v
            ux, uy, ut = self._solve_iq(w[:n], w[n:n + m], w[-1])
            rx = alpha * ux + (1 - alpha) * u[:n]
            ry = alpha * uy + (1 - alpha) * u[n:n + m]
            rt = alpha * ut + (1 - alpha) * u[-1]
            tx = rx - v[:n]
            ty = ry - v[n:n + m]
            tt = rt - v[-1]
            # project: x free, zero-cone duals free, remaining duals onto their
            # (self-dual) cones, tau onto the nonnegative ray
            self.cones.project(ty[m_zero:])
            if tt < 0.0:
                tt = 0.0
            u[:n] = tx
            u[n:n + m] = ty
            u[-1] = tt
            v[:n] += tx - rx
            v[n:n + m] += ty - ry
            v[-1] += tt - rt

            if it % check_every:
                continue

            tau = u[-1]
            if tau > 1e-9:
                x_red = self.E * u[:n] / (self.sigma * tau)
                y_un = self.D * u[n:n + m] / tau
                s_un = Dinv * v[n:n + m] / (self.sigma * tau)
                pres = np.linalg.norm(self.red.A @ x_red + s_un - self.red.b) / nb
                dres = np.linalg.norm(self.red.A.T @ y_un + self.red.c) / nc
                cx = self.red.c @ x_red
                by = self.red.b @ y_un
                gap = abs(cx + by) / (1.0 + abs(cx) + abs(by))
                if best is None or max(pres, dres, gap) < best[0]:
                    best = (max(pres, dres, gap), x_red.copy(), y_un.copy(),
                            s_un.copy(), pres, dres, gap, cx, by)
                if pres <= tol and dres <= tol and gap <= tol:
                    status = "optimal"
                    break

            y_cert = self.D * u[n:n + m]
            bty = self.red.b @ y_cert
            if bty < -1e-12 and \
                    np.linalg.norm(self.red.A.T @ y_cert) * scale_b <= -bty * infeas_tol:
                pinf_run += check_every
            else:
                pinf_run = 0
            x_cert = self.E * u[:n]
            s_cert = Dinv * v[n:n + m]
            ctx = self.red.c @ x_cert
            if ctx < -1e-12 and \
                    np.linalg.norm(self.red.A @ x_cert + s_cert) * scale_c <= -ctx * infeas_tol:
                dinf_run += check_every
            else:
                dinf_run = 0
            if pinf_run >= sustain_iters:
                status = "infeasible"
                break
            if dinf_run >= sustain_iters:
                status = "unbounded"
                break
            nrm = np.linalg.norm(u) + np.linalg.norm(v)
            if nrm > 1e9:
                u /= nrm / 1e3
                v /= nrm / 1e3

        self.u, self.v = u, v
        if status in ("infeasible", "unbounded") or best is None:
            x_full = np.zeros(self.red.problem.n_vars)
            dual_eq, dual_members = self.red.expand_duals(
                self.D * u[n:n + m] if status == "infeasible" else np.zeros(m))
            return ConicSolution(
                primal=x_full, dual_eq=dual_eq, dual_members=dual_members,
                status=status, primal_residual=math.inf, dual_residual=math.inf,
                gap=math.inf, obj_primal=math.nan, obj_dual=math.nan, iterations=it)
        _, x_red, y_un, s_un, pres, dres, gap, cx, by = best
        x_full = self.red.expand_primal(x_red, s_un)
        dual_eq, dual_members = self.red.expand_duals(y_un)
        const = self.red.problem.obj_const
        return ConicSolution(
            primal=x_full, dual_eq=dual_eq, dual_members=dual_members,
            status=status, primal_residual=float(pres), dual_residual=float(dres),
            gap=float(gap), obj_primal=float(cx + const), obj_dual=float(-by + const),
            iterations=it)


def solve_conic(problem: ConicProblem, tol: float = 1e-7,
                max_iters: int = 200_000, **kw) -> ConicSolution:
    """One-shot solve of a ConicProblem (see ConicSolver for re-solve APIs)."""
    return ConicSolver(problem).solve(tol=tol, max_iters=max_iters, **kw)
