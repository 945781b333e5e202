"""Dense conic-program modelling layer.

A ConicProblem is a linear objective over a flat variable vector subject to
affine equalities and cone memberships on variable slices (nonnegative orthant,
second-order cones, PSD cones in packed symmetric storage).  The ProblemBuilder
provides expression-level helpers that introduce alias variables tied to affine
expressions through tagged equalities; the solver eliminates those aliases
again during presolve, so modelling convenience costs nothing at solve time.

Packed symmetric (svec) storage: a d x d symmetric matrix is stored as the
d(d+1)/2 upper-triangle entries in column-major order with off-diagonal
entries scaled by sqrt(2), so Euclidean inner products of packed vectors match
Frobenius inner products of the matrices and the PSD cone is self-dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Cone",
    "LinExpr",
    "PSDVar",
    "ConicProblem",
    "ProblemBuilder",
    "spectral_norm_constraint",
    "hinf_lmi_block",
    "svec",
    "unsvec",
    "svec_len",
    "svec_indices",
    "dump_problem",
    "load_problem",
]

_SQRT2 = math.sqrt(2.0)


def svec_len(d: int) -> int:
    return d * (d + 1) // 2


def svec_indices(d: int):
    """Row/column index arrays of the packed upper triangle (column-major)."""
    ii, jj = [], []
    for j in range(d):
        for i in range(j + 1):
            ii.append(i)
            jj.append(j)
    return np.asarray(ii), np.asarray(jj)


def svec(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    ii, jj = svec_indices(d)
    v = M[ii, jj].astype(float).copy()
    v[ii != jj] *= _SQRT2
    return v


def unsvec(v: np.ndarray, d: int) -> np.ndarray:
    ii, jj = svec_indices(d)
    M = np.zeros((d, d))
    vals = np.asarray(v, dtype=float).copy()
    vals[ii != jj] /= _SQRT2
    M[ii, jj] = vals
    M[jj, ii] = vals
    return M


@dataclass(frozen=True)
class Cone:
    """kind in {"nonneg", "soc", "psd"}; dim is the slice length, except for
    PSD cones where it is the matrix side (slice length d(d+1)/2)."""

    kind: str
    dim: int

    @property
    def length(self) -> int:
        return svec_len(self.dim) if self.kind == "psd" else self.dim


class LinExpr:
    """Sparse affine scalar expression sum_i coef_i * x_{idx_i} + const."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const=0.0):
        self.idx = list(idx)
        self.coef = list(coef)
        self.const = float(const)

    @staticmethod
    def var(i: int, coef: float = 1.0) -> "LinExpr":
        return LinExpr([int(i)], [float(coef)])

    @staticmethod
    def of(x) -> "LinExpr":
        if isinstance(x, LinExpr):
            return x
        if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
            raise TypeError("ambiguous int; use LinExpr.var for variables")
        return LinExpr(const=float(x))

    def __add__(self, other):
        o = LinExpr.of(other)
        return LinExpr(self.idx + o.idx, self.coef + o.coef, self.const + o.const)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (LinExpr.of(other) * -1.0)

    def __rsub__(self, other):
        return LinExpr.of(other) + (self * -1.0)

    def __mul__(self, a):
        a = float(a)
        return LinExpr(list(self.idx), [c * a for c in self.coef], self.const * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def compressed(self):
        acc: dict[int, float] = {}
        for i, c in zip(self.idx, self.coef):
            acc[i] = acc.get(i, 0.0) + c
        items = [(i, c) for i, c in acc.items() if c != 0.0]
        return [i for i, _ in items], [c for _, c in items], self.const

    def single_var(self):
        """(index, coef) if the expression is a single pure variable, else None."""
        idx, coef, const = self.compressed()
        if const == 0.0 and len(idx) == 1:
            return idx[0], coef[0]
        return None


class PSDVar:
    """Handle on a packed PSD matrix variable; entry(i, j) yields the LinExpr
    for the matrix entry (accounting for the sqrt(2) packing scale)."""

    def __init__(self, indices: np.ndarray, side: int):
        self.indices = np.asarray(indices)
        self.side = side
        self._pos = {}
        ii, jj = svec_indices(side)
        for k, (i, j) in enumerate(zip(ii, jj)):
            self._pos[(int(i), int(j))] = k

    def entry(self, i: int, j: int) -> LinExpr:
        if i > j:
            i, j = j, i
        k = self._pos[(i, j)]
        scale = 1.0 if i == j else 1.0 / _SQRT2
        return LinExpr.var(self.indices[k], scale)


@dataclass
class ConicProblem:
    """Flat-variable conic program: minimize c'x + obj_const subject to
    A_eq x = b_eq and slice memberships x[S] in K."""

    n_vars: int
    c: np.ndarray
    obj_const: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    members: list            # [(np.ndarray indices, Cone)]
    alias_hint: dict = field(default_factory=dict)  # var index -> defining eq row

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]


class ProblemBuilder:
    def __init__(self):
        self._n = 0
        self._obj: LinExpr | None = None
        self._rows_idx: list[list[int]] = []
        self._rows_coef: list[list[float]] = []
        self._rhs: list[float] = []
        self._members: list = []
        self._alias_hint: dict[int, int] = {}

    # -- variables ---------------------------------------------------------
    def new_vars(self, k: int) -> np.ndarray:
        out = np.arange(self._n, self._n + k)
        self._n += k
        return out

    def new_var(self) -> int:
        return int(self.new_vars(1)[0])

    def new_var_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.new_vars(rows * cols).reshape(rows, cols)

    def expr_matrix(self, idx_grid: np.ndarray) -> np.ndarray:
        """Object array of single-variable LinExprs over an index grid."""
        out = np.empty(idx_grid.shape, dtype=object)
        for pos in np.ndindex(*idx_grid.shape):
            out[pos] = LinExpr.var(int(idx_grid[pos]))
        return out

    # -- constraints ---------------------------------------------------------
    def add_eq(self, expr: LinExpr, rhs: float = 0.0) -> int:
        idx, coef, const = expr.compressed()
        self._rows_idx.append(idx)
        self._rows_coef.append(coef)
        self._rhs.append(float(rhs) - const)
        return len(self._rhs) - 1

    def add_nonneg(self, indices) -> None:
        indices = np.atleast_1d(np.asarray(indices, dtype=int))
        self._members.append((indices, Cone("nonneg", len(indices))))

    def add_soc(self, indices) -> None:
        indices = np.atleast_1d(np.asarray(indices, dtype=int))
        self._members.append((indices, Cone("soc", len(indices))))

    def add_psd(self, indices, side: int) -> None:
        indices = np.atleast_1d(np.asarray(indices, dtype=int))
        if len(indices) != svec_len(side):
            raise ValueError("PSD slice must have length side*(side+1)/2")
        self._members.append((indices, Cone("psd", side)))

    # -- expression-level sugar (alias variables + tagged equalities) -------
    def _alias_one(self, expr) -> int:
        expr = LinExpr.of(expr) if not isinstance(expr, LinExpr) else expr
        sv = expr.single_var()
        if sv is not None and sv[1] == 1.0:
            return sv[0]
        v = self.new_var()
        row = self.add_eq(LinExpr.var(v) - expr, 0.0)
        self._alias_hint[v] = row
        return v

    def alias_vector(self, exprs) -> np.ndarray:
        return np.asarray([self._alias_one(e) for e in exprs], dtype=int)

    def aliased_var(self, expr, rhs: float = 0.0):
        """Fresh variable v tied to v = expr + rhs through a tagged equality.

        Returns (v, row) so the right-hand side can be re-patched at solve
        time; unlike _alias_one this never reuses an existing variable.
        """
        expr = LinExpr.of(expr) if not isinstance(expr, LinExpr) else expr
        v = self.new_var()
        row = self.add_eq(LinExpr.var(v) - expr, rhs)
        self._alias_hint[v] = row
        return v, row

    def nonneg_expr(self, exprs) -> np.ndarray:
        idx = self.alias_vector(exprs)
        self.add_nonneg(idx)
        return idx

    def soc_expr(self, exprs) -> np.ndarray:
        idx = self.alias_vector(exprs)
        self.add_soc(idx)
        return idx

    def psd_block_expr(self, grid: np.ndarray) -> np.ndarray:
        """PSD membership of a symmetric affine matrix; only the upper triangle
        of `grid` is read."""
        d = grid.shape[0]
        if grid.shape[1] != d:
            raise ValueError("PSD block must be square")
        ii, jj = svec_indices(d)
        exprs = []
        for i, j in zip(ii, jj):
            e = grid[i, j]
            e = LinExpr.of(e) if not isinstance(e, LinExpr) else e
            exprs.append(e * (_SQRT2 if i != j else 1.0))
        idx = self.alias_vector(exprs)
        self.add_psd(idx, d)
        return idx

    def new_psd_var(self, side: int) -> PSDVar:
        idx = self.new_vars(svec_len(side))
        self.add_psd(idx, side)
        return PSDVar(idx, side)

    def new_sym_var(self, side: int) -> PSDVar:
        """Packed symmetric matrix variable without a PSD membership (for
        matrices whose semidefiniteness is implied by another block)."""
        return PSDVar(self.new_vars(svec_len(side)), side)

    # -- objective & build ---------------------------------------------------
    def minimize(self, expr: LinExpr) -> None:
        self._obj = expr

    def build(self) -> ConicProblem:
        c = np.zeros(self._n)
        obj_const = 0.0
        if self._obj is not None:
            idx, coef, const = self._obj.compressed()
            c[idx] = coef
            obj_const = const
        m = len(self._rhs)
        rows = np.concatenate([np.full(len(ix), r) for r, ix in enumerate(self._rows_idx)]) \
            if m else np.zeros(0, dtype=int)
        cols = np.concatenate([np.asarray(ix) for ix in self._rows_idx]) if m else np.zeros(0, dtype=int)
        vals = np.concatenate([np.asarray(cf) for cf in self._rows_coef]) if m else np.zeros(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, self._n))
        A.sum_duplicates()
        return ConicProblem(
            n_vars=self._n,
            c=c,
            obj_const=obj_const,
            A_eq=A,
            b_eq=np.asarray(self._rhs, dtype=float),
            members=list(self._members),
            alias_hint=dict(self._alias_hint),
        )


# ---------------------------------------------------------------------------
# Constraint fragments
# ---------------------------------------------------------------------------

def _expr_grid(M) -> np.ndarray:
    """Coerce a matrix of floats/LinExprs to an object grid of LinExprs."""
    M = np.asarray(M, dtype=object)
    out = np.empty(M.shape, dtype=object)
    for pos in np.ndindex(*M.shape):
        e = M[pos]
        out[pos] = e if isinstance(e, LinExpr) else LinExpr(const=float(e))
    return out


def spectral_norm_constraint(builder: ProblemBuilder, M, bound: float) -> np.ndarray:
    """Encode ||M||_2 <= bound through the PSD embedding [[cI, M], [M', cI]].

    M may mix constants and LinExprs; bound is a nonnegative constant.
    Returns the packed slice of the emitted PSD block.
    """
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    M = _expr_grid(M)
    p, q = M.shape
    d = p + q
    grid = np.empty((d, d), dtype=object)
    zero = LinExpr()
    for i in range(d):
        for j in range(i, d):
            if i < p and j < p:
                grid[i, j] = LinExpr(const=bound) if i == j else zero
            elif i < p <= j:
                grid[i, j] = M[i, j - p]
            else:
                grid[i, j] = LinExpr(const=bound) if i == j else zero
    return builder.psd_block_expr(grid)


@dataclass
class HinfFragment:
    """Handle for an emitted H-infinity LMI: the PSD gram variable, the rows of
    the diagonal-sum equalities (whose right-hand side carries gamma^2), and the
    identity pattern those rows equal."""

    gram: PSDVar
    gamma_rows: np.ndarray
    gamma_pattern: np.ndarray


def hinf_lmi_block(builder: ProblemBuilder, fir_coeffs, gamma) -> HinfFragment:
    """Bound the H-infinity norm of the FIR filter H(z) = sum_k H_k z^{-k}.

    fir_coeffs is the list [H_0, ..., H_T] of p x m matrices whose entries may
    be constants or LinExprs.  Emits a packed-PSD gram variable Q of side
    p(T+1) with the block-trace conditions

        sum_t Q_tt = gamma^2 I_p,    sum_t Q_{t,t+k} = 0  (k = 1..T),

    and the coupling block [[Q, Hbar], [Hbar', I_m]] >= 0, where Hbar stacks
    the taps vertically.  Feasibility of the fragment is equivalent to
    ||H||_Hinf <= gamma.  `gamma` may be a float or a LinExpr standing for
    gamma^2 (for minimum-norm formulations); the returned handle records the
    diagonal-sum rows so a fixed gamma can be re-patched without rebuilding.
    """
    taps = [_expr_grid(H) for H in fir_coeffs]
    T = len(taps) - 1
    p, m = taps[0].shape
    for H in taps:
        if H.shape != (p, m):
            raise ValueError("all taps must share one shape")
    D = p * (T + 1)
    # PSD-ness of the gram is implied by the coupling block (Schur on I_m).
    Q = builder.new_sym_var(D)

    gamma_rows = []
    gamma_pattern = []
    for i in range(p):
        for j in range(i, p):
            acc = LinExpr()
            for t in range(T + 1):
                acc = acc + Q.entry(t * p + i, t * p + j)
            if isinstance(gamma, LinExpr):
                rhs_expr = gamma if i == j else None
                if rhs_expr is None:
                    gamma_rows.append(builder.add_eq(acc, 0.0))
                else:
                    gamma_rows.append(builder.add_eq(acc - rhs_expr, 0.0))
                gamma_pattern.append(0.0)
            else:
                rhs = float(gamma) ** 2 if i == j else 0.0
                gamma_rows.append(builder.add_eq(acc, rhs))
                gamma_pattern.append(1.0 if i == j else 0.0)
    for k in range(1, T + 1):
        for i in range(p):
            for j in range(p):
                acc = LinExpr()
                for t in range(T + 1 - k):
                    acc = acc + Q.entry(t * p + i, (t + k) * p + j)
                builder.add_eq(acc, 0.0)

    side = D + m
    grid = np.empty((side, side), dtype=object)
    zero = LinExpr()
    for r in range(side):
        for c2 in range(r, side):
            if r < D and c2 < D:
                grid[r, c2] = Q.entry(r, c2)
            elif r < D <= c2:
                t, i = divmod(r, p)
                grid[r, c2] = taps[t][i, c2 - D]
            else:
                grid[r, c2] = LinExpr(const=1.0) if r == c2 else zero
    builder.psd_block_expr(grid)
    return HinfFragment(gram=Q, gamma_rows=np.asarray(gamma_rows, dtype=int),
                        gamma_pattern=np.asarray(gamma_pattern))


def patch_gamma(problem: ConicProblem, fragment: HinfFragment, gamma: float) -> None:
    """Rewrite the gamma^2 right-hand sides of an emitted H-infinity fragment."""
    problem.b_eq[fragment.gamma_rows] = (float(gamma) ** 2) * fragment.gamma_pattern


# ---------------------------------------------------------------------------
# Plain-text dump/load (sparse triplets) for debugging
# ---------------------------------------------------------------------------

def dump_problem(problem: ConicProblem, path: str) -> None:
    """Write the problem in a line-oriented text format:

        conic-problem v1
        vars N
        objective K             followed by K lines "idx val"
        obj-const V
        equalities M NNZ        followed by NNZ lines "row col val"
        rhs M                   followed by M lines "val"
        members C               followed by C lines "kind dim idx..."
        alias H                 followed by H lines "var row"
    """
    A = problem.A_eq.tocoo()
    lines = ["conic-problem v1", f"vars {problem.n_vars}"]
    nz = np.nonzero(problem.c)[0]
    lines.append(f"objective {len(nz)}")
    lines.extend(f"{i} {problem.c[i]!r}" for i in nz)
    lines.append(f"obj-const {problem.obj_const!r}")
    lines.append(f"equalities {problem.n_eq} {A.nnz}")
    lines.extend(f"{r} {c} {v!r}" for r, c, v in zip(A.row, A.col, A.data))
    lines.append(f"rhs {problem.n_eq}")
    lines.extend(f"{v!r}" for v in problem.b_eq)
    lines.append(f"members {len(problem.members)}")
    for idx, cone in problem.members:
        lines.append(f"{cone.kind} {cone.dim} " + " ".join(str(i) for i in idx))
    lines.append(f"alias {len(problem.alias_hint)}")
    lines.extend(f"{v} {r}" for v, r in sorted(problem.alias_hint.items()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path: str) -> ConicProblem:
    with open(path) as fh:
        toks = fh.read().split("\n")
    it = iter(toks)
    if next(it).strip() != "conic-problem v1":
        raise ValueError("unrecognized problem file header")
    n = int(next(it).split()[1])
    c = np.zeros(n)
    k = int(next(it).split()[1])
    for _ in range(k):
        i, v = next(it).split()
        c[int(i)] = float(v)
    obj_const = float(next(it).split()[1])
    _, m, nnz = next(it).split()
    m, nnz = int(m), int(nnz)
    rows, cols, vals = [], [], []
    for _ in range(nnz):
        r, cc, v = next(it).split()
        rows.append(int(r))
        cols.append(int(cc))
        vals.append(float(v))
    assert next(it).split()[0] == "rhs"
    b = np.asarray([float(next(it)) for _ in range(m)])
    members = []
    cnt = int(next(it).split()[1])
    for _ in range(cnt):
        parts = next(it).split()
        kind, dim = parts[0], int(parts[1])
        idx = np.asarray([int(t) for t in parts[2:]], dtype=int)
        members.append((idx, Cone(kind, dim)))
    alias = {}
    hcnt = int(next(it).split()[1])
    for _ in range(hcnt):
        v, r = next(it).split()
        alias[int(v)] = int(r)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return ConicProblem(n_vars=n, c=c, obj_const=obj_const, A_eq=A, b_eq=b,
                        members=members, alias_hint=alias)
