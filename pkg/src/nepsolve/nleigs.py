"""Rational-interpolation eigensolver with a compact Krylov representation.

Pipeline: the boundary of the target region is discretized, node/pole pairs
are chosen greedily (Leja-Bagby) from the boundary and the singularity set,
and T is replaced by a rational interpolant in the degree-graded rational
Newton basis.  The companion-type linearization of the interpolant is never
formed: shift-and-invert products are applied through block recurrences with
a single factorization of R_d(sigma).  The linear problem is solved with
Krylov-Schur, either on explicitly stored vectors of length d*n (full basis)
or on a compact tensor representation V_k = (I_d (x) U) G_k of the same basis
(the default).  A two-sided variant runs a second Krylov process with the
adjoint recurrences to recover left eigenvectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg

from .core import (
    EigenPair,
    EigenSolution,
    NepError,
    NepOperator,
    Settings,
    backward_error,
)
from .functions import ScalarFunction, fn_eval_matrix
from .linalg import (
    FullBasisEngine,
    KrylovSchurDriver,
    LinearSolverConfig,
    inf_norm,
    make_linear_solver,
    orthogonalize,
)

__all__ = [
    "LejaBagbySequence",
    "leja_bagby",
    "RationalInterpolant",
    "divided_differences",
    "auto_singularities",
    "UnsupportedPoleDetection",
    "ShiftInvertContext",
    "shift_invert_apply",
    "shift_invert_apply_adjoint",
    "toar_expand",
    "toar_arnoldi",
    "nleigs_solve",
]

DD_TOL_DEFAULT = 1e-11
DD_MAXDEG_DEFAULT = 30
BOUNDARY_POINTS_DEFAULT = 1000
COMPRESS_RTOL = 1e-13


class UnsupportedPoleDetection(NepError):
    """Raised when automatic pole detection meets a non-rational term."""


# -- Leja-Bagby points -------------------------------------------------------


@dataclass
class LejaBagbySequence:
    """Greedy interpolation nodes, poles and normalization factors.

    ``nodes[j]`` and ``poles[j]`` pair with the basis function b_j; poles[0]
    is unused (kept at infinity).  ``betas`` normalizes each b_j to unit
    maximum modulus over the discretized boundary.
    """

    nodes: np.ndarray
    poles: np.ndarray
    betas: np.ndarray

    @property
    def max_degree(self) -> int:
        return len(self.nodes) - 1

    def inv_pole(self, j: int) -> complex:
        xi = self.poles[j]
        return 0.0 if np.isinf(xi) else 1.0 / xi

    def b_values(self, lam: complex, up_to: int) -> np.ndarray:
        """b_0(lam) .. b_{up_to}(lam) by the graded recurrence."""
        lam = complex(lam)
        out = np.empty(up_to + 1, dtype=complex)
        out[0] = 1.0 / self.betas[0]
        for j in range(1, up_to + 1):
            pole_factor = 1.0 - lam * self.inv_pole(j)
            if pole_factor == 0:
                raise NepError(f"basis function evaluated at the pole {self.poles[j]}")
            out[j] = out[j - 1] * (lam - self.nodes[j - 1]) / (self.betas[j] * pole_factor)
        return out


def leja_bagby(
    boundary,
    singularities,
    d_max: int,
    start_hint: complex = 0.0,
) -> LejaBagbySequence:
    """Greedy Leja-Bagby node/pole selection on discretized sets.

    Nodes maximize and poles minimize |s_j| over the boundary and singularity
    discretizations respectively; the running products are tracked as sums of
    log-moduli so long sequences cannot overflow.  An empty singularity list
    places every pole at infinity (polynomial interpolation).
    """
    boundary = np.asarray(boundary, dtype=complex).ravel()
    if boundary.size == 0:
        raise ValueError("boundary discretization is empty")
    sing = np.asarray(list(singularities), dtype=complex).ravel()
    d_max = min(d_max, boundary.size - 1)

    nodes = np.empty(d_max + 1, dtype=complex)
    poles = np.full(d_max + 1, np.inf, dtype=complex)
    betas = np.ones(d_max + 1, dtype=float)

    s0 = boundary[np.argmin(np.abs(boundary - complex(start_hint)))]
    nodes[0] = s0

    with np.errstate(divide="ignore"):
        log_bnd = np.log(np.abs(boundary - s0))
        log_xi = np.log(np.abs(sing - s0)) if sing.size else None
    b_bnd = np.full(boundary.shape, 1.0 / betas[0], dtype=complex)

    for j in range(1, d_max + 1):
        if sing.size:
            # a pole already used (or equal to a node) has |s| = +inf there
            # and must never be picked again; when every candidate is
            # exhausted the remaining poles are set to infinity
            imin = int(np.argmin(log_xi))
            if np.isfinite(log_xi[imin]):
                xi = sing[imin]
                if np.any(np.abs(nodes[:j] - xi) == 0.0):
                    raise NepError(
                        f"degenerate configuration: pole {xi} coincides with a node"
                    )
                poles[j] = xi
        sj = boundary[int(np.argmax(log_bnd))]
        nodes[j] = sj
        inv_xi = 0.0 if np.isinf(poles[j]) else 1.0 / poles[j]
        pole_factor = 1.0 - boundary * inv_xi
        with np.errstate(divide="ignore", invalid="ignore"):
            t = b_bnd * (boundary - nodes[j - 1]) / pole_factor
        t = np.where(np.isfinite(t), t, 0.0)
        bj = float(np.max(np.abs(t)))
        if bj == 0.0:
            raise NepError("degenerate configuration: normalization factor vanished")
        betas[j] = bj
        b_bnd = t / bj
        with np.errstate(divide="ignore", invalid="ignore"):
            upd_b = np.log(np.abs(boundary - sj))
            if inv_xi != 0.0:
                upd_b = upd_b - np.log(np.abs(1.0 - boundary * inv_xi))
            # a boundary point hitting a node goes to -inf (never re-picked);
            # NaN can only arise from inf - inf collisions, treat as excluded
            log_bnd = log_bnd + np.nan_to_num(upd_b, nan=-np.inf, posinf=np.inf, neginf=-np.inf)
            log_bnd = np.where(np.isnan(log_bnd), -np.inf, log_bnd)
            if sing.size:
                upd_x = np.log(np.abs(sing - sj))
                if inv_xi != 0.0:
                    upd_x = upd_x - np.log(np.abs(1.0 - sing * inv_xi))
                # +inf marks a used-up pole and keeps it out of the argmin
                log_xi = log_xi + np.nan_to_num(upd_x, nan=np.inf, posinf=np.inf, neginf=-np.inf)
                log_xi = np.where(np.isnan(log_xi), np.inf, log_xi)
    return LejaBagbySequence(nodes, poles, betas)


# -- automatic singularities ----------------------------------------------------


def _poly_roots(coeffs) -> np.ndarray:
    c = np.trim_zeros(np.asarray(coeffs, dtype=complex), "f")
    if c.size <= 1:
        return np.zeros(0, dtype=complex)
    return np.roots(c)


def _poles_of(f: ScalarFunction) -> List[complex]:
    if f.kind == "rational":
        roots = _poly_roots(f._den())
        alpha = complex(f.alpha)
        if alpha == 0:
            return []
        return list(roots / alpha)
    if f.kind == "combine" and f.op in ("add", "mul"):
        inner = _poles_of(f.left) + _poles_of(f.right)
        alpha = complex(f.alpha)
        if alpha == 0:
            return []
        return [z / alpha for z in inner]
    raise UnsupportedPoleDetection(
        f"cannot determine poles of a {f.kind}{'/' + str(f.op) if f.op else ''} term"
    )


def auto_singularities(op: NepOperator) -> np.ndarray:
    """Poles of a rational split operator: union of denominator roots."""
    if not op.is_split:
        raise UnsupportedPoleDetection("pole detection requires the split form")
    poles: List[complex] = []
    for _, f in op.terms:
        poles.extend(_poles_of(f))
    merged: List[complex] = []
    for z in poles:
        if not any(abs(z - w) <= 1e-10 * max(1.0, abs(w)) for w in merged):
            merged.append(z)
    return np.asarray(merged, dtype=complex)


# -- rational interpolant ----------------------------------------------------------


@dataclass
class RationalInterpolant:
    """Rational Newton interpolant R_d(lam) = sum_j b_j(lam) D_j.

    In split form the divided-difference matrices are kept implicitly as the
    scalar coefficients ``coeffs[i, j]`` over the operator terms; otherwise
    the matrices appear explicitly in ``dd_matrices``.
    """

    op: NepOperator
    seq: LejaBagbySequence
    d: int
    coeffs: Optional[np.ndarray] = None          # (nterms, d+1), split path
    dd_matrices: Optional[list] = None           # explicit D_j, callback path
    norm_history: Optional[np.ndarray] = None
    reached_max_degree: bool = False

    @property
    def split(self) -> bool:
        return self.coeffs is not None

    def b_values(self, lam: complex) -> np.ndarray:
        return self.seq.b_values(lam, self.d)

    def b_values_linearized(self, lam: complex) -> np.ndarray:
        """Basis values with the last pole moved to infinity.

        The companion-type linearization is built under this simplification,
        so every quantity entering its factorization must use the modified
        final basis function.
        """
        b = self.seq.b_values(lam, self.d - 1)
        bd = b[self.d - 1] * (lam - self.seq.nodes[self.d - 1]) / self.seq.betas[self.d]
        return np.concatenate([b, [bd]])

    def assemble(self, lam: complex, weights: Optional[np.ndarray] = None):
        """R_d(lam) as a sparse matrix."""
        b = self.b_values(lam) if weights is None else weights
        if self.split:
            w = self.coeffs @ b
            terms = self.op.terms
            acc = w[0] * terms[0][0]
            for wi, (A, _) in zip(w[1:], terms[1:]):
                acc = acc + wi * A
            return acc.tocsr()
        acc = b[0] * self.dd_matrices[0]
        for bj, D in zip(b[1:], self.dd_matrices[1:]):
            acc = acc + bj * D
        return acc.tocsr()

    def dd_apply(self, j: int, v: np.ndarray) -> np.ndarray:
        """D_j v (assembled on the fly in the split case)."""
        if self.split:
            out = np.zeros(self.op.n, dtype=complex)
            for i, (A, _) in enumerate(self.op.terms):
                c = self.coeffs[i, j]
                if c != 0:
                    out += c * (A @ v)
            return out
        return self.dd_matrices[j] @ v

    def dd_dense(self, j: int) -> np.ndarray:
        if self.split:
            n = self.op.n
            acc = np.zeros((n, n), dtype=complex)
            for i, (A, _) in enumerate(self.op.terms):
                acc += self.coeffs[i, j] * A.toarray()
            return acc
        return self.dd_matrices[j].toarray()


def _bidiagonal_quotient(seq: LejaBagbySequence, m: int) -> np.ndarray:
    """H_m K_m^{-1} for the divided-difference matrix functions."""
    nodes = seq.nodes[:m]
    Hb = np.diag(nodes.astype(complex))
    Kb = np.eye(m, dtype=complex)
    for j in range(1, m):
        Hb[j, j - 1] = seq.betas[j]
        Kb[j, j - 1] = seq.betas[j] * seq.inv_pole(j)
    # M = Hb Kb^{-1}  <=>  Kb^T M^T = Hb^T
    Mt = scipy.linalg.solve_triangular(Kb.T, Hb.T, lower=False)
    return Mt.T


def divided_differences(
    op: NepOperator,
    seq: LejaBagbySequence,
    dd_tol: float = DD_TOL_DEFAULT,
    d_max: int = DD_MAXDEG_DEFAULT,
) -> RationalInterpolant:
    """Generate divided differences until their norms fall below dd_tol.

    Split form: the scalar divided differences of each f_i are read off
    matrix functions of the bidiagonal quotient, and the stopping estimate is
    the max modulus over the terms.  Callback form: explicit matrices from
    the interpolation recurrence with infinity-norm stopping.  The degree
    never drops below 2 (required by the linearization recurrences).
    """
    d_max = min(d_max, seq.max_degree)
    if d_max < 2:
        raise NepError("need at least degree 2; supply a larger node budget")
    beta0 = seq.betas[0]
    if op.is_split:
        ell = op.nterms
        coeffs = np.zeros((ell, d_max + 1), dtype=complex)
        history = np.zeros(d_max + 1)
        d = d_max
        reached = True
        delta0 = None
        for j in range(d_max + 1):
            M = _bidiagonal_quotient(seq, j + 1)
            for i, (_, f) in enumerate(op.terms):
                F = fn_eval_matrix(f, M, max_dim=max(M.shape[0], 256))
                coeffs[i, j] = beta0 * F[j, 0]
            history[j] = np.max(np.abs(coeffs[:, j]))
            if j == 0:
                delta0 = max(history[0], np.finfo(float).tiny)
            if j >= 2 and history[j] <= dd_tol * delta0:
                d = j
                reached = False
                break
        return RationalInterpolant(
            op, seq, d, coeffs=coeffs[:, : d + 1], norm_history=history[: d + 1],
            reached_max_degree=reached,
        )
    # callback path: explicit divided-difference matrices
    D0 = (beta0 * op.assemble(seq.nodes[0])).tocsr()
    mats = [D0]
    history_l = [inf_norm(D0)]
    nrm0 = max(history_l[0], np.finfo(float).tiny)
    d = d_max
    reached = True
    for j in range(1, d_max + 1):
        sj = seq.nodes[j]
        b = seq.b_values(sj, j)
        if b[j] == 0:
            raise NepError("interpolation nodes are not pairwise distinct")
        R = b[0] * mats[0]
        for bk, Dk in zip(b[1:j], mats[1:]):
            R = R + bk * Dk
        Dj = ((op.assemble(sj) - R) / b[j]).tocsr()
        mats.append(Dj)
        history_l.append(inf_norm(Dj))
        if j >= 2 and history_l[j] <= dd_tol * nrm0:
            d = j
            reached = False
            break
    return RationalInterpolant(
        op, seq, d, dd_matrices=mats, norm_history=np.asarray(history_l),
        reached_max_degree=reached,
    )


# -- shift-and-invert recurrences ------------------------------------------------


class ShiftInvertContext:
    """Implicit application of S = (A - sigma B)^{-1} B and its adjoint.

    Only R_d(sigma) is factorized; everything else is block recurrences over
    the d parts of the vectors.  The same factorization serves the adjoint.
    """

    def __init__(self, ri: RationalInterpolant, sigma: complex, lin_cfg: Optional[LinearSolverConfig] = None):
        if ri.d < 2:
            raise NepError("shift-invert recurrences require degree >= 2")
        self.ri = ri
        self.d = ri.d
        self.sigma = complex(sigma)
        seq = ri.seq
        d = ri.d
        self.b_sigma = seq.b_values(self.sigma, d)
        self.denoms = np.array(
            [seq.nodes[j - 1] - self.sigma for j in range(1, d)], dtype=complex
        )  # denoms[j-1] = sigma_{j-1} - sigma, j = 1..d-1
        if np.any(self.denoms == 0):
            raise NepError("the shift coincides with an interpolation node; move the target")
        self.inv_xi = np.array([ri.seq.inv_pole(j) for j in range(d + 1)], dtype=complex)
        self.pole_factors = 1.0 - self.sigma * self.inv_xi  # index j for (1 - sigma/xi_j)
        self.beta = seq.betas
        Rsig = ri.assemble(self.sigma, weights=ri.b_values_linearized(self.sigma))
        self.solver = make_linear_solver(Rsig, lin_cfg)
        self.n = ri.op.n
        self._adjoint_terms = None

    @property
    def solve_count(self) -> int:
        return self.solver.solve_count

    # forward recurrences ------------------------------------------------

    def _y_rhs(self, y_blocks, xlast: np.ndarray) -> np.ndarray:
        """-(D_0 y^1 + ... + D_{d-2} y^{d-1} + D_d x^{d-1}/beta_d)."""
        ri, d = self.ri, self.d
        if ri.split:
            ell = ri.coeffs.shape[0]
            n = self.n
            rhs = np.zeros(n, dtype=complex)
            for i, (A, _) in enumerate(ri.op.terms):
                t = np.zeros(n, dtype=complex)
                for j in range(1, d):
                    c = ri.coeffs[i, j - 1]
                    if c != 0:
                        t += c * y_blocks[j]
                cd = ri.coeffs[i, d] / self.beta[d]
                if cd != 0:
                    t += cd * xlast
                rhs -= A @ t
            return rhs
        rhs = np.zeros(self.n, dtype=complex)
        for j in range(1, d):
            rhs -= ri.dd_matrices[j - 1] @ y_blocks[j]
        rhs -= (ri.dd_matrices[d] @ xlast) / self.beta[d]
        return rhs

    def _coeff_recurrence(self, g):
        """The scalar block recurrence shared by vectors and TOAR coefficients."""
        d = self.d
        out = [None] * d
        out[d - 1] = (
            g[d - 2] + (self.beta[d - 1] * self.inv_xi[d - 1]) * g[d - 1]
        ) / self.denoms[d - 2]
        for j in range(d - 2, 0, -1):
            out[j] = (
                g[j - 1]
                + (self.beta[j] * self.inv_xi[j]) * g[j]
                - self.beta[j] * self.pole_factors[j] * out[j + 1]
            ) / self.denoms[j - 1]
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """w = S x for x given as d stacked blocks of length n."""
        d, n = self.d, self.n
        x = np.asarray(x, dtype=complex).reshape(d, n)
        y = self._coeff_recurrence([x[j] for j in range(d)])
        y0 = self.solver.solve(self._y_rhs(y, x[d - 1]))
        w = np.empty((d, n), dtype=complex)
        for j in range(d - 1):
            w[j] = y[j + 1] + self.b_sigma[j] * y0
        w[d - 1] = self.b_sigma[d - 1] * y0
        return w.reshape(d * n)

    # adjoint recurrences -------------------------------------------------

    def _dd_adjoint_combos(self, z0: np.ndarray) -> List[np.ndarray]:
        """[D_0^* z0, ..., D_d^* z0] with one adjoint matvec per term."""
        ri, d = self.ri, self.d
        if ri.split:
            if self._adjoint_terms is None:
                self._adjoint_terms = [A.conj().T.tocsr() for A, _ in ri.op.terms]
            us = [AH @ z0 for AH in self._adjoint_terms]
            out = []
            for j in range(d + 1):
                acc = np.zeros(self.n, dtype=complex)
                for i, u in enumerate(us):
                    c = np.conj(ri.coeffs[i, j])
                    if c != 0:
                        acc += c * u
                out.append(acc)
            return out
        return [(D.conj().T) @ z0 for D in ri.dd_matrices]

    def adjoint_stage_z(self, x: np.ndarray) -> np.ndarray:
        """z = (A - sigma B)^{-*} x, the left-eigenvector stage of S* x."""
        d, n = self.d, self.n
        x = np.asarray(x, dtype=complex).reshape(d, n)
        y0 = np.conj(self.b_sigma[d - 1]) * x[d - 1]
        for i in range(d - 1):
            y0 = y0 + np.conj(self.b_sigma[i]) * x[i]
        z = np.empty((d, n), dtype=complex)
        z[0] = self.solver.solve(y0, adjoint=True)
        dh = self._dd_adjoint_combos(z[0])
        # y^i = x^{i-1} for i >= 1
        z[1] = (x[0] - dh[0]) / np.conj(self.denoms[0])
        for i in range(2, d):
            z[i] = (
                x[i - 1]
                - dh[i - 1]
                - self.beta[i - 1] * np.conj(self.pole_factors[i - 1]) * z[i - 1]
            ) / np.conj(self.denoms[i - 1])
        return z

    def apply_adjoint(self, x: np.ndarray) -> np.ndarray:
        """w = S^* x via the transposed block triangular factors."""
        d, n = self.d, self.n
        z = self.adjoint_stage_z(x)
        dh_last = self._dd_adjoint_combos(z[0])[d]
        w = np.empty((d, n), dtype=complex)
        w[0] = z[1]
        for i in range(1, d - 1):
            w[i] = self.beta[i] * np.conj(self.inv_xi[i]) * z[i] + z[i + 1]
        w[d - 1] = -dh_last / self.beta[d] + self.beta[d - 1] * np.conj(self.inv_xi[d - 1]) * z[d - 1]
        return w.reshape(d * n)

    # compact expansion -----------------------------------------------------

    def toar_expand(self, U: np.ndarray, g: np.ndarray):
        """One compact expansion step.

        ``g`` holds the d coefficient blocks of the last basis vector with
        respect to U.  Returns ``(U_new, g_new, grew)`` where ``g_new`` are
        the coefficients of S applied to that vector and ``grew`` says
        whether U gained a column (it does not when the new first block is
        linearly dependent on U).
        """
        d = self.d
        mu = U.shape[1]
        gt = self._coeff_recurrence([g[j] for j in range(d)])
        y_blocks = [None] * d
        for j in range(1, d):
            y_blocks[j] = U @ gt[j]
        vlast = U @ g[d - 1]
        y0 = self.solver.solve(self._y_rhs(y_blocks, vlast))
        h_u, beta_u, w_orth, dep = orthogonalize(U, y0)
        if dep:
            U_new = U
            g0 = h_u
            mu_new = mu
            grew = False
        else:
            U_new = np.hstack([U, (w_orth / beta_u)[:, None]])
            g0 = np.concatenate([h_u, [beta_u]])
            mu_new = mu + 1
            grew = True
        g_new = np.zeros((d, mu_new), dtype=complex)
        for j in range(d - 1):
            g_new[j, :mu] = gt[j + 1]
            g_new[j] += self.b_sigma[j] * g0
        g_new[d - 1] = self.b_sigma[d - 1] * g0
        return U_new, g_new, grew


def shift_invert_apply(ri: RationalInterpolant, sigma: complex, x, lin_cfg=None, ctx=None):
    """One-shot S x; prefer reusing a ShiftInvertContext."""
    ctx = ctx or ShiftInvertContext(ri, sigma, lin_cfg)
    return ctx.apply(np.asarray(x, dtype=complex).reshape(-1))


def shift_invert_apply_adjoint(ri: RationalInterpolant, sigma: complex, x, lin_cfg=None, ctx=None):
    ctx = ctx or ShiftInvertContext(ri, sigma, lin_cfg)
    return ctx.apply_adjoint(np.asarray(x, dtype=complex).reshape(-1))


def toar_expand(ctx: ShiftInvertContext, U: np.ndarray, g_last: np.ndarray):
    return ctx.toar_expand(U, g_last)


# -- Krylov basis engines ------------------------------------------------------


class ToarBasisEngine:
    """Compact representation V_k = (I_d (x) U) G_k of the Krylov basis."""

    def __init__(self, ctx: ShiftInvertContext, w_blocks: np.ndarray, ncv: int):
        self.ctx = ctx
        d, n = w_blocks.shape
        self.d, self.n = d, n
        W = np.asarray(w_blocks, dtype=complex).T  # n x d
        Q, R = np.linalg.qr(W)
        nrm = np.linalg.norm(R)
        if nrm == 0:
            raise ValueError("zero starting vector")
        self.U = Q
        G0 = (R / nrm).T  # block i of the coefficients is R[:, i]/nrm
        self.G = G0[:, :, None].copy()  # (d, mU, ncols)

    @property
    def mu(self) -> int:
        return self.U.shape[1]

    def _stacked(self, cols: int) -> np.ndarray:
        d, mu = self.d, self.mu
        return self.G[:, :, :cols].reshape(d * mu, cols)

    def expand(self, j: int):
        g = self.G[:, :, j]
        U_new, g_new, grew = self.ctx.toar_expand(self.U, g)
        if grew:
            self.U = U_new
            self.G = np.pad(self.G, ((0, 0), (0, 1), (0, 0)))
        h, beta, g_orth, dep = orthogonalize(self._stacked(j + 1), g_new.reshape(-1))
        if not dep:
            col = (g_orth / beta).reshape(self.d, self.mu, 1)
            self.G = np.concatenate([self.G, col], axis=2)
        return h, beta, dep

    def append_random(self, j: int, rng) -> bool:
        d, mu = self.d, self.mu
        for _ in range(3):
            cand = rng.standard_normal(d * mu) + 1j * rng.standard_normal(d * mu)
            h, beta, g_orth, dep = orthogonalize(self._stacked(j + 1), cand)
            if not dep:
                col = (g_orth / beta).reshape(d, mu, 1)
                self.G = np.concatenate([self.G, col], axis=2)
                return True
        return False

    def transform(self, Qp: np.ndarray, m: int) -> None:
        p = Qp.shape[1]
        kept = np.einsum("imk,kp->imp", self.G[:, :, :m], Qp)
        resid = self.G[:, :, m][:, :, None]
        M_cat = np.concatenate([kept, resid], axis=2)  # (d, mU, p+1)
        # compress U to the subspace actually used by the kept coefficients
        flat = M_cat.transpose(1, 0, 2).reshape(self.mu, self.d * (p + 1))
        W, s, _ = np.linalg.svd(flat, full_matrices=False)
        if s.size and s[0] > 0:
            r = max(1, int(np.sum(s > COMPRESS_RTOL * s[0])))
        else:
            r = 1
        W = W[:, :r]
        self.U = self.U @ W
        self.G = np.einsum("rm,imk->irk", W.conj().T, M_cat)

    def ritz_first_block(self, y: np.ndarray, m: int) -> np.ndarray:
        return self.U @ (self.G[0, :, :m] @ y)

    def ritz_full(self, y: np.ndarray, m: int) -> np.ndarray:
        blocks = [self.U @ (self.G[i, :, :m] @ y) for i in range(self.d)]
        return np.concatenate(blocks)

    def reconstruct_basis(self, cols: int) -> np.ndarray:
        """Dense V with cols columns (small instances / verification only)."""
        d, n = self.d, self.n
        V = np.empty((d * n, cols), dtype=complex)
        for i in range(d):
            V[i * n : (i + 1) * n, :] = self.U @ self.G[i, :, :cols]
        return V


def toar_arnoldi(ctx: ShiftInvertContext, w_blocks: np.ndarray, steps: int):
    """Plain compact Arnoldi for a fixed number of steps (no restart).

    Returns (U, G, H) with H of size (m+1) x m where m <= steps is the number
    of completed expansions.
    """
    engine = ToarBasisEngine(ctx, np.asarray(w_blocks, dtype=complex), ncv=steps)
    H = np.zeros((steps + 1, steps), dtype=complex)
    m = 0
    for j in range(steps):
        h, beta, dep = engine.expand(j)
        H[: j + 1, j] = h
        H[j + 1, j] = 0.0 if dep else beta
        m = j + 1
        if dep:
            break
    return engine.U, engine.G, H[: m + 1, :m]


# -- Krylov-Schur driver ----------------------------------------------------------


# -- top-level solver ----------------------------------------------------------------


def _resolve_singularities(op: NepOperator, singularities, settings: Settings):
    if isinstance(singularities, str):
        if singularities == "none":
            return np.zeros(0, dtype=complex), None
        if singularities == "auto":
            try:
                return auto_singularities(op), None
            except UnsupportedPoleDetection as exc:
                if settings.problem_type == "rational":
                    raise
                return np.zeros(0, dtype=complex), f"pole detection skipped: {exc}"
        raise ValueError(f"unknown singularity source {singularities!r}")
    return np.asarray(list(singularities), dtype=complex), None


def nleigs_solve(
    op: NepOperator,
    settings: Settings,
    *,
    dd_tol: float = DD_TOL_DEFAULT,
    dd_maxdeg: int = DD_MAXDEG_DEFAULT,
    singularities="auto",
    rk_shifts=None,
    full_basis: bool = False,
    boundary_npts: int = BOUNDARY_POINTS_DEFAULT,
    lin_cfg: Optional[LinearSolverConfig] = None,
) -> EigenSolution:
    """Rational-interpolation solve over a region of the complex plane.

    The target is used as the single shift of the Krylov iteration (a user
    shift list is accepted for interface compatibility but only its first
    entry is honored).  Accepted pairs lie inside the region and meet the
    backward-error tolerance; the two-sided variant additionally attaches
    left eigenvectors.
    """
    if settings.region is None:
        raise NepError("nleigs requires a region")
    two_sided = settings.two_sided
    if two_sided:
        full_basis = True
    notes = []
    sigma = complex(settings.target)
    if rk_shifts:
        shifts = list(rk_shifts)
        sigma = complex(shifts[0])
        if len(shifts) > 1:
            notes.append("multi-shift rational Krylov is not supported; using the first shift only")

    boundary = settings.region.boundary_points(boundary_npts)
    sing, note = _resolve_singularities(op, singularities, settings)
    if note:
        notes.append(note)
    seq = leja_bagby(boundary, sing, dd_maxdeg, start_hint=sigma)
    ri = divided_differences(op, seq, dd_tol=dd_tol, d_max=dd_maxdeg)
    if ri.reached_max_degree:
        notes.append(
            f"divided differences did not reach tol {dd_tol:g} at degree {ri.d}; proceeding"
        )
    ctx = ShiftInvertContext(ri, sigma, lin_cfg)
    d, n = ri.d, op.n

    w0 = np.ones((d, n), dtype=complex)
    ncv = min(settings.ncv_effective, d * n - 1)
    ncv = max(ncv, min(settings.nev + 2, d * n - 1))
    rng = np.random.default_rng(settings.seed)
    if full_basis:
        engine = FullBasisEngine(ctx.apply, w0, ncv)
    else:
        engine = ToarBasisEngine(ctx, w0, ncv)

    target = complex(settings.target)
    region = settings.region

    def in_region(lam: complex) -> bool:
        return region.contains(lam, pad=0.0, imag_tol=1e-8 * max(1.0, abs(lam)))

    def sort_key(thetas):
        with np.errstate(divide="ignore", invalid="ignore"):
            lams = sigma + 1.0 / np.asarray(thetas, dtype=complex)
        if settings.which == "largest-magnitude":
            key = -np.abs(lams)
        elif settings.which == "largest-real":
            key = -lams.real
        else:
            key = np.abs(lams - target)
        key = np.where(np.isfinite(key), key, np.inf)
        # out-of-region Ritz values (e.g. the spurious linearization spectrum
        # at the poles) rank last so they never crowd out wanted directions
        # at a restart
        finite = np.isfinite(key)
        if np.any(finite):
            shift = 1e6 * (1.0 + np.max(np.abs(key[finite])))
            inside = np.array([in_region(l) if np.isfinite(l) else False for l in lams])
            key = np.where(inside | ~finite, key, key + shift)
        return key

    def wanted_filter(thetas):
        out = np.zeros(len(thetas), dtype=bool)
        for i, th in enumerate(thetas):
            if th == 0 or not np.isfinite(th):
                continue
            out[i] = in_region(sigma + 1.0 / th)
        return out

    inner_tol = max(1e-14, 0.01 * settings.tol)
    driver = KrylovSchurDriver(engine, ncv, inner_tol, sort_key, wanted_filter, rng)
    max_restarts = settings.max_it_effective

    def pair_test(theta, y, m):
        if theta == 0 or not np.isfinite(theta):
            return False
        lam = sigma + 1.0 / theta
        x = engine.ritz_first_block(y, m)
        nx = np.linalg.norm(x)
        if nx == 0 or not np.isfinite(nx):
            return False
        return backward_error(op, lam, x / nx) <= settings.tol

    driver.pair_test = pair_test

    def harvest():
        pairs = []
        for theta, y, _res, ok in driver.extract():
            if not ok or theta == 0 or not np.isfinite(theta):
                continue
            lam = sigma + 1.0 / theta
            if not in_region(lam):
                continue
            x = engine.ritz_first_block(y, driver.m)
            nx = np.linalg.norm(x)
            if nx == 0:
                continue
            x = x / nx
            eta = backward_error(op, lam, x)
            if eta > settings.tol:
                continue
            if any(abs(lam - q.lam) <= 1e-8 * max(1.0, abs(q.lam)) for q in pairs):
                continue
            pairs.append(EigenPair(lam, x, eta, y=None))
        return pairs

    want = settings.nev
    pairs = []
    while True:
        count = driver.run(want, max_restarts)
        pairs = harvest()
        if len(pairs) >= settings.nev:
            break
        if driver.restarts >= max_restarts or driver.exhausted or count < want:
            break
        want += settings.nev - len(pairs)

    stats = {
        "degree": ri.d,
        "outer_iterations": driver.restarts,
        "linear_solves": ctx.solve_count,
        "ritz_history": [(t.copy(), r.copy()) for t, r in driver.ritz_history],
        "basis": "full" if full_basis else "toar",
    }
    if notes:
        stats["notes"] = notes

    if two_sided:
        left_engine = FullBasisEngine(ctx.apply_adjoint, w0, ncv)

        def left_key(omegas):
            return sort_key(np.conj(np.asarray(omegas, dtype=complex)))

        def left_filter(omegas):
            return wanted_filter(np.conj(np.asarray(omegas, dtype=complex)))

        left_driver = KrylovSchurDriver(left_engine, ncv, inner_tol, left_key, left_filter, rng)
        left_driver.run(len(pairs), max_restarts)
        lefts = []
        for omega, y, _res, ok in left_driver.extract():
            if not ok or omega == 0 or not np.isfinite(omega):
                continue
            lam_left = sigma + 1.0 / np.conj(omega)
            v = left_engine.ritz_full(y, left_driver.m)
            z = ctx.adjoint_stage_z(v)
            yvec = z[0]
            ny = np.linalg.norm(yvec)
            if ny == 0:
                continue
            lefts.append((lam_left, yvec / ny))
        for p in pairs:
            if not lefts:
                break
            dists = [abs(p.lam - ll) for ll, _ in lefts]
            i = int(np.argmin(dists))
            lam_left, yvec = lefts[i]
            if abs(p.lam - lam_left) <= 1e-6 * max(1.0, abs(p.lam)):
                p.y = yvec
                ry = op.apply_adjoint(p.lam, yvec)
                p.eta_left = float(np.linalg.norm(ry) / (op.norm_scale(p.lam) * np.linalg.norm(yvec)))
        stats["left_ritz_history"] = [(t.copy(), r.copy()) for t, r in left_driver.ritz_history]
        stats["linear_solves"] = ctx.solve_count
        missing = [p for p in pairs if p.y is None]
        if missing:
            notes.append(f"{len(missing)} pairs lack a matched left eigenvector")
            stats["notes"] = notes

    key = settings.sort_key()
    if pairs:
        order = np.argsort(key(np.array([p.lam for p in pairs])), kind="stable")
        pairs = [pairs[i] for i in order]
    converged = len(pairs) >= settings.nev
    return EigenSolution(pairs=pairs, stats=stats, converged=converged)
