"""Dense and sparse linear-algebra kernels shared by the eigensolvers.

Dense matrices are plain complex ndarrays and sparse matrices are scipy CSR;
the routines here wrap LAPACK/SuperLU factorizations, provide reorthogonalized
Gram-Schmidt, a generic Krylov-Schur iteration with restart and locking, and
small wrappers around the iterative linear solvers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SingularMatrixError",
    "DenseLU",
    "lu_factor",
    "lu_solve",
    "dense_eig",
    "orthogonalize",
    "LinearSolverConfig",
    "make_linear_solver",
    "iterative_solve",
    "IterativeResult",
    "sparse_apply",
    "sparse_axpy",
    "inf_norm",
    "KrylovResult",
    "krylov_schur",
    "gen_eig_smallest",
]

BREAKDOWN_RTOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    pass


# -- dense factorizations ------------------------------------------------------


@dataclass
class DenseLU:
    lu: np.ndarray
    piv: np.ndarray

    def solve(self, b, adjoint: bool = False):
        trans = 2 if adjoint else 0
        return scipy.linalg.lu_solve((self.lu, self.piv), b, trans=trans, check_finite=False)


def lu_factor(A: np.ndarray) -> DenseLU:
    """LU with partial pivoting; raises on an exactly singular pivot."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("lu_factor requires a square matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    zeros = np.flatnonzero(diag == 0.0)
    if zeros.size:
        raise SingularMatrixError(f"exactly singular pivot at index {int(zeros[0])}")
    return DenseLU(lu, piv)


def lu_solve(factors: DenseLU, b):
    return factors.solve(b)


def dense_eig(A: np.ndarray):
    """Eigenvalues and unit-norm eigenvectors of a dense complex matrix."""
    A = np.asarray(A, dtype=complex)
    w, V = scipy.linalg.eig(A)
    norms = np.linalg.norm(V, axis=0)
    norms[norms == 0] = 1.0
    return w, V / norms


# -- orthogonalization ---------------------------------------------------------


def orthogonalize(V: np.ndarray, w: np.ndarray):
    """Classical Gram-Schmidt with one unconditional reorthogonalization.

    Returns ``(h, beta, w_orth, dependent)`` where ``h = V^* w`` accumulated
    over both sweeps, ``beta = ||w_orth||`` and ``dependent`` flags a vector
    that lies in span(V) up to the breakdown threshold.
    """
    w = np.asarray(w, dtype=complex)
    nrm_w = np.linalg.norm(w)
    if V is None or V.shape[1] == 0:
        beta = nrm_w
        return np.zeros(0, dtype=complex), beta, w.copy(), beta <= BREAKDOWN_RTOL * max(nrm_w, 1.0)
    h = np.zeros(V.shape[1], dtype=complex)
    w_orth = w.copy()
    for _ in range(2):
        # V^H w without materializing conj(V)
        c = np.conj(np.conj(w_orth) @ V)
        w_orth = w_orth - V @ c
        h += c
    beta = np.linalg.norm(w_orth)
    dependent = beta <= BREAKDOWN_RTOL * nrm_w
    return h, beta, w_orth, dependent


# -- linear solvers ------------------------------------------------------------


@dataclass
class LinearSolverConfig:
    """Configuration for linear solves with a (sparse) system matrix."""

    mode: str = "direct"  # direct | gmres | bicgstab
    tol: float = 1e-10
    maxit: int = 2000
    restart: int = 50
    preconditioner: str = "jacobi"  # jacobi | none

    def __post_init__(self):
        if self.mode not in ("direct", "gmres", "bicgstab"):
            raise ValueError(f"unknown linear solver mode {self.mode!r}")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class IterativeResult:
    x: np.ndarray
    converged: bool
    residual_norm: float
    iterations: int
    breakdown: bool = False


class _DirectSolver:
    """Sparse (SuperLU) or dense LU factorization with adjoint solves."""

    def __init__(self, A):
        self.solve_count = 0
        if sp.issparse(A):
            self.n = A.shape[0]
            try:
                self._lu = spla.splu(sp.csc_matrix(A.astype(complex)))
            except RuntimeError as exc:
                raise SingularMatrixError(str(exc)) from exc
            self._dense = None
        else:
            A = np.asarray(A, dtype=complex)
            self.n = A.shape[0]
            self._lu = None
            self._dense = lu_factor(A)

    def solve(self, b, adjoint: bool = False):
        self.solve_count += 1
        b = np.asarray(b, dtype=complex)
        if self._dense is not None:
            return self._dense.solve(b, adjoint=adjoint)
        x = self._lu.solve(b, trans="H" if adjoint else "N")
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("direct solve produced non-finite entries")
        return x


class _IterativeSolver:
    def __init__(self, A, cfg: LinearSolverConfig):
        self.cfg = cfg
        self.A = sp.csr_matrix(A.astype(complex)) if sp.issparse(A) else np.asarray(A, complex)
        self.n = A.shape[0]
        self.solve_count = 0
        self._AH = None

    def _precond(self, A):
        if self.cfg.preconditioner == "none":
            return None
        d = A.diagonal().astype(complex)
        d[d == 0] = 1.0
        inv = 1.0 / d
        return spla.LinearOperator(A.shape, matvec=lambda v: inv * v, dtype=complex)

    def _run(self, A, b):
        self.solve_count += 1
        res = iterative_solve(self.cfg, A, b)
        # an inexact solve degrades the outer iteration's progress, which the
        # eigensolvers detect themselves (residual rechecks, stall locks,
        # restarts); only a non-finite result is a hard failure
        if not np.all(np.isfinite(res.x)):
            raise SingularMatrixError(
                f"iterative linear solve produced non-finite entries "
                f"(residual {res.residual_norm:.3e})"
            )
        return res.x

    def solve(self, b, adjoint: bool = False):
        if not adjoint:
            return self._run(self.A, b)
        if self._AH is None:
            self._AH = self.A.conj().T.tocsr() if sp.issparse(self.A) else self.A.conj().T
        return self._run(self._AH, b)


def make_linear_solver(A, cfg: Optional[LinearSolverConfig] = None):
    cfg = cfg or LinearSolverConfig()
    if cfg.mode == "direct":
        return _DirectSolver(A)
    return _IterativeSolver(A, cfg)


def iterative_solve(cfg: LinearSolverConfig, A, b) -> IterativeResult:
    """GMRES or BiCGStab with optional point-Jacobi preconditioning.

    Non-convergence is reported in the result, not raised; breakdown is
    distinguished from plain iteration-count exhaustion.
    """
    b = np.asarray(b, dtype=complex)
    nrm_b = np.linalg.norm(b)
    if nrm_b == 0:
        return IterativeResult(np.zeros_like(b), True, 0.0, 0)
    count = {"it": 0}

    def cb(_):
        count["it"] += 1

    M = None
    if cfg.preconditioner == "jacobi":
        d = (A.diagonal() if sp.issparse(A) else np.diag(A)).astype(complex)
        d = np.where(d == 0, 1.0, d)
        M = spla.LinearOperator(A.shape, matvec=lambda v: v / d, dtype=complex)
    try:
        if cfg.mode == "bicgstab":
            x, info = spla.bicgstab(A, b, rtol=cfg.tol, atol=0.0, maxiter=cfg.maxit, M=M, callback=cb)
        else:
            x, info = spla.gmres(
                A,
                b,
                rtol=cfg.tol,
                atol=0.0,
                restart=cfg.restart,
                maxiter=cfg.maxit,
                M=M,
                callback=cb,
                callback_type="pr_norm",
            )
    except Exception:
        return IterativeResult(np.zeros_like(b), False, np.inf, count["it"], breakdown=True)
    resid = float(np.linalg.norm(A @ x - b))
    # judge convergence by the recomputed true residual: the backend's own
    # criterion runs in the preconditioned norm and can disagree either way
    converged = info >= 0 and resid <= cfg.tol * nrm_b * (1 + 1e-8)
    return IterativeResult(x, converged, resid, count["it"], breakdown=info < 0)


# -- sparse helpers --------------------------------------------------------------


def sparse_apply(A, x):
    return A @ x


def sparse_axpy(Y, alpha: complex, X, pattern_hint: str = "different"):
    """Y + alpha*X for sparse matrices; the hint mirrors the split-operator API."""
    if Y.shape != X.shape:
        raise ValueError(f"dimension mismatch {Y.shape} vs {X.shape}")
    if alpha == 0:
        return Y.copy()
    return (Y + alpha * X).tocsr()


def inf_norm(A) -> float:
    if sp.issparse(A):
        if A.shape[0] == 0:
            return 0.0
        return float(abs(A).sum(axis=1).max())
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(np.abs(A).sum(axis=1).max())


# -- Krylov-Schur ----------------------------------------------------------------


@dataclass
class KrylovResult:
    values: np.ndarray        # Ritz values, wanted-first order
    vectors: np.ndarray       # corresponding Ritz vectors (columns)
    residuals: np.ndarray     # Ritz residual estimates, same order
    n_converged: int
    restarts: int
    breakdown: bool = False


def _ordered_schur(M: np.ndarray, wanted: np.ndarray):
    """Complex Schur form with the eigenvalues in `wanted` moved to the front."""
    m = M.shape[0]
    if len(wanted) == 0 or len(wanted) == m:
        T, Q = scipy.linalg.schur(M, output="complex")
        return T, Q, len(wanted)
    wanted = np.asarray(wanted)
    all_eigs = np.linalg.eigvals(M)
    unwanted = []
    used = np.zeros(len(all_eigs), dtype=bool)
    for w in wanted:
        idx = int(np.argmin(np.where(used, np.inf, np.abs(all_eigs - w))))
        used[idx] = True
    unwanted = all_eigs[~used]

    def select(z):
        dw = np.min(np.abs(wanted - z))
        du = np.min(np.abs(unwanted - z)) if len(unwanted) else np.inf
        return dw <= du

    T, Q, sdim = scipy.linalg.schur(M, output="complex", sort=select)
    return T, Q, int(sdim)


def krylov_schur(
    apply_op: Callable[[np.ndarray], np.ndarray],
    n: int,
    nev: int,
    ncv: int,
    v0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_restarts: int = 60,
    sort_key: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> KrylovResult:
    """Krylov-Schur iteration for a few eigenpairs of a linear operator.

    ``sort_key`` maps an array of Ritz values to sort keys; smaller keys are
    kept at restart and reported first (default: largest magnitude first).
    Convergence is declared when the Ritz residual estimate drops below
    ``tol * max(|theta|, eps)``.
    """
    if sort_key is None:
        sort_key = lambda t: -np.abs(t)
    if rng is None:
        rng = np.random.default_rng(0)
    ncv = min(max(ncv, nev + 2), n)
    V = np.zeros((n, ncv + 1), dtype=complex)
    H = np.zeros((ncv + 1, ncv), dtype=complex)
    if v0 is None:
        v0 = np.ones(n, dtype=complex)
    nv = np.linalg.norm(v0)
    if nv == 0:
        v0 = np.ones(n, dtype=complex)
        nv = np.linalg.norm(v0)
    V[:, 0] = np.asarray(v0, dtype=complex) / nv
    m = 0
    breakdown_hit = False

    def ritz(msz):
        Hm = H[:msz, :msz]
        brow = H[msz, :msz]
        theta, Y = np.linalg.eig(Hm)
        res = np.abs(brow @ Y) / np.maximum(np.linalg.norm(Y, axis=0), 1e-300)
        return theta, Y, res

    restarts = 0
    while True:
        while m < ncv:
            w = apply_op(V[:, m])
            h, beta, w_orth, dep = orthogonalize(V[:, : m + 1], w)
            H[: m + 1, m] = h
            if dep:
                breakdown_hit = True
                H[m + 1, m] = 0.0
                # invariant subspace: continue with a random orthogonal direction
                for _ in range(3):
                    cand = rng.standard_normal(n) + 1j * rng.standard_normal(n)
                    h2, b2, w2, dep2 = orthogonalize(V[:, : m + 1], cand)
                    if not dep2:
                        V[:, m + 1] = w2 / b2
                        break
                else:
                    m += 1
                    break
            else:
                H[m + 1, m] = beta
                V[:, m + 1] = w_orth / beta
            m += 1

        theta, Y, res = ritz(m)
        order = np.argsort(sort_key(theta), kind="stable")
        conv = res <= tol * np.maximum(np.abs(theta), np.finfo(float).eps)
        n_conv = 0
        for idx in order:
            if conv[idx]:
                n_conv += 1
            else:
                break
        if n_conv >= nev or restarts >= max_restarts or m >= n:
            keep = order[: max(nev, n_conv)]
            vals = theta[keep]
            vecs = V[:, :m] @ Y[:, keep]
            nrm = np.linalg.norm(vecs, axis=0)
            nrm[nrm == 0] = 1.0
            vecs /= nrm
            return KrylovResult(vals, vecs, res[keep], n_conv, restarts, breakdown_hit)

        # restart: keep the wanted half, converged pairs first
        p = max(nev + 1, m // 2)
        p = min(p, m - 1)
        wanted_vals = theta[order[:p]]
        T, Q, sdim = _ordered_schur(H[:m, :m], wanted_vals)
        sdim = max(1, min(sdim, m - 1))
        brow = H[m, :m] @ Q[:, :sdim]
        Vnew = V[:, :m] @ Q[:, :sdim]
        V[:, :sdim] = Vnew
        V[:, sdim] = V[:, m]
        H[:, :] = 0.0
        H[:sdim, :sdim] = T[:sdim, :sdim]
        H[sdim, :sdim] = brow
        m = sdim
        restarts += 1


def gen_eig_smallest(
    A,
    B,
    how_many: int = 1,
    v0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    ncv: Optional[int] = None,
    max_restarts: int = 60,
    solver_cfg: Optional[LinearSolverConfig] = None,
):
    """Smallest-magnitude eigenpairs of the pencil A x = mu B x.

    A is factorized once and an Arnoldi iteration is run on A^{-1}B, so the
    smallest |mu| of the pencil become the dominant eigenvalues 1/mu of the
    iteration operator.  Accepts matrices or callables (solve_A, apply_B).
    """
    if callable(A):
        solve_A, apply_B, n = A, B, v0.shape[0] if v0 is not None else None
        if n is None:
            raise ValueError("operator form requires an initial vector")
    else:
        n = A.shape[0]
        solver = make_linear_solver(A, solver_cfg)
        solve_A = solver.solve
        apply_B = (lambda v: B @ v) if not callable(B) else B
    if ncv is None:
        ncv = min(n, max(12, 2 * how_many + 8))
    res = krylov_schur(
        lambda v: solve_A(apply_B(v)),
        n,
        nev=how_many,
        ncv=ncv,
        v0=v0,
        tol=tol,
        max_restarts=max_restarts,
    )
    out = []
    for theta, i in zip(res.values, range(min(how_many, len(res.values)))):
        if theta == 0:
            raise SingularMatrixError("Arnoldi produced a zero Ritz value")
        out.append((1.0 / theta, res.vectors[:, i]))
    out.sort(key=lambda p: abs(p[0]))
    return out


# -- engine-based Krylov-Schur (shared by the interpolation solvers) --------


class FullBasisEngine:
    """Explicitly stored Krylov vectors of length d*n."""

    def __init__(self, apply_fn, w_blocks: np.ndarray, ncv: int):
        self.apply_fn = apply_fn
        d, n = w_blocks.shape
        self.d, self.n = d, n
        self.V = np.zeros((d * n, ncv + 2), dtype=complex)
        v0 = w_blocks.reshape(-1).astype(complex)
        nrm = np.linalg.norm(v0)
        if nrm == 0:
            raise ValueError("zero starting vector")
        self.V[:, 0] = v0 / nrm

    def expand(self, j: int):
        w = self.apply_fn(self.V[:, j])
        h, beta, w_orth, dep = orthogonalize(self.V[:, : j + 1], w)
        if not dep:
            self.V[:, j + 1] = w_orth / beta
        return h, beta, dep

    def append_random(self, j: int, rng) -> bool:
        for _ in range(3):
            cand = rng.standard_normal(self.V.shape[0]) + 1j * rng.standard_normal(self.V.shape[0])
            h, beta, w_orth, dep = orthogonalize(self.V[:, : j + 1], cand)
            if not dep:
                self.V[:, j + 1] = w_orth / beta
                return True
        return False

    def transform(self, Qp: np.ndarray, m: int) -> None:
        p = Qp.shape[1]
        self.V[:, :p] = self.V[:, :m] @ Qp
        self.V[:, p] = self.V[:, m]

    def ritz_first_block(self, y: np.ndarray, m: int) -> np.ndarray:
        return (self.V[:, :m] @ y)[: self.n]

    def ritz_full(self, y: np.ndarray, m: int) -> np.ndarray:
        return self.V[:, :m] @ y


class KrylovSchurDriver:
    """Krylov-Schur restart/locking logic shared by both basis engines.

    Convergence of a Ritz pair is judged either by the relative residual of
    the linear operator or, when ``pair_test`` is set, by a caller-supplied
    test on the extracted pair (the backward error of the original problem).
    """

    def __init__(self, engine, ncv: int, tol: float, sort_key, wanted_filter=None, rng=None):
        self.engine = engine
        self.ncv = ncv
        self.tol = tol
        self.sort_key = sort_key
        self.wanted_filter = wanted_filter
        self.pair_test = None
        self.rng = rng or np.random.default_rng(0)
        self.H = np.zeros((ncv + 1, ncv), dtype=complex)
        self.m = 0
        self.restarts = 0
        self.exhausted = False
        self.ritz_history: List[np.ndarray] = []

    def _ritz(self):
        m = self.m
        theta, Y = np.linalg.eig(self.H[:m, :m])
        nrm = np.maximum(np.linalg.norm(Y, axis=0), 1e-300)
        res = np.abs(self.H[m, :m] @ Y) / nrm
        return theta, Y, res

    def _count_converged(self, theta, res, Y=None):
        conv = res <= self.tol * np.maximum(np.abs(theta), np.finfo(float).eps)
        if self.pair_test is not None and Y is not None:
            wanted = (
                self.wanted_filter(theta)
                if self.wanted_filter is not None
                else np.ones(len(theta), dtype=bool)
            )
            for i in range(len(theta)):
                if conv[i] or not wanted[i] or res[i] > 1e-2:
                    continue
                conv[i] = bool(self.pair_test(theta[i], Y[:, i], self.m))
        if self.wanted_filter is not None:
            return int(np.sum(conv & self.wanted_filter(theta))), conv
        return int(np.sum(conv)), conv

    def run(self, min_converged: int, max_restarts: int):
        """Iterate until enough wanted Ritz pairs converge (or give up)."""
        stall = 0
        last_count = -1
        while True:
            while self.m < self.ncv and not self.exhausted:
                j = self.m
                h, beta, dep = self.engine.expand(j)
                self.H[: j + 1, j] = h
                if dep:
                    self.H[j + 1, j] = 0.0
                    if not self.engine.append_random(j, self.rng):
                        self.exhausted = True
                else:
                    self.H[j + 1, j] = beta
                self.m += 1
            theta, Y, res = self._ritz()
            order = np.argsort(self.sort_key(theta), kind="stable")
            self.ritz_history.append((theta[order], res[order]))
            count, conv = self._count_converged(theta, res, Y)
            all_conv = bool(np.all(conv))
            if count == last_count:
                stall += 1
            else:
                stall = 0
                last_count = count
            if (
                count >= min_converged
                or self.restarts >= max_restarts
                or self.exhausted
                or (all_conv and stall >= 1)
                or stall >= 15
            ):
                return count
            # restart retention: converged wanted pairs first, then the best
            # unconverged candidates, then converged junk (keeping dominant
            # junk locked prevents it from regrowing every cycle); always
            # leave at least a quarter of the subspace for fresh expansions
            wanted = (
                self.wanted_filter(theta)
                if self.wanted_filter is not None
                else np.ones(len(theta), dtype=bool)
            )
            p_target = max(min_converged + 1, self.ncv // 2)
            cap_total = min(self.m - 1, max(min_converged + 2, (3 * self.ncv) // 4))
            keep = [i for i in order if conv[i] and wanted[i]][:cap_total]
            for i in order:
                if len(keep) >= min(p_target, cap_total):
                    break
                if not conv[i] and i not in keep:
                    keep.append(i)
            for i in order:
                if len(keep) >= cap_total:
                    break
                if conv[i] and not wanted[i] and i not in keep:
                    keep.append(i)
            p = len(keep)
            wanted_vals = theta[keep]
            T, Q, sdim = _ordered_schur(self.H[: self.m, : self.m], wanted_vals)
            sdim = max(1, min(sdim, self.m - 1))
            brow = self.H[self.m, : self.m] @ Q[:, :sdim]
            self.engine.transform(Q[:, :sdim], self.m)
            self.H[:, :] = 0.0
            self.H[:sdim, :sdim] = T[:sdim, :sdim]
            self.H[sdim, :sdim] = brow
            self.m = sdim
            self.restarts += 1

    def extract(self):
        """Converged Ritz triples (theta, y, residual), wanted order."""
        theta, Y, res = self._ritz()
        _count, conv = self._count_converged(theta, res, Y)
        order = np.argsort(self.sort_key(theta), kind="stable")
        out = []
        for idx in order:
            out.append((theta[idx], Y[:, idx], res[idx], bool(conv[idx])))
        return out
