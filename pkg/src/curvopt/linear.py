"""Preconditioned CG with curvature exit, Jacobi / iLDL^T(0) preconditioners, direct solve."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

JACOBI = "Jacobi"
ILDLT0 = "iLDLT0"
SWITCH_DELTA = 10.0
PIVOT_TOL = 1e-14


class FactorizationError(RuntimeError):
    pass


class CountingOperator:
    """Sparse matrix wrapper that counts every matrix-vector product."""

    def __init__(self, H: sp.spmatrix, counter: list[int] | None = None):
        self.H = sp.csr_matrix(H)
        self.shape = self.H.shape
        self._counter = counter if counter is not None else [0]

    @property
    def count(self) -> int:
        return self._counter[0]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        self._counter[0] += 1
        return self.H @ v

    matvec = __call__


@dataclass
class CgOutcome:
    solution: np.ndarray
    termination: str  # residual | curvature | max_iter
    iterations: int
    matvec_count: int
    last_step: np.ndarray | None = None


def cg(
    H,
    rhs: np.ndarray,
    preconfun: Callable[[np.ndarray], np.ndarray],
    i_max: int,
    eta: float,
    eps: float,
) -> CgOutcome:
    """Solve ``H p = rhs`` from ``p = 0`` with residual and curvature exits.

    ``rhs`` is ``-g``.  ``H`` is a matrix or a callable matvec.  A curvature exit
    on the first iteration returns the preconditioned steepest descent
    ``preconfun(rhs)``.
    """
    matvec = H if callable(H) else (lambda v, _H=H: _H @ v)
    rhs = np.asarray(rhs, dtype=float)
    g_norm = np.linalg.norm(rhs)
    p = np.zeros_like(rhs)
    d = np.zeros_like(rhs)
    beta = 0.0
    r = rhs - matvec(p)
    mv = 1
    z = preconfun(r)
    i = 1
    while i <= i_max:
        z_old, r_old = z, r
        d = z + beta * d
        Hd = matvec(d)
        mv += 1
        dHd = d @ Hd
        # zero curvature would divide by zero; nan also exits here
        if not dHd >= eps * (d @ d) or dHd == 0:
            sol = z if i == 1 else p
            return CgOutcome(sol, "curvature", i, mv, d)
        alpha = (r @ z) / dHd
        p = p + alpha * d
        r = r - alpha * Hd
        z = preconfun(r)
        if np.linalg.norm(r) < eta * g_norm:
            return CgOutcome(p, "residual", i, mv)
        beta = (r @ z) / (r_old @ z_old)
        i += 1
    return CgOutcome(p, "max_iter", i_max, mv)


# -- preconditioners --------------------------------------------------------------


@dataclass
class FactorizationResult:
    kind: str
    diag: np.ndarray
    lower: sp.csr_matrix | None = None
    perm: np.ndarray | None = None
    d_ratio: float | None = None
    _strict: sp.csr_matrix | None = field(default=None, repr=False)
    _strict_t: sp.csr_matrix | None = field(default=None, repr=False)

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self.kind == JACOBI:
            return r / self.diag
        y = r[self.perm]
        y = _lower_unit_solve(self._strict.indptr, self._strict.indices, self._strict.data, y)
        y = y / self.diag
        y = _upper_unit_solve(self._strict_t.indptr, self._strict_t.indices, self._strict_t.data, y)
        z = np.empty_like(y)
        z[self.perm] = y
        return z

    __call__ = apply


def jacobi_precon(H) -> FactorizationResult:
    diag = np.asarray(sp.csr_matrix(H).diagonal(), dtype=float)
    if np.any(diag == 0):
        raise FactorizationError("zero diagonal entry in Hessian")
    return FactorizationResult(JACOBI, diag)


@numba.njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, tol):
    val = data.copy()
    diag_pos = np.full(n, -1, np.int64)
    marker = np.full(n, -1, np.int64)
    for i in range(n):
        row_norm = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            marker[indices[jj]] = jj
            row_norm += data[jj] * data[jj]
        row_norm = math.sqrt(row_norm)
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k >= i:
                break
            piv = val[diag_pos[k]]
            lik = val[kk] / piv
            val[kk] = lik
            for jj in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = marker[indices[jj]]
                if pos >= 0:
                    val[pos] -= lik * val[jj]
        dp = -1
        for jj in range(indptr[i], indptr[i + 1]):
            if indices[jj] == i:
                dp = jj
            marker[indices[jj]] = -1
        if dp < 0 or abs(val[dp]) < tol * row_norm or row_norm == 0.0:
            return val, diag_pos, i
        diag_pos[i] = dp
    return val, diag_pos, -1


@numba.njit(cache=True)
def _lower_unit_solve(indptr, indices, data, b):
    n = len(b)
    x = b.copy()
    for i in range(n):
        s = x[i]
        for jj in range(indptr[i], indptr[i + 1]):
            s -= data[jj] * x[indices[jj]]
        x[i] = s
    return x


@numba.njit(cache=True)
def _upper_unit_solve(indptr, indices, data, b):
    n = len(b)
    x = b.copy()
    for i in range(n - 1, -1, -1):
        s = x[i]
        for jj in range(indptr[i], indptr[i + 1]):
            s -= data[jj] * x[indices[jj]]
        x[i] = s
    return x


def ilu0(A, tol: float = PIVOT_TOL) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Zero-fill incomplete LU on the pattern of ``A``: ``L`` unit lower, ``U`` upper."""
    A = sp.csr_matrix(A, dtype=float)
    A.sort_indices()
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    val, _, fail = _ilu0_kernel(n, A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, tol)
    if fail >= 0:
        raise FactorizationError(f"zero pivot in row {fail}")
    F = sp.csr_matrix((val, A.indices, A.indptr), shape=A.shape)
    L = sp.tril(F, k=-1, format="csr") + sp.identity(n, format="csr")
    U = sp.triu(F, k=0, format="csr")
    return sp.csr_matrix(L), sp.csr_matrix(U)


def switch_criterion(D: np.ndarray, delta: float = SWITCH_DELTA) -> tuple[str, float | None]:
    """iLDLT0 unless the negative entries of ``D`` spread by a factor ``delta`` or more."""
    D = np.asarray(D, dtype=float)
    neg = np.abs(D[D < 0])
    if neg.size == 0:
        return ILDLT0, None
    ratio = float(neg.max() / neg.min())
    return (ILDLT0 if ratio < delta else JACOBI), ratio


def ildlt0_from_ilu(L, U, perm: np.ndarray, delta: float = SWITCH_DELTA, H=None) -> FactorizationResult:
    """Symmetric factors ``Lt = (L + (D^-1 U)^T) / 2`` from an iLU(0) of the permuted matrix.

    ``H`` (unpermuted) supplies the Jacobi diagonal when the switch rejects the factors.
    """
    D = np.asarray(U.diagonal(), dtype=float)
    if H is None:
        H_diag = None
    else:
        H_diag = np.asarray(sp.csr_matrix(H).diagonal(), dtype=float)
    kind, ratio = switch_criterion(D, delta)
    if np.any(D == 0):
        kind = JACOBI
    if kind == JACOBI:
        if H_diag is None:
            raise FactorizationError("Jacobi fallback requested without the Hessian")
        res = jacobi_precon(sp.diags(H_diag))
        res.d_ratio = ratio
        res.perm = perm
        return res
    Ut = sp.csr_matrix(sp.diags(1.0 / D) @ sp.triu(U, k=1)).T
    Lt = 0.5 * (sp.tril(L, k=-1) + Ut)
    Lt = sp.csr_matrix(Lt)
    Lt.sort_indices()
    LtT = sp.csr_matrix(Lt.T)
    LtT.sort_indices()
    unit = sp.csr_matrix(Lt + sp.identity(len(D)))
    return FactorizationResult(ILDLT0, D, unit, np.asarray(perm, dtype=np.int64), ratio, Lt, LtT)


def factorize(H, perm: np.ndarray | None, preconditioner: str = ILDLT0, delta: float = SWITCH_DELTA) -> FactorizationResult:
    """Jacobi, or iLDL^T(0) of ``H[perm, perm]`` with the switch criterion and a Jacobi fallback."""
    H = sp.csr_matrix(H)
    if preconditioner == JACOBI:
        return jacobi_precon(H)
    n = H.shape[0]
    perm = np.arange(n) if perm is None else np.asarray(perm, dtype=np.int64)
    Hs = H[perm][:, perm]
    try:
        L, U = ilu0(Hs)
    except FactorizationError:
        res = jacobi_precon(H)
        res.perm = perm
        return res
    return ildlt0_from_ilu(L, U, perm, delta, H)


def direct_solve(H, rhs: np.ndarray) -> np.ndarray:
    """Complete sparse factorization solve of ``H p = rhs`` (symmetric indefinite allowed)."""
    H = sp.csc_matrix(H)
    try:
        lu = spla.splu(H)
        p = lu.solve(np.asarray(rhs, dtype=float))
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular Hessian: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise np.linalg.LinAlgError("singular Hessian")
    return p
