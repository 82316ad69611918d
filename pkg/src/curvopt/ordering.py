"""Metric-aware spectral node ordering, interleaved DOF ordering and MDF elimination ordering."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DofMap, HighOrderMesh
from .metric import Metric

EIG_TOL = 1e-8
EIG_MAX_ITER = 2000


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeOrdering:
    node_perm: np.ndarray
    source: str = "spectral"
    eigenvalue: float | None = None
    eigenvector: np.ndarray | None = None


@dataclass(frozen=True)
class DofPermutation:
    sigma: np.ndarray


# -- spectral ordering ---------------------------------------------------------------


def laplace_beltrami_p1(mesh: HighOrderMesh, metric: Metric, coords=None):
    """Stiffness and consistent mass of the metric Laplacian on the linear sub-simplices.

    Every high-order element is split along its node lattice; the metric is
    frozen at each sub-simplex centroid.
    """
    coords = mesh.coords if coords is None else coords
    d = mesh.dim
    sub = mesh.ref.subsimplices()
    cells = mesh.elements[:, sub].reshape(-1, d + 1)
    V = coords[cells]  # (c, d+1, d)
    E = np.swapaxes(V[:, 1:] - V[:, :1], 1, 2)  # columns are edge vectors
    det = np.linalg.det(E)
    Einv = np.linalg.inv(E)
    grads = np.concatenate([-Einv.sum(axis=1, keepdims=True), Einv], axis=1)  # (c, d+1, d)
    M = metric(V.mean(axis=1))
    w = np.abs(det) / np.prod(np.arange(1, d + 1)) * np.sqrt(np.linalg.det(M))
    Minv = np.linalg.inv(M)
    Ke = w[:, None, None] * np.einsum("cia,cab,cjb->cij", grads, Minv, grads)
    base = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    Be = w[:, None, None] * base
    rows = np.repeat(cells, d + 1, axis=1).ravel()
    cols = np.tile(cells, (1, d + 1)).ravel()
    k = mesh.n_nodes
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(k, k))
    B = sp.csr_matrix((Be.ravel(), (rows, cols)), shape=(k, k))
    return K, B


def _b_orthonormalize(X: np.ndarray, B) -> np.ndarray:
    """B-orthonormal basis of range(X), dropping numerically dependent directions."""
    G = X.T @ (B @ X)
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    keep = w > 1e-12 * max(w.max(), 1e-300)
    return X @ (V[:, keep] / np.sqrt(w[keep]))


def fiedler_pair(K: sp.spmatrix, B: sp.spmatrix, tol: float = EIG_TOL, block: int | None = None, start=None):
    """Smallest nonzero eigenpair of ``K u = lam B u`` with the constant mode deflated.

    Shifted block inverse iteration with Rayleigh-Ritz; converged when the
    relative eigen-residual of the lowest Ritz pair drops below ``tol``.
    """
    n = K.shape[0]
    one = np.ones(n)
    B1 = B @ one
    c = one @ B1
    shift = 1e-6 * K.diagonal().sum() / B.diagonal().sum()
    lu = spla.splu(sp.csc_matrix(K + shift * B))
    m = block or min(n - 1, 6)
    if start is None:
        rng = np.random.default_rng(0)
        start = rng.standard_normal((n, m))
    X = np.asarray(start, dtype=float)[:, :m]
    if X.shape[1] < m:
        X = np.column_stack([X, np.random.default_rng(0).standard_normal((n, m - X.shape[1]))])

    def deflate(Y):
        return Y - np.outer(one, (B1 @ Y) / c)

    X = deflate(X)
    lam = None
    for _ in range(EIG_MAX_ITER):
        X = deflate(lu.solve(B @ X))
        # B-orthonormalize then Rayleigh-Ritz
        X = _b_orthonormalize(X, B)
        Kr = X.T @ (K @ X)
        vals, vecs = np.linalg.eigh(0.5 * (Kr + Kr.T))
        X = X @ vecs
        u = X[:, 0]
        lam = vals[0]
        res = np.linalg.norm(K @ u - lam * (B @ u)) / max(np.linalg.norm(K @ u), 1e-300)
        if res < tol:
            return float(lam), u
    raise EigenSolverError(f"inverse iteration did not converge (residual {res:.3e}, lambda {lam})")


def spectral_node_ordering(mesh: HighOrderMesh, metric: Metric) -> NodeOrdering:
    K, B = laplace_beltrami_p1(mesh, metric)
    d = mesh.dim
    x = mesh.coords
    mono = [x, x**2, np.prod(x, axis=1)] + ([x[:, 0] * x[:, 1] * x[:, -1]] if d == 3 else [])
    rand = np.random.default_rng(0).standard_normal((mesh.n_nodes, 2))
    start = np.column_stack(mono + [rand])
    lam, u = fiedler_pair(K, B, start=start, block=min(mesh.n_nodes - 1, start.shape[1]))
    if u[0] > 0:
        u = -u
    perm = np.lexsort((np.arange(mesh.n_nodes), u))
    return NodeOrdering(perm, "spectral", lam, u)


def interleave_dofs(node_perm: np.ndarray, dofmap: DofMap) -> np.ndarray:
    """Free DOF ids listed node-major in ``node_perm`` order, axis-minor within a node."""
    ids = dofmap.free_index[np.asarray(node_perm)].ravel()
    return ids[ids >= 0]


# -- minimum discarded fill ----------------------------------------------------------


@numba.njit(cache=True)
def _find(indices, start, stop, col):
    lo, hi = start, stop
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < col:
            lo = mid + 1
        else:
            hi = mid
    if lo < stop and indices[lo] == col:
        return lo
    return -1


@numba.njit(cache=True)
def _node_cost(i, indptr, indices, val, alive, diag_pos):
    """Squared fill discarded by eliminating ``i`` next, and the number of live neighbours."""
    piv = val[diag_pos[i]]
    cost = 0.0
    for jj in range(indptr[i], indptr[i + 1]):
        j = indices[jj]
        if j == i or not alive[j]:
            continue
        # a_ji: entry (j, i)
        pji = _find(indices, indptr[j], indptr[j + 1], i)
        aji = val[pji] if pji >= 0 else 0.0
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k == i or k == j or not alive[k]:
                continue
            if _find(indices, indptr[j], indptr[j + 1], k) < 0:
                f = aji * val[kk] / piv
                cost += f * f
    return cost


@numba.njit(cache=True)
def _eliminate(i, indptr, indices, val, alive, diag_pos):
    """Zero-fill elimination of ``i``: update retained entries, return discarded squared fill."""
    piv = val[diag_pos[i]]
    disc = 0.0
    alive[i] = False
    for jj in range(indptr[i], indptr[i + 1]):
        j = indices[jj]
        if not alive[j]:
            continue
        pji = _find(indices, indptr[j], indptr[j + 1], i)
        aji = val[pji] if pji >= 0 else 0.0
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if not alive[k]:
                continue
            f = aji * val[kk] / piv
            pos = _find(indices, indptr[j], indptr[j + 1], k)
            if pos >= 0:
                val[pos] -= f
            elif j != k:
                disc += f * f
    return disc


def _prepare(A):
    A = sp.csr_matrix(A, dtype=float)
    A.sort_indices()
    n = A.shape[0]
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    diag_pos = np.array([_find(indices, indptr[i], indptr[i + 1], i) for i in range(n)], dtype=np.int64)
    if np.any(diag_pos < 0):
        raise ValueError("matrix needs a structurally nonzero diagonal")
    return n, indptr, indices, A.data.copy(), diag_pos


@numba.njit(cache=True)
def _simulate(order, indptr, indices, data, diag_pos):
    val = data.copy()
    alive = np.ones(len(diag_pos), dtype=np.bool_)
    total = 0.0
    for i in order:
        if val[diag_pos[i]] == 0.0:
            return np.inf
        total += _eliminate(i, indptr, indices, val, alive, diag_pos)
    return total


def discarded_fill(A, order) -> float:
    """Frobenius norm of all fill dropped by an ILU(0)-style elimination in ``order``."""
    n, indptr, indices, val, diag_pos = _prepare(A)
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("order must be a permutation")
    return float(np.sqrt(_simulate(order, indptr, indices, val, diag_pos)))


def brute_force_mdf(A) -> tuple[np.ndarray, float]:
    """Exhaustive minimum of :func:`discarded_fill` (small matrices only)."""
    n, indptr, indices, val, diag_pos = _prepare(A)
    if n > 9:
        raise ValueError("brute force limited to n <= 9")
    best, best_p = np.inf, None
    for p in itertools.permutations(range(n)):
        f = _simulate(np.array(p, dtype=np.int64), indptr, indices, val, diag_pos)
        if f < best:
            best, best_p = f, p
    return np.array(best_p, dtype=np.int64), float(np.sqrt(best))


def mdf_ordering(H0) -> DofPermutation:
    """Greedy minimum-discarded-fill ordering, ties broken by the lower index.

    Only the neighbours of an eliminated unknown change their cost, so only
    their heap entries are refreshed.
    """
    n, indptr, indices, val, diag_pos = _prepare(H0)
    alive = np.ones(n, dtype=np.bool_)
    version = np.zeros(n, dtype=np.int64)
    heap = [(_node_cost(i, indptr, indices, val, alive, diag_pos), i, 0) for i in range(n)]
    heapq.heapify(heap)
    order = []
    while heap:
        _, i, ver = heapq.heappop(heap)
        if not alive[i] or ver != version[i]:
            continue
        order.append(i)
        _eliminate(i, indptr, indices, val, alive, diag_pos)
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if alive[j]:
                version[j] += 1
                heapq.heappush(heap, (_node_cost(j, indptr, indices, val, alive, diag_pos), int(j), int(version[j])))
    return DofPermutation(np.array(order, dtype=np.int64))
