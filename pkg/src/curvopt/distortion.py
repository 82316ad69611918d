"""Metric-aware distortion of curved elements: values, analytic derivatives, statistics.

Per quadrature point the distortion is written through ``B = Q(p) J W`` where
``J`` is the physical Jacobian, ``W`` the inverse equilateral Jacobian and
``Q`` the metric square-root factor, so that ``tr(A^T M A) = |B|_F^2`` and
``sigma = det B``.  Derivatives are taken with respect to ``B`` in closed
form and pushed to the element node coordinates through ``(J, p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, HighOrderMesh
from .metric import Metric
from .reference import (
    QuadratureRule,
    ReferenceSimplex,
    equilateral_jacobian,
    equilateral_measure,
    gauss_legendre_01,
    physical_map,
    quadrature_for,
    quadrature_of_order,
)


@dataclass(frozen=True)
class DistortionSample:
    A: np.ndarray
    sigma: float
    sigma0: float
    eta: float


@dataclass(frozen=True, eq=False)
class ObjectiveEval:
    """``value`` is ``inf`` for an invalid configuration; derivatives are then ``None``."""

    value: float
    gradient: np.ndarray | None = None
    hessian: sp.csr_matrix | None = None

    @property
    def valid(self) -> bool:
        return math.isfinite(self.value)


INVALID = ObjectiveEval(math.inf)


def pointwise_distortion(ref: ReferenceSimplex, element_coords, xi, metric: Metric) -> DistortionSample:
    point, jac = physical_map(ref, np.asarray(element_coords, dtype=float), np.asarray(xi, dtype=float))
    A = jac @ np.linalg.inv(equilateral_jacobian(ref.dim))
    M = metric(point)
    d = ref.dim
    sigma = float(np.linalg.det(A) * math.sqrt(np.linalg.det(M)))
    sigma0 = 0.5 * (sigma + abs(sigma))
    if sigma <= 0:
        return DistortionSample(A, sigma, sigma0, math.inf)
    eta = float(np.trace(A.T @ M @ A) / (d * sigma0 ** (2.0 / d)))
    return DistortionSample(A, sigma, sigma0, eta)


def _eta_batch(B: np.ndarray):
    d = B.shape[-1]
    nrm = np.einsum("...ab,...ab->...", B, B)
    det = np.linalg.det(B)
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = nrm / (d * np.abs(det) ** (2.0 / d))
    eta = np.where(det > 0, eta, np.inf)
    return eta, nrm, det


class _Kernel:
    """Quadrature-level data shared by every evaluation on a given mesh topology."""

    def __init__(self, mesh: HighOrderMesh, metric: Metric, rule: QuadratureRule | None = None):
        self.mesh = mesh
        self.metric = metric
        self.dim = mesh.dim
        self.ref = mesh.ref
        self.rule = rule or quadrature_for(mesh.dim, mesh.degree)
        self.N = self.ref.shape(self.rule.points)  # (q, i)
        self.G = self.ref.grad(self.rule.points)  # (q, i, b)
        self.Ghat = np.concatenate([self.G, self.N[:, :, None]], axis=2)  # (q, i, d+1)
        E = equilateral_jacobian(self.dim)
        self.W = np.linalg.inv(E)
        self.wq = self.rule.weights * abs(np.linalg.det(E))
        nq, n_p, d1 = self.Ghat.shape
        # K[(q, b, B), (i, j)] = Ghat[q, i, b] Ghat[q, j, B]
        self.K = np.einsum("qib,qjB->qbBij", self.Ghat, self.Ghat).reshape(nq * d1 * d1, n_p * n_p)
        self.Gflat = self.Ghat.transpose(0, 2, 1).reshape(nq * d1, n_p)

    def geometry(self, X: np.ndarray):
        J = np.einsum("eia,qib->eqab", X, self.G)
        P = np.einsum("qi,eia->eqa", self.N, X)
        return J, P

    def factor(self, P: np.ndarray, order: int):
        shp = P.shape[:-1]
        F = self.metric.factor(P.reshape(-1, self.dim), order)
        d = self.dim
        Q = F.Q.reshape(shp + (d, d))
        dQ = None if F.dQ is None else F.dQ.reshape(shp + (d, d, d))
        d2Q = None if F.d2Q is None else F.d2Q.reshape(shp + (d, d, d, d))
        return Q, dQ, d2Q

    def eta(self, X: np.ndarray) -> np.ndarray:
        J, P = self.geometry(X)
        Q, _, _ = self.factor(P, 0)
        B = Q @ J @ self.W
        return _eta_batch(B)[0]

    def element_values(self, X: np.ndarray) -> np.ndarray:
        """Per-element squared L2 norm of eta over the equilateral element."""
        eta = self.eta(X)
        return np.einsum("q,eq->e", self.wq, eta**2)

    def derivatives(self, X: np.ndarray, hessian: bool = True):
        """Element values, gradients (e, n_p*d) and Hessians (e, n_p*d, n_p*d)."""
        d = self.dim
        J, P = self.geometry(X)
        Q, dQ, d2Q = self.factor(P, 2 if hessian else 1)
        W = self.W
        C = J @ W
        B = Q @ C
        eta, nrm, det = _eta_batch(B)
        if not np.all(det > 0):
            return None
        e, q = eta.shape
        w = self.wq[None, :]
        Binv_T = np.swapaxes(np.linalg.inv(B), -1, -2)
        R = 2.0 * B / nrm[..., None, None] - (2.0 / d) * Binv_T
        gB = (2.0 * eta**2)[..., None, None] * R  # df/dB with f = eta^2
        vals = np.einsum("q,eq->e", self.wq, eta**2)
        gBCt = gB @ np.swapaxes(C, -1, -2)

        # gradient w.r.t. Z = [J | p]
        gZ = np.empty((e, q, d, d + 1))
        gZ[..., :d] = np.swapaxes(Q, -1, -2) @ gB @ W.T
        gZ[..., d] = np.einsum("eqac,eqack->eqk", gBCt, dQ)
        gZ *= w[..., None, None]
        ge = (gZ.transpose(0, 2, 1, 3).reshape(e, d, -1) @ self.Gflat).transpose(0, 2, 1)
        ge = ge.reshape(e, -1)
        if not hessian:
            return vals, ge, None

        # Hessian of f w.r.t. B (flattened d*d)
        dd = d * d
        Rf = R.reshape(e, q, dd)
        Bf = B.reshape(e, q, dd)
        BtT = np.swapaxes(Binv_T, -1, -2)
        # T[i,j,k,l] = Binv_T[i,l] Binv_T[k,j]
        T = (Binv_T[..., :, None, None, :] * BtT[..., None, :, :, None]).reshape(e, q, dd, dd)
        inv_n = (1.0 / nrm)[..., None, None]
        Heta = eta[..., None, None] * (
            Rf[..., :, None] * Rf[..., None, :]
            + 2.0 * inv_n * np.eye(dd)
            - 4.0 * inv_n**2 * Bf[..., :, None] * Bf[..., None, :]
            + (2.0 / d) * T
        )
        geta = eta[..., None] * Rf
        HB = 2.0 * geta[..., :, None] * geta[..., None, :] + 2.0 * eta[..., None, None] * Heta

        # linearization L[(a, b), (c, beta)] of B in Z
        nz = d * (d + 1)
        L = np.zeros((e, q, d, d, d, d + 1))
        # dB_ab/dJ_cf = Q_ac W_fb
        L[..., :d] = Q[:, :, :, None, :, None] * W.T[None, None, None, :, None, :]
        # dB_ab/dp_k = (dQ_k C)_ab
        L[:, :, :, :, np.arange(d), d] = np.einsum("eqack,eqcb->eqabk", dQ, C)
        L = L.reshape(e, q, dd, nz)
        HZ = np.swapaxes(L, -1, -2) @ HB @ L

        # second-derivative terms of B contracted with gB
        S = np.zeros((e, q, d, d + 1, d, d + 1))
        # d2B/dp_k dp_l = d2Q_kl C
        S[:, :, np.arange(d)[:, None], d, np.arange(d)[None, :], d] = np.einsum(
            "eqac,eqackl->eqkl", gBCt, d2Q
        )
        # d2B/dp_k dJ_cf = dQ_k[a, c] W_fb
        cross = np.einsum("eqack,eqaf->eqkcf", dQ, gB @ W.T)
        for k in range(d):
            S[:, :, k, d, :, :d] += cross[:, :, k]
            S[:, :, :, :d, k, d] += cross[:, :, k]
        HZ += S.reshape(e, q, nz, nz)
        HZ *= w[..., None, None]

        # He[e, (i, c), (j, C)] = sum_{q, b, B} HZ[e, q, c, b, C, B] Ghat[q, i, b] Ghat[q, j, B]
        n_p = self.ref.n_nodes
        HZ6 = HZ.reshape(e, q, d, d + 1, d, d + 1).transpose(0, 2, 4, 1, 3, 5).reshape(e, d, d, -1)
        He = (HZ6 @ self.K).reshape(e, d, d, n_p, n_p).transpose(0, 3, 1, 4, 2)
        He = He.reshape(e, n_p * d, n_p * d)
        return vals, ge, 0.5 * (He + np.swapaxes(He, 1, 2))


class DistortionObjective:
    """F(x) = sum_e ||eta||^2_{L2(E^eq)} over the free DOFs ``x`` of ``mesh``."""

    def __init__(
        self,
        mesh: HighOrderMesh,
        dofmap: DofMap,
        metric: Metric,
        rule: QuadratureRule | None = None,
        chunk: int | None = None,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.metric = metric
        self.kernel = _Kernel(mesh, metric, rule)
        self.n = dofmap.n
        nloc = mesh.ref.n_nodes * mesh.dim
        nq = len(self.kernel.wq)
        self.chunk = chunk or max(1, int(4e6 // (nq * nloc * mesh.dim * (mesh.dim + 1))))
        self._loc = dofmap.element_dofs(mesh.elements)
        self._build_pattern()

    def _build_pattern(self):
        loc = self._loc
        n = self.n
        rows = np.repeat(loc[:, :, None], loc.shape[1], axis=2)
        cols = np.repeat(loc[:, None, :], loc.shape[1], axis=1)
        mask = (rows >= 0) & (cols >= 0)
        keys = rows[mask] * n + cols[mask]
        uniq, inv = np.unique(keys, return_inverse=True)
        self._hmask = mask
        self._hinv = inv
        self._indices = (uniq % n).astype(np.int64) if n else uniq
        r = uniq // n if n else uniq
        self._indptr = np.searchsorted(r, np.arange(n + 1)).astype(np.int64)
        self._nnz = len(uniq)
        self._gmask = loc >= 0

    def coords(self, x: np.ndarray) -> np.ndarray:
        return self.dofmap.scatter(x, self.mesh.coords)

    def initial_point(self) -> np.ndarray:
        return self.dofmap.gather(self.mesh.coords)

    def element_values(self, x: np.ndarray) -> np.ndarray:
        X = self.mesh.element_coords(self.coords(x))
        out = np.empty(len(X))
        for s in range(0, len(X), self.chunk):
            out[s : s + self.chunk] = self.kernel.element_values(X[s : s + self.chunk])
        return out

    def value(self, x: np.ndarray) -> float:
        ev = self.element_values(x)
        if not np.all(np.isfinite(ev)):
            return math.inf
        return float(np.sum(ev))

    def __call__(self, x: np.ndarray) -> float:
        return self.value(x)

    def is_valid(self, x: np.ndarray) -> bool:
        X = self.mesh.element_coords(self.coords(x))
        J, _ = self.kernel.geometry(X)
        return bool(np.all(np.linalg.det(J) > 0))

    def evaluate(self, x: np.ndarray, hessian: bool = True) -> ObjectiveEval:
        X = self.mesh.element_coords(self.coords(x))
        m = len(X)
        vals = np.empty(m)
        grads = []
        hess = []
        for s in range(0, m, self.chunk):
            res = self.kernel.derivatives(X[s : s + self.chunk], hessian)
            if res is None:
                return INVALID
            v, ge, He = res
            vals[s : s + self.chunk] = v
            grads.append(ge)
            if hessian:
                hess.append(He)
        ge = np.concatenate(grads)
        g = np.bincount(self._loc[self._gmask], weights=ge[self._gmask], minlength=self.n)
        H = None
        if hessian:
            He = np.concatenate(hess)
            data = np.bincount(self._hinv, weights=He[self._hmask], minlength=self._nnz)
            H = sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))
        return ObjectiveEval(float(np.sum(vals)), g, H)


def validity_guard(objective: DistortionObjective, x: np.ndarray) -> bool:
    """True iff sigma > 0 at every quadrature point."""
    return objective.is_valid(x)


def element_distortion(mesh: HighOrderMesh, metric: Metric, coords=None, rule=None) -> np.ndarray:
    """L1 mean of eta over each element (its reciprocal is the shape quality)."""
    kern = _Kernel(mesh, metric, rule)
    eta = kern.eta(mesh.element_coords(coords))
    return eta @ kern.rule.weights / kern.rule.weights.sum()


def element_quality(mesh: HighOrderMesh, metric: Metric, coords=None) -> np.ndarray:
    return 1.0 / element_distortion(mesh, metric, coords)


def objective(mesh: HighOrderMesh, dofmap: DofMap, metric: Metric, x: np.ndarray) -> ObjectiveEval:
    return ObjectiveEval(DistortionObjective(mesh, dofmap, metric).value(x))


def objective_with_derivatives(mesh: HighOrderMesh, dofmap: DofMap, metric: Metric, x: np.ndarray) -> ObjectiveEval:
    return DistortionObjective(mesh, dofmap, metric).evaluate(x)


# -- statistics -----------------------------------------------------------------


def _edge_lengths(mesh: HighOrderMesh, metric: Metric, coords: np.ndarray) -> np.ndarray:
    ref = mesh.ref
    nodes = np.vstack([np.zeros(mesh.dim), np.eye(mesh.dim)])
    t, wt = gauss_legendre_01(mesh.degree + 3)
    seen = {}
    for e, conn in enumerate(mesh.elements):
        for a, b in ref.local_edges():
            key = (min(conn[a], conn[b]), max(conn[a], conn[b]))
            if key not in seen:
                seen[key] = (e, a, b)
    out = np.empty(len(seen))
    X = coords[mesh.elements]
    for k, (e, a, b) in enumerate(seen.values()):
        tau = nodes[b] - nodes[a]
        xi = nodes[a] + t[:, None] * tau
        pts, jac = physical_map(ref, X[e], xi)
        v = jac @ tau
        M = metric(pts)
        out[k] = wt @ np.sqrt(np.einsum("qa,qab,qb->q", v, M, v))
    return out


def _face_areas(mesh: HighOrderMesh, metric: Metric, coords: np.ndarray) -> np.ndarray:
    ref = mesh.ref
    nodes = np.vstack([np.zeros(mesh.dim), np.eye(mesh.dim)])
    tri = quadrature_of_order(2, 2 * mesh.degree + 2)
    seen = {}
    for e, conn in enumerate(mesh.elements):
        for f in ref.local_faces():
            key = tuple(sorted(conn[list(f)]))
            if key not in seen:
                seen[key] = (e, f)
    out = np.empty(len(seen))
    X = coords[mesh.elements]
    for k, (e, (a, b, c)) in enumerate(seen.values()):
        T = np.column_stack([nodes[b] - nodes[a], nodes[c] - nodes[a]])
        xi = nodes[a] + tri.points @ T.T
        pts, jac = physical_map(ref, X[e], xi)
        Tp = jac @ T
        M = metric(pts)
        g = np.einsum("qai,qab,qbj->qij", Tp, M, Tp)
        out[k] = tri.weights @ np.sqrt(np.linalg.det(g))
    return out


def _element_volumes(mesh: HighOrderMesh, metric: Metric, coords: np.ndarray) -> np.ndarray:
    rule = quadrature_for(mesh.dim, mesh.degree)
    X = coords[mesh.elements]
    G = mesh.ref.grad(rule.points)
    N = mesh.ref.shape(rule.points)
    J = np.einsum("eia,qib->eqab", X, G)
    P = np.einsum("qi,eia->eqa", N, X)
    M = metric(P.reshape(-1, mesh.dim)).reshape(J.shape)
    return np.einsum("q,eq->e", rule.weights, np.linalg.det(J) * np.sqrt(np.linalg.det(M)))


@dataclass(frozen=True)
class StatRow:
    measure: str
    min: float
    max: float
    mean: float
    std: float


def _row(name: str, v: np.ndarray) -> StatRow:
    return StatRow(name, float(v.min()), float(v.max()), float(v.mean()), float(v.std()))


def mesh_statistics(mesh: HighOrderMesh, metric: Metric, coords: np.ndarray | None = None) -> list[StatRow]:
    """Shape quality plus metric lengths, areas and volumes relative to the unit equilateral simplex."""
    coords = mesh.coords if coords is None else coords
    rows = [
        _row("shape_quality", element_quality(mesh, metric, coords)),
        _row("edge_length", _edge_lengths(mesh, metric, coords)),
    ]
    if mesh.dim == 2:
        rows.append(_row("element_area", _element_volumes(mesh, metric, coords) / equilateral_measure(2)))
    else:
        rows.append(_row("face_area", _face_areas(mesh, metric, coords) / equilateral_measure(2)))
        rows.append(_row("element_volume", _element_volumes(mesh, metric, coords) / equilateral_measure(3)))
    return rows


def statistics_csv(rows: list[StatRow]) -> str:
    lines = ["measure,min,max,mean,std"]
    lines += [f"{r.measure},{r.min:.6g},{r.max:.6g},{r.mean:.6g},{r.std:.6g}" for r in rows]
    return "\n".join(lines) + "\n"
