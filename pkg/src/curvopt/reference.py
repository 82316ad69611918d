"""Master simplex: equispaced Lagrange basis, quadrature and the equilateral map."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 8


def lattice_indices(dim: int, degree: int) -> np.ndarray:
    """Barycentric multi-indices (alpha_0, ..., alpha_d) summing to ``degree``.

    Vertices come first (in master-vertex order), the remaining lattice points
    follow in lexicographic order of their master coordinates.
    """
    pts = []
    for tail in itertools.product(range(degree + 1), repeat=dim):
        if sum(tail) <= degree:
            pts.append((degree - sum(tail),) + tail)
    verts = []
    for k in range(dim + 1):
        v = [0] * (dim + 1)
        v[k] = degree
        verts.append(tuple(v))
    rest = sorted(p for p in pts if p not in verts)
    return np.array(verts + rest, dtype=int)


def master_vertices(dim: int) -> np.ndarray:
    return np.vstack([np.zeros(dim), np.eye(dim)])


def equilateral_vertices(dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])
    if dim == 3:
        return np.array(
            [
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, math.sqrt(3.0) / 2.0, 0.0],
                [0.5, math.sqrt(3.0) / 6.0, math.sqrt(2.0 / 3.0)],
            ]
        )
    raise ValueError(f"unsupported dimension {dim}")


def simplex_measure(dim: int) -> float:
    return 1.0 / math.factorial(dim)


def equilateral_measure(dim: int) -> float:
    return float(abs(np.linalg.det(equilateral_jacobian(dim))) * simplex_measure(dim))


def equilateral_jacobian(dim: int) -> np.ndarray:
    """Constant Jacobian of the affine map master -> unit-edge equilateral simplex."""
    v = equilateral_vertices(dim)
    return (v[1:] - v[0]).T


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@cache
def _collapsed_rule(dim: int, order: int) -> QuadratureRule:
    # Conical product of Gauss-Jacobi rules (Duffy collapse of the unit cube);
    # n points per direction integrate total degree 2n - 1 exactly.
    n = max(1, math.ceil((order + 1) / 2))
    one_d = []
    for k in range(dim):
        alpha = dim - 1 - k
        x, w = roots_jacobi(n, alpha, 0.0)
        u = 0.5 * (1.0 + x)
        w = w / 2.0 ** (alpha + 1)
        one_d.append((u, w))
    pts, wts = [], []
    for combo in itertools.product(range(n), repeat=dim):
        t = [one_d[k][0][combo[k]] for k in range(dim)]
        w = math.prod(one_d[k][1][combo[k]] for k in range(dim))
        xi = np.empty(dim)
        scale = 1.0
        for k in range(dim):
            xi[k] = t[k] * scale
            scale *= 1.0 - t[k]
        pts.append(xi)
        wts.append(w)
    return QuadratureRule(np.array(pts), np.array(wts), order)


def quadrature_for(dim: int, degree: int) -> QuadratureRule:
    """Rule on the master simplex exact for polynomials of order ``2*degree + 2``."""
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    return _collapsed_rule(dim, 2 * degree + 2)


def quadrature_of_order(dim: int, order: int) -> QuadratureRule:
    return _collapsed_rule(dim, order)


def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class ReferenceSimplex:
    """Degree-``p`` nodal simplex on the master element.

    Shape functions use the product form on barycentric coordinates, so
    ``phi_i`` is exactly 1 at lattice node ``i`` and 0 at the others.
    """

    dim: int
    degree: int
    multi_indices: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def vertex_ids(self) -> np.ndarray:
        return np.arange(self.dim + 1)

    def _factor_tables(self, lam: np.ndarray):
        # F[k, m, pt] = prod_{j<m} (p*lam_k - j)/(j+1) and its d/dlam_k
        p = self.degree
        npts = lam.shape[0]
        F = np.ones((self.dim + 1, p + 1, npts))
        dF = np.zeros((self.dim + 1, p + 1, npts))
        for k in range(self.dim + 1):
            t = p * lam[:, k]
            for m in range(1, p + 1):
                fac = (t - (m - 1)) / m
                F[k, m] = F[k, m - 1] * fac
                dF[k, m] = dF[k, m - 1] * fac + F[k, m - 1] * (p / m)
        return F, dF

    def _barycentric(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        return np.column_stack([1.0 - xi.sum(axis=1), xi])

    def shape(self, xi: np.ndarray) -> np.ndarray:
        """Shape function values, shape (n_points, n_nodes)."""
        lam = self._barycentric(xi)
        F, _ = self._factor_tables(lam)
        out = np.ones((lam.shape[0], self.n_nodes))
        for i, alpha in enumerate(self.multi_indices):
            for k, a in enumerate(alpha):
                out[:, i] *= F[k, a]
        return out

    def grad(self, xi: np.ndarray) -> np.ndarray:
        """Shape function gradients w.r.t. master coordinates, (n_points, n_nodes, dim)."""
        lam = self._barycentric(xi)
        F, dF = self._factor_tables(lam)
        npts = lam.shape[0]
        dlam = np.zeros((npts, self.n_nodes, self.dim + 1))
        for i, alpha in enumerate(self.multi_indices):
            for k in range(self.dim + 1):
                term = dF[k, alpha[k]].copy()
                for j, a in enumerate(alpha):
                    if j != k:
                        term *= F[j, a]
                dlam[:, i, k] = term
        # lam_0 = 1 - sum(xi), lam_k = xi_k
        return dlam[:, :, 1:] - dlam[:, :, :1]

    def subsimplices(self) -> np.ndarray:
        """Split the node lattice into ``degree**dim`` straight sub-simplices (local ids)."""
        return _lattice_subsimplices(self.dim, self.degree)

    def local_edges(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.dim + 1), 2))

    def local_faces(self) -> list[tuple[int, int, int]]:
        return list(itertools.combinations(range(self.dim + 1), 3))


@cache
def _lattice_subsimplices(dim: int, degree: int) -> np.ndarray:
    alphas = lattice_indices(dim, degree)
    lookup = {tuple(a[1:]): i for i, a in enumerate(alphas)}
    # u_j = sum_{k>=j} a_k maps the lattice onto one Kuhn simplex of [0,p]^d
    def to_u(tail):
        return tuple(sum(tail[j:]) for j in range(dim))

    def from_u(u):
        return tuple(u[j] - (u[j + 1] if j + 1 < dim else 0) for j in range(dim))

    cells = []
    for base in itertools.product(range(degree), repeat=dim):
        for perm in itertools.permutations(range(dim)):
            verts = [tuple(base)]
            cur = list(base)
            for ax in perm:
                cur[ax] += 1
                verts.append(tuple(cur))
            ok = all(
                u[0] <= degree and all(u[j] >= u[j + 1] for j in range(dim - 1)) and u[-1] >= 0
                for u in verts
            )
            if ok:
                cells.append([lookup[from_u(u)] for u in verts])
    cells = np.array(cells, dtype=int)
    # orient positively in master coordinates
    nodes = alphas[:, 1:].astype(float)
    for c in cells:
        m = (nodes[c[1:]] - nodes[c[0]]).T
        if np.linalg.det(m) < 0:
            c[[0, 1]] = c[[1, 0]]
    assert len(cells) == degree**dim
    return cells


@cache
def build_reference_simplex(dim: int, degree: int) -> ReferenceSimplex:
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported degree {degree}")
    alphas = lattice_indices(dim, degree)
    nodes = alphas[:, 1:] / float(degree)
    return ReferenceSimplex(dim, degree, alphas, nodes)


def n_lattice_nodes(dim: int, degree: int) -> int:
    return math.comb(degree + dim, dim)


def physical_map(ref: ReferenceSimplex, element_coords: np.ndarray, xi: np.ndarray):
    """Point and Jacobian of the isoparametric map at master points ``xi``.

    Returns ``(points, jacobians)`` with shapes (n, d) and (n, d, d); a single
    point input gives unbatched outputs.
    """
    single = np.ndim(xi) == 1
    xi = np.atleast_2d(xi)
    N = ref.shape(xi)
    G = ref.grad(xi)
    pts = N @ element_coords
    jac = np.einsum("ia,qib->qab", element_coords, G)
    if single:
        return pts[0], jac[0]
    return pts, jac
