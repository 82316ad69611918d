"""High-order simplicial meshes, boundary classification and the free-DOF map."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .reference import (
    ReferenceSimplex,
    build_reference_simplex,
    equilateral_jacobian,
    lattice_indices,
    physical_map,
    quadrature_for,
)

INTERIOR = "interior"
SLIDE = "slide"
VERTEX = "vertex"


@dataclass(frozen=True, eq=False)
class HighOrderMesh:
    """Nodal mesh of degree ``degree``.

    ``fixed[i, a]`` marks coordinate ``a`` of node ``i`` as held fixed; an
    interior node has no fixed axis, a slide node at least one and a vertex
    node all of them.
    """

    dim: int
    degree: int
    coords: np.ndarray
    elements: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        fixed = np.ascontiguousarray(self.fixed, dtype=bool)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "fixed", fixed)
        k = len(coords)
        if coords.shape != (k, self.dim):
            raise ValueError("coords must have shape (n_nodes, dim)")
        if fixed.shape != coords.shape:
            raise ValueError("fixed mask must match coords")
        if elements.ndim != 2 or elements.shape[1] != self.ref.n_nodes:
            raise ValueError(f"elements need {self.ref.n_nodes} node ids each")
        if elements.size and (elements.min() < 0 or elements.max() >= k):
            raise ValueError("element node id out of range")
        srt = np.sort(elements, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise ValueError("element with repeated node id")

    @property
    def ref(self) -> ReferenceSimplex:
        return build_reference_simplex(self.dim, self.degree)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def node_class(self, i: int) -> str:
        nf = int(self.fixed[i].sum())
        if nf == 0:
            return INTERIOR
        return VERTEX if nf == self.dim else SLIDE

    def node_classes(self) -> list[str]:
        return [self.node_class(i) for i in range(self.n_nodes)]

    def element_coords(self, coords: np.ndarray | None = None) -> np.ndarray:
        c = self.coords if coords is None else coords
        return c[self.elements]

    def with_coords(self, coords: np.ndarray) -> HighOrderMesh:
        return HighOrderMesh(self.dim, self.degree, coords, self.elements, self.fixed)

    def relabel(self, node_perm: np.ndarray) -> HighOrderMesh:
        """New mesh whose node ``j`` is old node ``node_perm[j]``."""
        node_perm = np.asarray(node_perm, dtype=np.int64)
        inv = np.empty_like(node_perm)
        inv[node_perm] = np.arange(len(node_perm))
        return HighOrderMesh(
            self.dim, self.degree, self.coords[node_perm], inv[self.elements], self.fixed[node_perm]
        )

    def jacobian_determinants(self, coords: np.ndarray | None = None, rule=None) -> np.ndarray:
        """det(D phi_P) at every quadrature point, shape (n_elements, n_qp)."""
        rule = rule or quadrature_for(self.dim, self.degree)
        X = self.element_coords(coords)
        G = self.ref.grad(rule.points)
        J = np.einsum("eia,qib->eqab", X, G)
        return np.linalg.det(J)

    def is_valid(self, coords: np.ndarray | None = None) -> bool:
        return bool(np.all(self.jacobian_determinants(coords) > 0))

    def vertex_edges(self) -> np.ndarray:
        """Unique element edges as sorted pairs of global vertex-node ids."""
        return _unique_sorted(self.elements, list(itertools.combinations(range(self.dim + 1), 2)))

    def vertex_faces(self) -> np.ndarray:
        return _unique_sorted(self.elements, list(itertools.combinations(range(self.dim + 1), 3)))


def _unique_sorted(elements: np.ndarray, local: list[tuple[int, ...]]) -> np.ndarray:
    keys = np.concatenate([np.sort(elements[:, list(c)], axis=1) for c in local])
    return np.unique(keys, axis=0)


def classify_box(coords: np.ndarray, lo, hi, tol: float = 1e-10) -> np.ndarray:
    """Fixed-axis mask for an axis-aligned box: coordinate ``a`` is fixed on a face normal to ``a``."""
    coords = np.asarray(coords, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), coords.shape[1:])
    hi = np.broadcast_to(np.asarray(hi, dtype=float), coords.shape[1:])
    scale = tol * np.maximum(1.0, hi - lo)
    return (np.abs(coords - lo) <= scale) | (np.abs(coords - hi) <= scale)


def _cell_simplices(dim: int) -> list[np.ndarray]:
    """Positively oriented split of the unit square/cube into 2 triangles or 6 tets."""
    out = []
    for perm in itertools.permutations(range(dim)):
        verts = [np.zeros(dim, dtype=int)]
        for ax in perm:
            v = verts[-1].copy()
            v[ax] = 1
            verts.append(v)
        verts = np.array(verts)
        if np.linalg.det((verts[1:] - verts[0]).T.astype(float)) < 0:
            verts[[-2, -1]] = verts[[-1, -2]]
        out.append(verts)
    return out


def generate_structured_mesh(
    dim: int = 2,
    subdivisions: int | tuple[int, ...] = 16,
    degree: int = 1,
    lo=-0.5,
    hi=0.5,
) -> HighOrderMesh:
    """Straight-sided mesh of the box ``[lo, hi]`` with ``subdivisions`` node intervals per side.

    The node grid is the same for every degree: each block of ``degree**dim``
    grid cells becomes one Kuhn-split cell whose simplices carry the
    equispaced lattice, so meshes of different degree share the node count.
    """
    n = np.broadcast_to(np.asarray(subdivisions, dtype=int), (dim,))
    if np.any(n < 1):
        raise ValueError("subdivisions must be >= 1")
    if np.any(n % degree):
        raise ValueError(f"subdivisions {n.tolist()} must be multiples of the degree ({degree})")
    ref = build_reference_simplex(dim, degree)
    cells = n // degree
    alphas = lattice_indices(dim, degree)
    strides = np.cumprod(np.concatenate([[1], (n + 1)[::-1][:-1]]))[::-1]

    elems = []
    for base in itertools.product(*(range(c) for c in cells)):
        corner = np.array(base) * degree
        for verts in _cell_simplices(dim):
            # lattice node = corner + sum_k alpha_k * verts_k (grid units)
            grid = corner + alphas @ verts
            elems.append(grid @ strides)
    elements = np.array(elems, dtype=np.int64)

    axes = [np.arange(k + 1) for k in n]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    lo_v = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi_v = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    coords = lo_v + (hi_v - lo_v) * idx / n
    fixed = (idx == 0) | (idx == n)
    assert elements.shape[1] == ref.n_nodes
    return HighOrderMesh(dim, degree, coords, elements, fixed)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Interleaved free degrees of freedom: node-major, axis-minor."""

    free_index: np.ndarray  # (n_nodes, dim), -1 for fixed coordinates
    nodes: np.ndarray = field(repr=False)  # node of each free DOF
    axes: np.ndarray = field(repr=False)  # axis of each free DOF

    @property
    def n(self) -> int:
        return len(self.nodes)

    def gather(self, coords: np.ndarray) -> np.ndarray:
        return coords[self.nodes, self.axes].copy()

    def scatter(self, x: np.ndarray, coords: np.ndarray) -> np.ndarray:
        out = np.array(coords, dtype=float, copy=True)
        out[self.nodes, self.axes] = x
        return out

    def element_dofs(self, elements: np.ndarray) -> np.ndarray:
        """Per-element local-to-free map, shape (n_elements, n_p * dim), -1 where fixed."""
        m = len(elements)
        return self.free_index[elements].reshape(m, -1)


def build_dof_map(mesh: HighOrderMesh, node_order: np.ndarray | None = None) -> DofMap:
    order = np.arange(mesh.n_nodes) if node_order is None else np.asarray(node_order)
    free = ~mesh.fixed[order]
    nodes = np.repeat(order, mesh.dim).reshape(-1, mesh.dim)[free]
    axes = np.tile(np.arange(mesh.dim), (len(order), 1))[free]
    free_index = np.full((mesh.n_nodes, mesh.dim), -1, dtype=np.int64)
    free_index[nodes, axes] = np.arange(len(nodes))
    return DofMap(free_index, nodes, axes)


def equilateral_map(ref: ReferenceSimplex) -> np.ndarray:
    return equilateral_jacobian(ref.dim)


__all__ = [
    "INTERIOR",
    "SLIDE",
    "VERTEX",
    "DofMap",
    "HighOrderMesh",
    "build_dof_map",
    "classify_box",
    "equilateral_map",
    "generate_structured_mesh",
    "physical_map",
]
