"""Shared constructions and finite-difference oracles for the test suite."""

import numpy as np

from curvopt.distortion import DistortionObjective
from curvopt.mesh import HighOrderMesh, build_dof_map, generate_structured_mesh
from curvopt.reference import equilateral_vertices


def perturbed_objective(dim, degree, metric, seed, amplitude=0.15, subdivisions=None):
    """Objective on a structured mesh with randomly displaced free nodes (kept valid)."""
    n = subdivisions or 2 * degree
    mesh = generate_structured_mesh(dim, n, degree)
    dm = build_dof_map(mesh)
    obj = DistortionObjective(mesh, dm, metric)
    rng = np.random.default_rng(seed)
    x0 = obj.initial_point()
    h = 1.0 / n
    amp = amplitude * h
    while True:
        x = x0 + rng.uniform(-amp, amp, dm.n)
        if obj.is_valid(x):
            return obj, x
        amp *= 0.5


def _node_patches(obj):
    """Objective restricted to the elements around each node; other elements cancel in a difference."""
    mesh = obj.mesh
    patches = {}
    for node in np.unique(obj.dofmap.nodes):
        inc = np.flatnonzero((mesh.elements == node).any(axis=1))
        sub = HighOrderMesh(mesh.dim, mesh.degree, mesh.coords, mesh.elements[inc], mesh.fixed)
        patches[node] = DistortionObjective(sub, obj.dofmap, obj.metric)
    return patches


def fd_gradient(obj, x, step=1e-6):
    """Central differences of the objective value, one DOF at a time."""
    patches = _node_patches(obj)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        sub = patches[obj.dofmap.nodes[i]]
        g[i] = (sub.value(x + e) - sub.value(x - e)) / (2 * step)
    return g


def fd_hessian(obj, x, step=1e-6):
    """Central differences of the analytic gradient, one column per DOF."""
    patches = _node_patches(obj)
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros_like(x)
        e[i] = step
        sub = patches[obj.dofmap.nodes[i]]
        gp = sub.evaluate(x + e, hessian=False).gradient
        gm = sub.evaluate(x - e, hessian=False).gradient
        H[:, i] = (gp - gm) / (2 * step)
    return H


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def hexagon_mesh(degree=1):
    """Six unit equilateral triangles around a free centre node (linear elements)."""
    assert degree == 1
    ang = np.arange(6) * np.pi / 3
    ring = np.column_stack([np.cos(ang), np.sin(ang)])
    coords = np.vstack([[0.0, 0.0], ring])
    elements = [[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)]
    fixed = np.ones((7, 2), bool)
    fixed[0] = False
    return HighOrderMesh(2, 1, coords, elements, fixed)


def equilateral_element_mesh(dim):
    v = equilateral_vertices(dim)
    return HighOrderMesh(dim, 1, v, [list(range(dim + 1))], np.ones_like(v, dtype=bool))
