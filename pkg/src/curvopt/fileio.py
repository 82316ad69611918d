"""Plain ASCII mesh format and legacy VTK export."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import HighOrderMesh
from .metric import Metric
from .reference import _lattice_subsimplices, lattice_indices

VTK_LAGRANGE_TRIANGLE = 69
VTK_LAGRANGE_TETRAHEDRON = 71
VTK_TRIANGLE = 5
VTK_TETRA = 10


class MeshFormatError(ValueError):
    pass


def write_mesh(mesh: HighOrderMesh, path, coords: np.ndarray | None = None) -> None:
    coords = mesh.coords if coords is None else coords
    lines = [f"{mesh.dim} {mesh.degree} {mesh.n_nodes} {mesh.n_elements}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in coords]
    lines += [" ".join(str(int(v)) for v in row) for row in mesh.elements]
    for row in mesh.fixed:
        nf = int(row.sum())
        if nf == 0:
            lines.append("i")
        elif nf == mesh.dim:
            lines.append("v")
        else:
            lines.append("s " + " ".join(str(a) for a in np.flatnonzero(row)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, check_validity: bool = True) -> HighOrderMesh:
    """Load a mesh; raise :class:`MeshFormatError` on malformed or invalid input."""
    try:
        raw = Path(path).read_text().split("\n")
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    lines = [ln.strip() for ln in raw if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        dim, degree, k, m = (int(t) for t in lines[0].split())
        coords = np.array([[float(t) for t in lines[1 + i].split()] for i in range(k)])
        elems = np.array([[int(t) for t in lines[1 + k + e].split()] for e in range(m)], dtype=np.int64)
        fixed = np.zeros((k, dim), dtype=bool)
        for i in range(k):
            tok = lines[1 + k + m + i].split()
            if tok[0] == "v":
                fixed[i] = True
            elif tok[0] == "s":
                axes = [int(a) for a in tok[1:]]
                if not axes or any(a < 0 or a >= dim for a in axes):
                    raise MeshFormatError(f"bad slide axes on node {i}")
                fixed[i, axes] = True
            elif tok[0] != "i":
                raise MeshFormatError(f"unknown node class {tok[0]!r} on node {i}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"malformed mesh file {path}: {exc}") from exc
    if coords.shape != (k, dim) or (m and elems.ndim != 2):
        raise MeshFormatError("inconsistent node or element block")
    try:
        mesh = HighOrderMesh(dim, degree, coords, elems.reshape(m, -1), fixed)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from exc
    if check_validity and not mesh.is_valid():
        dets = mesh.jacobian_determinants()
        bad = np.flatnonzero(np.any(dets <= 0, axis=1))
        raise MeshFormatError(
            f"invalid mesh: non-positive Jacobian in {len(bad)} element(s), first {bad[:5].tolist()}"
        )
    return mesh


# -- VTK --------------------------------------------------------------------------


def _vtk_triangle_order(n: int, verts) -> list[tuple]:
    """Barycentric multi-indices (over ``verts``) in VTK Lagrange triangle order."""
    if n < 0:
        return []
    if n == 0:
        return [(0, 0, 0)]
    out = []
    for v in range(3):
        a = [0, 0, 0]
        a[v] = n
        out.append(tuple(a))
    for v0, v1 in ((0, 1), (1, 2), (2, 0)):
        for i in range(1, n):
            a = [0, 0, 0]
            a[v0], a[v1] = n - i, i
            out.append(tuple(a))
    for a in _vtk_triangle_order(n - 3, verts):
        out.append(tuple(x + 1 for x in a))
    return out


def _vtk_tetra_order(n: int) -> list[tuple]:
    if n < 0:
        return []
    if n == 0:
        return [(0, 0, 0, 0)]
    out = []
    for v in range(4):
        a = [0] * 4
        a[v] = n
        out.append(tuple(a))
    for v0, v1 in ((0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)):
        for i in range(1, n):
            a = [0] * 4
            a[v0], a[v1] = n - i, i
            out.append(tuple(a))
    for face in ((0, 1, 3), (1, 2, 3), (2, 0, 3), (0, 2, 1)):
        for t in _vtk_triangle_order(n - 3, face):
            a = [0] * 4
            for slot, vid in enumerate(face):
                a[vid] = t[slot] + 1
            out.append(tuple(a))
    for a in _vtk_tetra_order(n - 4):
        out.append(tuple(x + 1 for x in a))
    return out


def vtk_lagrange_permutation(dim: int, degree: int) -> np.ndarray:
    """Local node ids listed in VTK Lagrange order."""
    alphas = lattice_indices(dim, degree)
    lookup = {tuple(a): i for i, a in enumerate(alphas)}
    order = _vtk_triangle_order(degree, (0, 1, 2)) if dim == 2 else _vtk_tetra_order(degree)
    return np.array([lookup[a] for a in order], dtype=np.int64)


def _write_unstructured(path, points, cells, cell_type, point_data=None, cell_data=None, title="curvopt"):
    d = points.shape[1]
    pts3 = np.zeros((len(points), 3))
    pts3[:, :d] = points
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {len(points)} double")
    out += [f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}" for p in pts3]
    size = sum(len(c) + 1 for c in cells)
    out.append(f"CELLS {len(cells)} {size}")
    out += [" ".join(map(str, (len(c), *c))) for c in cells]
    out.append(f"CELL_TYPES {len(cells)}")
    out += [str(cell_type)] * len(cells)
    for header, data in (("POINT_DATA", point_data), ("CELL_DATA", cell_data)):
        if data:
            n = len(next(iter(data.values())))
            out.append(f"{header} {n}")
            for name, vals in data.items():
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out += [f"{v:.16g}" for v in vals]
    Path(path).write_text("\n".join(out) + "\n")


def write_vtk_lagrange(mesh: HighOrderMesh, path, coords=None, cell_data: dict | None = None) -> None:
    coords = mesh.coords if coords is None else coords
    perm = vtk_lagrange_permutation(mesh.dim, mesh.degree)
    cells = mesh.elements[:, perm].tolist()
    ctype = VTK_LAGRANGE_TRIANGLE if mesh.dim == 2 else VTK_LAGRANGE_TETRAHEDRON
    _write_unstructured(path, coords, cells, ctype, cell_data=cell_data)


def write_vtk_quality(
    mesh: HighOrderMesh, metric: Metric, path, coords=None, subdivisions: int | None = None
) -> np.ndarray:
    """Linear sub-cells with point-wise quality 1/eta; returns the sampled qualities."""
    from .distortion import _Kernel  # local import to keep the module graph acyclic
    from .reference import QuadratureRule

    coords = mesh.coords if coords is None else coords
    s = subdivisions or mesh.degree + 1
    d = mesh.dim
    xi = lattice_indices(d, s)[:, 1:] / float(s)
    sub = _lattice_subsimplices(d, s)
    rule = QuadratureRule(xi, np.ones(len(xi)), 0)
    kern = _Kernel(mesh, metric, rule)
    X = mesh.element_coords(coords)
    eta = kern.eta(X)  # (e, n_sample)
    quality = np.where(np.isfinite(eta), 1.0 / eta, 0.0)
    pts = np.einsum("qi,eia->eqa", kern.N, X).reshape(-1, d)
    nloc = len(xi)
    cells = (np.arange(len(X))[:, None, None] * nloc + sub[None]).reshape(-1, d + 1).tolist()
    ctype = VTK_TRIANGLE if d == 2 else VTK_TETRA
    _write_unstructured(path, pts, cells, ctype, point_data={"quality": quality.ravel()})
    return quality


def read_vtk(path) -> dict:
    """Minimal parser for the legacy files written here (used by tests and tooling)."""
    tok = Path(path).read_text().split("\n")
    out: dict = {"point_data": {}, "cell_data": {}}
    i = 4
    section = None
    while i < len(tok):
        line = tok[i].strip()
        if not line:
            i += 1
            continue
        head = line.split()
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in tok[i + 1 + j].split()] for j in range(n)])
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = [[int(v) for v in tok[i + 1 + j].split()[1:]] for j in range(n)]
            i += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["cell_types"] = [int(tok[i + 1 + j]) for j in range(n)]
            i += n + 1
        elif head[0] in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if head[0] == "POINT_DATA" else "cell_data"
            count = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            name = head[1]
            out[section][name] = np.array([float(tok[i + 2 + j]) for j in range(count)])
            i += count + 2
        else:
            i += 1
    return out
