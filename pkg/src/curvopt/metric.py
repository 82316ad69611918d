"""Analytic anisotropic target metrics built from shear layers and deformation maps.

Every metric here is stored through a square-root factor ``Q(p)`` with
``M(p) = Q(p)^T Q(p)`` and ``det Q > 0``.  For a shear layer composed with a
deformation ``phi`` the factor is ``Q = S(phi(p)) grad(phi)(p)``, where ``S`` is
diagonal with entries ``1/h`` on the stretched axes.  Derivatives of ``Q`` with
respect to the point are needed up to second order by the objective Hessian.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MetricFactor:
    """``Q`` (n,d,d), ``dQ[n,a,b,k] = dQ_ab/dp_k`` and ``d2Q[n,a,b,k,l]``."""

    Q: np.ndarray
    dQ: np.ndarray | None = None
    d2Q: np.ndarray | None = None


class Metric:
    """Interface: subclasses set ``dim``/``name`` and implement :meth:`factor`."""

    def factor(self, points: np.ndarray, order: int = 0) -> MetricFactor:
        raise NotImplementedError

    def __call__(self, points: np.ndarray) -> np.ndarray:
        single = np.ndim(points) == 1
        Q = self.factor(np.atleast_2d(points)).Q
        M = np.einsum("nca,ncb->nab", Q, Q)
        return M[0] if single else M


class UniformMetric(Metric):
    """Constant metric, e.g. the identity."""

    def __init__(self, matrix: np.ndarray, name: str = "uniform"):
        matrix = np.asarray(matrix, dtype=float)
        if not np.allclose(matrix, matrix.T):
            raise ValueError("metric must be symmetric")
        self.dim = matrix.shape[0]
        self.name = name
        self._Q = np.linalg.cholesky(matrix).T

    def factor(self, points, order=0):
        n = len(points)
        d = self.dim
        Q = np.broadcast_to(self._Q, (n, d, d)).copy()
        dQ = np.zeros((n, d, d, d)) if order >= 1 else None
        d2Q = np.zeros((n, d, d, d, d)) if order >= 2 else None
        return MetricFactor(Q, dQ, d2Q)


def identity_metric(dim: int) -> UniformMetric:
    return UniformMetric(np.eye(dim), name="Identity")


# -- deformation maps ---------------------------------------------------------


@dataclass(frozen=True)
class Component:
    """One output of a deformation map.

    ``kind == "id"``: the coordinate ``axis``.  ``kind == "g"``:
    ``scale * g(x[u], x[v], x[w])`` with ``g(a,b,c) = 10a - cos(2 pi b) cos(2 pi c)``;
    a ``None`` argument is the constant 1.
    """

    kind: str
    axis: int = 0
    args: tuple = ()
    scale: float = 1.0


def _cos_derivs(t: np.ndarray) -> list[np.ndarray]:
    c, s = np.cos(TWO_PI * t), np.sin(TWO_PI * t)
    k = TWO_PI
    return [c, -k * s, -k * k * c, k**3 * s]


def _component_derivs(comp: Component, pts: np.ndarray, order: int):
    n, d = pts.shape
    out = [np.zeros((n,) + (d,) * r) for r in range(order + 1)]
    if comp.kind == "id":
        out[0] = pts[:, comp.axis].copy()
        if order >= 1:
            out[1][:, comp.axis] = 1.0
        return out
    iu, iv, iw = comp.args
    cv = _cos_derivs(pts[:, iv])
    if iw is None:
        cw = [np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n)]
    else:
        cw = _cos_derivs(pts[:, iw])
    out[0] = 10.0 * pts[:, iu] - cv[0] * cw[0]
    for r in range(1, order + 1):
        for idx in itertools.product(range(d), repeat=r):
            m = sum(1 for a in idx if a == iv)
            q = sum(1 for a in idx if iw is not None and a == iw)
            if m + q != r:
                continue
            out[r][(slice(None),) + idx] = -cv[m] * cw[q]
        if r == 1:
            out[1][:, iu] += 10.0
    return [comp.scale * a for a in out]


@dataclass(frozen=True)
class Deformation:
    name: str
    components: tuple[Component, ...]

    @property
    def dim(self) -> int:
        return len(self.components)

    def evaluate(self, points: np.ndarray, order: int = 1) -> list[np.ndarray]:
        """``[phi, Dphi, D2phi, D3phi][:order+1]``; ``Dphi[n,a,k] = d phi_a / d x_k``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        per = [_component_derivs(c, pts, order) for c in self.components]
        return [np.stack([p[r] for p in per], axis=1) for r in range(order + 1)]

    def __call__(self, points):
        return self.evaluate(points, 0)[0]

    def gradient(self, points):
        return self.evaluate(points, 1)[1]


def identity_map(dim: int) -> Deformation:
    return Deformation("identity", tuple(Component("id", axis=a) for a in range(dim)))


# -- shear layers ---------------------------------------------------------------


def size_h(t, h_min: float, gamma: float):
    return h_min + gamma * np.abs(t)


def stretch_H(t, h_min: float, gamma: float):
    return np.log(size_h(t, h_min, gamma) / h_min) / gamma


@dataclass(frozen=True)
class ShearLayerSpec(Metric):
    name: str
    kind: str  # "line" | "cross"
    h_min: float
    gamma: float
    deformation: Deformation
    scale: float = 1.0
    dim: int = field(init=False)

    def __post_init__(self):
        if self.kind not in ("line", "cross"):
            raise ValueError(f"unknown shear layer kind {self.kind!r}")
        if self.h_min <= 0 or self.gamma <= 0:
            raise ValueError("h_min and gamma must be positive")
        object.__setattr__(self, "dim", self.deformation.dim)

    def stretched_axes(self) -> list[int]:
        return [self.dim - 1] if self.kind == "line" else list(range(self.dim))

    def size_h(self, t):
        return size_h(t, self.h_min, self.gamma)

    def stretch_H(self, t):
        return stretch_H(t, self.h_min, self.gamma)

    def diagonal_metric(self, q: np.ndarray) -> np.ndarray:
        """Shear-layer diagonal evaluated at (already deformed) coordinates ``q``."""
        q = np.asarray(q, dtype=float)
        diag = np.ones_like(q)
        for a in self.stretched_axes():
            diag[..., a] = 1.0 / self.size_h(q[..., a]) ** 2
        diag *= self.scale**2
        return diag[..., :, None] * np.eye(self.dim)

    def _scale_derivs(self, t: np.ndarray):
        h = self.size_h(t)
        g = self.gamma
        return 1.0 / h, -g * np.sign(t) / h**2, 2.0 * g * g / h**3

    def factor(self, points, order=0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = pts.shape
        derivs = self.deformation.evaluate(pts, order + 1)
        phi, D1 = derivs[0], derivs[1]
        s = np.ones((n, d))
        s1 = np.zeros((n, d))
        s2 = np.zeros((n, d))
        for a in self.stretched_axes():
            s[:, a], s1[:, a], s2[:, a] = self._scale_derivs(phi[:, a])
        c = self.scale
        Q = c * s[:, :, None] * D1
        dQ = d2Q = None
        if order >= 1:
            D2 = derivs[2]
            # dQ_ab/dp_k = s'(phi_a) dphi_a/dk dphi_a/db + s(phi_a) d2phi_a/dbdk
            dQ = c * (
                s1[:, :, None, None] * D1[:, :, :, None] * D1[:, :, None, :]
                + s[:, :, None, None] * D2
            )
        if order >= 2:
            D3 = derivs[3]
            t1 = s2[:, :, None, None, None] * (
                D1[:, :, :, None, None] * D1[:, :, None, :, None] * D1[:, :, None, None, :]
            )
            t2 = s1[:, :, None, None, None] * (
                D2[:, :, None, :, :] * D1[:, :, :, None, None]
                + D1[:, :, None, :, None] * D2[:, :, :, None, :]
                + D1[:, :, None, None, :] * D2[:, :, :, :, None]
            )
            t3 = s[:, :, None, None, None] * D3
            d2Q = c * (t1 + t2 + t3)
        # keep det Q > 0 (only M = Q^T Q matters)
        neg = np.linalg.det(Q) < 0
        if np.any(neg):
            Q[neg, 0] *= -1
            if dQ is not None:
                dQ[neg, 0] *= -1
            if d2Q is not None:
                d2Q[neg, 0] *= -1
        return MetricFactor(Q, dQ, d2Q)

    def metric_eval(self, p):
        return self(p)


def _g(u, v, w, scale=1.0):
    return Component("g", args=(u, v, w), scale=scale)


def builtin_metrics() -> dict[str, ShearLayerSpec]:
    """The six analytic test metrics (gamma = 2; h_min = 1/100 in 2D, 1/50 in 3D)."""
    c2 = 1.0 / math.sqrt(100.0 + 4.0 * math.pi**2)
    c3 = 1.0 / math.sqrt(100.0 + 8.0 * math.pi**2)
    x, y, z = 0, 1, 2
    maps = {
        "Line": ("line", 0.01, identity_map(2)),
        "Curve": (
            "line",
            0.01,
            Deformation("curve", (Component("id", axis=x), _g(y, x, None, c2))),
        ),
        "Curves": (
            "cross",
            0.01,
            Deformation("curves", (_g(x, y, None), _g(y, x, None))),
        ),
        "Plane": ("line", 0.02, identity_map(3)),
        "Surface": (
            "line",
            0.02,
            Deformation(
                "surface",
                (Component("id", axis=x), Component("id", axis=y), _g(z, y, x, c3)),
            ),
        ),
        "Surfaces": (
            "cross",
            0.02,
            Deformation("surfaces", (_g(x, y, z), _g(y, z, x), _g(z, y, x))),
        ),
    }
    return {
        name: ShearLayerSpec(name, kind, h, 2.0, deform)
        for name, (kind, h, deform) in maps.items()
    }


def adapted_plane_metric(h_min: float = 0.01, h_m: float = 0.1) -> ShearLayerSpec:
    """Plane layer scaled to a background size ``h_m`` (growth 2(1 - h_min))."""
    return ShearLayerSpec("AdaptedPlane", "line", h_min, 2.0 * (1.0 - h_min), identity_map(3), 1.0 / h_m)


def get_metric(name: str, dim: int | None = None) -> Metric:
    if name.lower() == "identity":
        if dim is None:
            raise ValueError("identity metric needs a dimension")
        return identity_metric(dim)
    if name == "AdaptedPlane":
        return adapted_plane_metric()
    table = builtin_metrics()
    if name not in table:
        raise KeyError(f"unknown metric {name!r}; choose from {sorted(table)} or Identity")
    return table[name]


def _check_spd(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=1e-12, atol=0.0):
        raise ValueError("matrix is not symmetric")
    lam = np.linalg.eigvalsh(M)
    if lam[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return lam


def aniso_ratio(M) -> float:
    lam = _check_spd(M)
    return math.sqrt(lam[-1] / lam[0])


def aniso_quotient(M) -> float:
    lam = _check_spd(M)
    # sqrt(det M) / lam_min^(d/2), written so every factor is >= 1 in floating point
    return math.sqrt(float(np.prod(lam / lam[0])))


def max_anisotropy(metric: Metric, samples: Sequence[int] | int = 201) -> tuple[float, float]:
    """Maximum ratio and quotient over a regular sampling of [-0.5, 0.5]^d."""
    d = metric.dim
    n = samples if isinstance(samples, int) else samples[0]
    axes = [np.linspace(-0.5, 0.5, n)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    lam = np.linalg.eigvalsh(metric(pts))
    ratio = np.sqrt(lam[:, -1] / lam[:, 0])
    quo = np.sqrt(np.prod(lam / lam[:, :1], axis=1))
    return float(ratio.max()), float(quo.max())
