"""Forcing terms for the inexact Newton solve: constant baseline and restricted-Newton sequences."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

ETA_MAX = 0.5
TAU_MAX = 0.01
STANDARD_ETA = 1e-9
STANDARD_TAU = 0.0
PARALLEL_TOL = 1e-12


def standard_forcing() -> tuple[float, float]:
    return STANDARD_ETA, STANDARD_TAU


def gram_schmidt_2(v1: np.ndarray, v2: np.ndarray, tol: float = PARALLEL_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of span{v1, v2}; one column when v2 is parallel to v1."""
    n1 = np.linalg.norm(v1)
    if n1 == 0:
        raise ValueError("first vector vanishes")
    q1 = v1 / n1
    n2 = np.linalg.norm(v2)
    if n2 == 0:
        return q1[:, None]
    w = v2 - (q1 @ v2) * q1
    w -= (q1 @ w) * q1  # second pass for accuracy
    nw = np.linalg.norm(w)
    if nw <= tol * n2:
        return q1[:, None]
    return np.column_stack([q1, w / nw])


def restricted_newton(g: np.ndarray, H, Z: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve ``(Z^T H Z) q = -Z^T g``; return ``q`` and its normalized curvature.

    ``H`` may be a matrix or a (counting) matvec callable; one product per column of ``Z``.
    """
    matvec = H if callable(H) else (lambda v, _H=H: _H @ v)
    HZ = np.column_stack([matvec(Z[:, j]) for j in range(Z.shape[1])])
    Ht = Z.T @ HZ
    Ht = 0.5 * (Ht + Ht.T)
    gt = Z.T @ g
    if np.linalg.cond(Ht) > 1e14:
        raise np.linalg.LinAlgError("restricted Hessian is singular")
    q = np.linalg.solve(Ht, -gt)
    qq = q @ q
    if qq == 0:
        raise np.linalg.LinAlgError("restricted Newton direction vanishes")
    return q, float(q @ Ht @ q / qq)


def incomplete_newton_curvature(g: np.ndarray, preconfun: Callable[[np.ndarray], np.ndarray]) -> float:
    """Curvature estimate ``q^T(-g) / q^T q`` with ``M q = -g``."""
    q = preconfun(-g)
    qq = q @ q
    if qq == 0:
        raise ValueError("incomplete Newton direction vanishes")
    return float(q @ (-g) / qq)


def limited_curvature_violated(pHp: float, pp: float, eps: float) -> bool:
    return abs(pHp) > 100.0 * eps * pp


def limited_curvature_check(p: np.ndarray, H, eps: float) -> bool:
    """True when ``|p^T H p| > 100 eps p^T p``."""
    Hp = H(p) if callable(H) else H @ p
    return limited_curvature_violated(float(p @ Hp), float(p @ p), eps)


@dataclass
class ForcingState:
    eta: float = ETA_MAX
    tau: float = TAU_MAX
    s0_norm: float | None = None
    kappa0: float | None = None
    eta_max: float = ETA_MAX
    tau_max: float = TAU_MAX
    failed0: bool = False


class SpecificForcing:
    """Residual and curvature forcing from restricted Newton directions.

    Quantities of iteration 0 are computed on the first update and cached.
    """

    def __init__(self, eta_max: float = ETA_MAX, tau_max: float = TAU_MAX):
        self.state = ForcingState(eta_max, tau_max, eta_max=eta_max, tau_max=tau_max)

    def update(self, s0, g0, H0, s, g, H) -> tuple[float, float]:
        st = self.state
        if st.kappa0 is None and not st.failed0:
            st.s0_norm = float(np.linalg.norm(s0))
            try:
                _, k0 = restricted_newton(g0, H0, gram_schmidt_2(-g0, s0))
                st.kappa0 = k0
            except (np.linalg.LinAlgError, ValueError):
                st.failed0 = True
        if st.failed0 or st.kappa0 == 0 or not st.s0_norm:
            return st.eta, st.tau
        try:
            q, k = restricted_newton(g, H, gram_schmidt_2(-g, s))
        except (np.linalg.LinAlgError, ValueError):
            return st.eta, st.tau
        eta = min(float(np.linalg.norm(q)) / st.s0_norm, st.eta_max)
        tau = min(abs(k) / abs(st.kappa0), st.tau_max, eta)
        st.eta, st.tau = eta, tau
        return eta, tau
