"""Second-order optimization driver with exact or inexact Newton directions."""

from __future__ import annotations

import io
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .distortion import DistortionObjective, ObjectiveEval
from .forcing import (
    ETA_MAX,
    TAU_MAX,
    SpecificForcing,
    incomplete_newton_curvature,
    limited_curvature_violated,
    standard_forcing,
)
from .globalization import LineSearchConfig, LineSearchResult, specific_ls, standard_bls
from .linear import (
    ILDLT0,
    JACOBI,
    SWITCH_DELTA,
    CgOutcome,
    CountingOperator,
    cg,
    direct_solve,
    factorize,
    jacobi_precon,
)
from .mesh import HighOrderMesh, build_dof_map
from .metric import Metric
from .ordering import mdf_ordering, spectral_node_ordering

STANDARD = "standard"
SPECIFIC = "specific"
DIRECT = "direct"
ITERATIVE = "iterative"
BLS = "bls"
SPECIFIC_LS = "specific"


class InvalidMeshError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    mode: str = SPECIFIC
    linear: str = ITERATIVE
    rms_tol: float = 1e-4
    max_nonlinear: int = 5000
    ls_config: LineSearchConfig = field(default_factory=LineSearchConfig)
    delta: float = SWITCH_DELTA
    globalization: str | None = None  # bls | specific; follows the mode when unset
    spectral: bool | None = None  # node relabeling; follows the mode when unset
    mdf: bool | None = None  # factorization ordering; follows the mode when unset

    def __post_init__(self):
        if self.mode not in (STANDARD, SPECIFIC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.linear not in (DIRECT, ITERATIVE):
            raise ValueError(f"unknown linear solver {self.linear!r}")
        if not self.rms_tol > 0:
            raise ValueError("rms_tol must be positive")
        if not self.delta > 1:
            raise ValueError("delta must exceed 1")
        if self.max_nonlinear < 1:
            raise ValueError("max_nonlinear must be >= 1")
        if self.globalization not in (None, BLS, SPECIFIC_LS):
            raise ValueError(f"unknown globalization {self.globalization!r}")

    @property
    def line_search(self) -> str:
        if self.globalization is not None:
            return self.globalization
        return SPECIFIC_LS if self.mode == SPECIFIC else BLS

    @property
    def use_spectral(self) -> bool:
        return self.mode == SPECIFIC if self.spectral is None else self.spectral

    @property
    def use_mdf(self) -> bool:
        return self.mode == SPECIFIC if self.mdf is None else self.mdf


@dataclass
class TraceRow:
    iteration: int
    f: float  # objective after the step
    rms_residual: float  # after the step
    alpha: float
    rho: float
    ls_iters: int
    ls_evals: int
    cg_iters: int
    matvecs: int  # cumulative
    precon_kind: str
    cg_termination: str
    eta: float  # forcing values used for this direction
    tau: float
    accepted: bool


TRACE_COLUMNS = (
    "iteration",
    "f",
    "rms_residual",
    "alpha",
    "rho",
    "ls_iters",
    "cg_iters",
    "matvecs",
    "precon_kind",
    "cg_termination",
    "eta",
    "tau",
)


@dataclass
class SolverStats:
    nonlinear_iters: int = 0
    ls_iters: int = 0  # reduce/amplify loop iterations
    ls_evals: int = 0  # objective evaluations inside line searches
    matvec_products: int = 0
    cg_iters: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for r in self.trace:
            buf.write(
                f"{r.iteration},{r.f:.17g},{r.rms_residual:.17g},{r.alpha:.17g},{r.rho:.17g},"
                f"{r.ls_iters},{r.cg_iters},{r.matvecs},{r.precon_kind},{r.cg_termination},"
                f"{r.eta:.17g},{r.tau:.17g}\n"
            )
        return buf.getvalue()


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    stats: SolverStats
    f0: float
    f: float
    rms_residual: float
    coords: np.ndarray | None = None  # final node coordinates in the input numbering
    reason: str = ""


@dataclass
class Direction:
    p: np.ndarray
    kind: str
    termination: str
    cg_iters: int
    cg_calls: int = 1


class Problem(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def evaluate(self, x: np.ndarray, hessian: bool = True) -> ObjectiveEval: ...


def rms(g: np.ndarray) -> float:
    return float(np.linalg.norm(g) / math.sqrt(max(len(g), 1)))


def _sign_fix(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    slope = float(g @ p)
    if slope > 0:
        return -p
    if slope == 0:
        return -g  # no usable direction: fall back to steepest descent
    return p


def newton_direction_direct(g: np.ndarray, H) -> Direction:
    try:
        p = direct_solve(H, -g)
        term = "direct"
    except np.linalg.LinAlgError:
        p = -g
        term = "singular"
    return Direction(_sign_fix(p, g), "direct", term, 0, 0)


def newton_direction_standard(g: np.ndarray, H: CountingOperator, eta: float, tau: float) -> Direction:
    pre = jacobi_precon(H.H)
    out = cg(H, -g, pre, len(g), eta, tau)
    return Direction(_sign_fix(out.solution, g), JACOBI, out.termination, out.iterations)


def newton_direction_specific(
    g: np.ndarray,
    H: CountingOperator,
    sigma: np.ndarray | None,
    eta: float,
    tau: float,
    delta: float = SWITCH_DELTA,
) -> Direction:
    """Switched preconditioner, curvature forcing term from the incomplete Newton
    curvature, and a Jacobi rerun when a negative-curvature iLDL^T(0) result is
    not within the limited-curvature bound."""
    n = len(g)
    pre = factorize(H.H, sigma, ILDLT0, delta)
    eps = tau * abs(incomplete_newton_curvature(g, pre))
    out: CgOutcome = cg(H, -g, pre, n, eta, eps)
    p, kind, term, iters, calls = out.solution, pre.kind, out.termination, out.iterations, 1
    if pre.kind == ILDLT0:
        pHp = float(p @ H(p))
        if pHp < 0:
            jac = jacobi_precon(H.H)
            eps = tau * abs(incomplete_newton_curvature(g, jac))
            if limited_curvature_violated(pHp, float(p @ p), eps):
                out = cg(H, -g, jac, n, eta, eps)
                p, kind, term = out.solution, JACOBI, out.termination
                iters += out.iterations
                calls += 1
    return Direction(_sign_fix(p, g), kind, term, iters, calls)


def minimize(
    problem: Problem,
    x0: np.ndarray,
    config: SolverConfig = SolverConfig(),
    sigma=None,
    callback: Callable[[np.ndarray, TraceRow], None] | None = None,
) -> SolverResult:
    """Globalized (inexact) Newton iteration from ``x0``.

    In specific mode with ``config.use_mdf`` and no ``sigma`` given, the
    factorization ordering is computed once from the initial Hessian.
    ``callback(x, row)`` is called after every accepted step.
    """
    stats = SolverStats()
    counter = [0]
    x = np.array(x0, dtype=float, copy=True)
    ev = problem.evaluate(x)
    if not ev.valid:
        raise InvalidMeshError("initial configuration is invalid")
    f, g, H = ev.value, ev.gradient, ev.hessian
    f0 = f
    g0, H0op = g, CountingOperator(H, counter)
    if config.mode == SPECIFIC and config.linear == ITERATIVE and sigma is None and config.use_mdf:
        sigma = mdf_ordering(H).sigma
    eta, tau = ETA_MAX, TAU_MAX
    alpha = 1.0
    s0 = None
    forcing = SpecificForcing() if config.mode == SPECIFIC else None
    ls = specific_ls if config.line_search == SPECIFIC_LS else standard_bls
    r = rms(g)
    if r < config.rms_tol:
        return SolverResult(x, True, stats, f0, f, r, reason="initial point satisfies the tolerance")
    reason = "max_nonlinear"
    k = 0
    while True:
        Hop = CountingOperator(H, counter)
        if config.linear == DIRECT:
            d = newton_direction_direct(g, H)
        elif config.mode == STANDARD:
            d = newton_direction_standard(g, Hop, eta, tau)
        else:
            d = newton_direction_specific(g, Hop, sigma, eta, tau, config.delta)
        res: LineSearchResult = ls(x, d.p, alpha, problem.value, g, f, config.ls_config)
        stats.ls_iters += res.ls_iterations
        stats.ls_evals += res.f_evals
        stats.cg_iters += d.cg_iters
        if not res.accepted:
            stats.trace.append(
                TraceRow(k, f, r, res.alpha, res.rho, res.ls_iterations, res.f_evals, d.cg_iters,
                         counter[0], d.kind, d.termination, eta, tau, False)
            )
            reason = "line search made no progress"
            break
        s = res.step
        if k == 0:
            s0 = s
        x = x + s
        alpha = res.next_alpha
        ev = problem.evaluate(x)
        f, g, H = ev.value, ev.gradient, ev.hessian
        r = rms(g)
        used_eta, used_tau = eta, tau
        if forcing is not None:
            eta, tau = forcing.update(s0, g0, H0op, s, g, CountingOperator(H, counter))
        else:
            eta, tau = standard_forcing()
        stats.nonlinear_iters = k + 1
        stats.trace.append(
            TraceRow(k, f, r, res.alpha, res.rho, res.ls_iterations, res.f_evals, d.cg_iters,
                     counter[0], d.kind, d.termination, used_eta, used_tau, True)
        )
        if callback is not None:
            callback(x, stats.trace[-1])
        k += 1
        if r < config.rms_tol:
            reason = "converged"
            break
        if k >= config.max_nonlinear:
            break
    stats.matvec_products = counter[0]
    return SolverResult(x, r < config.rms_tol, stats, f0, f, r, reason=reason)


def optimize(
    mesh: HighOrderMesh,
    metric: Metric,
    config: SolverConfig = SolverConfig(),
    callback: Callable[[np.ndarray, TraceRow], None] | None = None,
) -> SolverResult:
    """Optimize the free node coordinates of ``mesh`` for ``metric``.

    ``result.coords`` and the coordinates passed to ``callback(coords, row)``
    after every accepted step use the numbering of the input mesh.
    """
    perm = None
    work = mesh
    if config.use_spectral:
        perm = spectral_node_ordering(mesh, metric).node_perm
        work = mesh.relabel(perm)
    dofmap = build_dof_map(work)
    obj = DistortionObjective(work, dofmap, metric)
    x0 = obj.initial_point()
    if not obj.is_valid(x0):
        raise InvalidMeshError("initial mesh has a non-positive Jacobian at a quadrature point")

    def to_input(x):
        coords = obj.coords(x)
        if perm is None:
            return coords
        out = np.empty_like(coords)
        out[perm] = coords
        return out

    cb = None if callback is None else (lambda x, row: callback(to_input(x), row))
    res = minimize(obj, x0, config, callback=cb)
    res.coords = to_input(res.x)
    return res


def perturb_mesh(mesh: HighOrderMesh, coords: np.ndarray, amplitude: float, seed: int = 0) -> HighOrderMesh:
    """Move every free coordinate by a uniform random amount in ``[-amplitude, amplitude]``."""
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-amplitude, amplitude, coords.shape)
    delta[mesh.fixed] = 0.0
    return mesh.with_coords(coords + delta)


__all__ = [
    "BLS",
    "DIRECT",
    "ITERATIVE",
    "SPECIFIC",
    "SPECIFIC_LS",
    "STANDARD",
    "TRACE_COLUMNS",
    "Direction",
    "InvalidMeshError",
    "SolverConfig",
    "SolverResult",
    "SolverStats",
    "TraceRow",
    "minimize",
    "newton_direction_direct",
    "newton_direction_specific",
    "newton_direction_standard",
    "optimize",
    "perturb_mesh",
    "rms",
]
