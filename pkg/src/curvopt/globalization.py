"""Backtracking and predictor-driven line searches."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

AMPLIFY_CAP = 60


@dataclass(frozen=True)
class LineSearchConfig:
    c_min: float = 1e-4
    c_max: float = 0.25
    gamma: float = 2.0
    alpha_min: float = 2.0**-20

    def __post_init__(self):
        if not 0 < self.c_min < self.c_max <= 0.5:
            raise ValueError("need 0 < c_min < c_max <= 0.5")
        if self.gamma <= 1:
            raise ValueError("gamma must exceed 1")
        if self.alpha_min <= 0:
            raise ValueError("alpha_min must be positive")


@dataclass
class LineSearchResult:
    step: np.ndarray
    alpha: float  # step length actually used
    next_alpha: float
    ls_iterations: int  # reduce/amplify loop iterations
    accepted: bool
    f_new: float
    rho: float
    f_evals: int  # all objective evaluations, including the final rejected trial


def predictor(f_x: float, f_xs: float, s: np.ndarray, g: np.ndarray) -> float:
    """Actual over linear-model decrease; ``-inf`` when the trial is invalid."""
    slope = float(np.dot(s, g))
    if not slope < 0:
        raise ValueError("step is not a descent direction")
    if not math.isfinite(f_xs):
        return -math.inf
    return (f_x - f_xs) / (-slope)


def standard_bls(
    x: np.ndarray,
    p: np.ndarray,
    alpha: float,
    f: Callable[[np.ndarray], float],
    g: np.ndarray,
    f_x: float | None = None,
    config: LineSearchConfig = LineSearchConfig(),
) -> LineSearchResult:
    """Halve the step until Armijo holds; the next initial step length is 1."""
    c = config.c_min
    f_x = f(x) if f_x is None else f_x
    s = alpha * p
    f_s = f(x + s)
    rho = predictor(f_x, f_s, s, g)
    it = 0
    while rho < c and alpha > config.alpha_min:
        alpha /= config.gamma
        s = alpha * p
        f_s = f(x + s)
        rho = predictor(f_x, f_s, s, g)
        it += 1
    return LineSearchResult(s, alpha, 1.0, it, rho >= c, f_s, rho, it + 1)


def specific_ls(
    x: np.ndarray,
    p: np.ndarray,
    alpha: float,
    f: Callable[[np.ndarray], float],
    g: np.ndarray,
    f_x: float | None = None,
    config: LineSearchConfig = LineSearchConfig(),
) -> LineSearchResult:
    """Reduce on insufficient decrease, amplify on insufficient progress, keep the step length."""
    f_x = f(x) if f_x is None else f_x
    gamma = config.gamma
    s = alpha * p
    f_s = f(x + s)
    rho = predictor(f_x, f_s, s, g)
    it = 0
    evals = 1
    if rho < config.c_min:
        while rho < config.c_min and alpha > config.alpha_min:
            alpha /= gamma
            s = alpha * p
            f_s = f(x + s)
            rho = predictor(f_x, f_s, s, g)
            it += 1
            evals += 1
    else:
        for _ in range(AMPLIFY_CAP):
            trial = gamma * s
            f_t = f(x + trial)
            evals += 1
            rho_t = predictor(f_x, f_t, trial, g)
            if not (rho_t > config.c_max and f_t < f_s):
                break
            alpha *= gamma
            s, f_s, rho = trial, f_t, rho_t
            it += 1
    next_alpha = alpha / gamma if rho < config.c_max else alpha
    return LineSearchResult(s, alpha, next_alpha, it, rho >= config.c_min, f_s, rho, evals)
