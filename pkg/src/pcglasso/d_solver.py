"""Diagonal factor update: the positive-definite matrix scaling problem.

With R held fixed, the terms of the objective that involve D reduce (up to
the positive factor 2(1 - alpha)) to

    f(d) = 0.5 * d' A d - sum(log d),    A = (R o C) / (1 - alpha),

whose unique minimizer solves A d = 1/d, i.e. D A D e = e.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import ConfigurationError, InvalidInputError
from .matrix_core import as_correlation, symmetrize


# stationarity accepted when the line search can no longer resolve a decrease
FLOOR_GTOL = 1e-7


@dataclass(frozen=True)
class ScalingProblem:
    a: np.ndarray
    alpha: float = 0.0
    lambda_min_chat: float | None = None

    @property
    def p(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class DSolveConfig:
    """Options for both Newton variants.

    ``stop`` selects the termination rule: ``"objective"`` stops as soon as
    the objective drop falls below ``tol``; ``"gradient"`` stops once
    ``||A d - 1/d||_inf <= gtol * (1 + ||d||_inf)``; ``"both"`` (default)
    requires the small drop *and* the small gradient.
    """

    max_iter: int = 200
    tol: float = 1e-10
    gtol: float = 1e-10
    eta_min: float = 1e-14
    c1: float = 1e-4
    c2: float = 0.9
    max_bracket: int = 20
    stop: str = "both"

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ConfigurationError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.tol <= 0 or self.gtol <= 0 or self.max_iter < 1:
            raise ConfigurationError("tolerances must be positive and max_iter >= 1")
        if self.stop not in ("objective", "gradient", "both"):
            raise ConfigurationError(f"unknown stopping rule {self.stop!r}")


@dataclass
class DSolveResult:
    d: np.ndarray
    iterations: int
    final_gradient_norm: float
    objective_trace: list[float]
    converged: bool
    step_trace: list[float] = field(default_factory=list)
    grad_trace: list[float] = field(default_factory=list)
    # extremes of the iterates and of the diagonal-Hessian condition number
    d_min_visited: float = math.inf
    d_max_visited: float = 0.0
    max_hessian_cond: float = 1.0

    def trace_rows(self):
        """(iter, objective, grad_norm, step) rows for CSV traces."""
        return [
            (i, f, g, s)
            for i, (f, g, s) in enumerate(zip(self.objective_trace, self.grad_trace, [0.0] + self.step_trace))
        ]


def build_scaling_problem(r: np.ndarray, chat, alpha: float) -> ScalingProblem:
    if not alpha < 1.0:
        raise ConfigurationError(f"alpha must be < 1, got {alpha}")
    c = as_correlation(chat)
    r = np.asarray(r, dtype=float)
    if r.shape != c.entries.shape:
        raise InvalidInputError("R and C shapes differ")
    a = symmetrize(r * c.entries) / (1.0 - alpha)
    return ScalingProblem(a, float(alpha), c.lambda_min)


def scaling_objective(a: np.ndarray, d: np.ndarray) -> float:
    if np.any(d <= 0.0):
        return math.inf
    return 0.5 * float(d @ (a @ d)) - float(np.sum(np.log(d)))


def scaling_change(a: np.ndarray, d: np.ndarray, x: np.ndarray) -> float:
    """f(x) - f(d) for the scaling objective, computed without cancellation."""
    if x.min() <= 0.0:
        return math.inf
    return _LineFunction(a, d, d - x)(1.0)[0]


def d_bounds(lambda_min_chat: float, alpha: float, p: int) -> tuple[float, float]:
    """Box containing every entry of the scaling solution when C is PD."""
    if lambda_min_chat <= 0.0:
        raise InvalidInputError("bounds require a positive definite correlation matrix")
    if not alpha < 1.0:
        raise ConfigurationError("alpha must be < 1")
    lo = math.sqrt((1.0 - alpha) * lambda_min_chat) / p
    hi = math.sqrt(p * (1.0 - alpha) / lambda_min_chat)
    return lo, hi


class _LineFunction:
    """phi(eta) = f(d - eta * delta) - f(d) with derivative, +inf off the domain.

    The difference is formed directly from the step s = -eta * delta,

        s'(A d) + s'A s / 2 - sum(log1p(s / d)),

    so it stays accurate when it is far below the rounding level of f itself.
    """

    def __init__(self, a, d, delta):
        self.a, self.d, self.delta = a, d, delta
        self.ad = a @ d
        self.evals = 0

    def __call__(self, eta):
        s = -eta * self.delta
        x = self.d + s
        self.evals += 1
        if x.min() <= 0.0:
            return math.inf, math.nan, x, None
        a_s = self.a @ s
        val = float(s @ (self.ad + 0.5 * a_s)) - float(np.log1p(s / self.d).sum())
        grad = self.ad + a_s - 1.0 / x
        return val, -float(grad @ self.delta), x, grad


def _interpolate(lo, hi, f_lo, df_lo, f_hi):
    """Minimizer of the quadratic through (lo, f_lo, df_lo) and (hi, f_hi), safeguarded."""
    width = hi - lo
    if math.isfinite(f_hi):
        denom = 2.0 * (f_hi - f_lo - df_lo * width)
        if denom > 0.0:
            t = lo - df_lo * width * width / denom
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * abs(width)
            if left + margin <= t <= right - margin:
                return t
    return lo + 0.5 * width


def wolfe_line_search(phi: _LineFunction, f0: float, df0: float, cfg: DSolveConfig, eta0: float = 1.0):
    """Strong-Wolfe step: bracketing followed by zoom.

    Returns (eta, f, x, grad). When the bracketing budget is exhausted the
    best point satisfying sufficient decrease is returned; eta = 0 signals
    that no acceptable step was found.
    """
    c1, c2 = cfg.c1, cfg.c2
    best = (0.0, f0, None, None)

    def remember(eta, f, x, g):
        nonlocal best
        if f <= f0 + c1 * eta * df0 and f < best[1]:
            best = (eta, f, x, g)

    def zoom(lo, f_lo, df_lo, hi, f_hi, budget):
        for _ in range(budget):
            eta = _interpolate(lo, hi, f_lo, df_lo, f_hi)
            if abs(hi - lo) < cfg.eta_min:
                break
            f, df, x, g = phi(eta)
            remember(eta, f, x, g)
            if not math.isfinite(f) or f > f0 + c1 * eta * df0 or f >= f_lo:
                hi, f_hi = eta, f
            else:
                if abs(df) <= -c2 * df0:
                    return eta, f, x, g
                if df * (hi - lo) >= 0.0:
                    hi, f_hi = lo, f_lo
                lo, f_lo, df_lo = eta, f, df
        return best

    prev, f_prev, df_prev = 0.0, f0, df0
    eta = eta0
    for i in range(cfg.max_bracket):
        f, df, x, g = phi(eta)
        remember(eta, f, x, g)
        if not math.isfinite(f) or f > f0 + c1 * eta * df0 or (i > 0 and f >= f_prev):
            return zoom(prev, f_prev, df_prev, eta, f, cfg.max_bracket)
        if abs(df) <= -c2 * df0:
            return eta, f, x, g
        if df >= 0.0:
            return zoom(eta, f, df, prev, f_prev, cfg.max_bracket)
        prev, f_prev, df_prev = eta, f, df
        eta *= 2.0
    return best


def _solve(prob: ScalingProblem, cfg: DSolveConfig, init, direction) -> DSolveResult:
    a = np.asarray(prob.a, dtype=float)
    p = a.shape[0]
    d = np.ones(p) if init is None else np.array(init, dtype=float).ravel()
    if d.shape[0] != p:
        raise InvalidInputError("initial d has the wrong length")
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("initial d must be strictly positive")

    diag_a = np.diag(a).copy()
    ad = a @ d
    f = 0.5 * float(d @ ad) - float(np.sum(np.log(d)))
    g = ad - 1.0 / d
    res = DSolveResult(d, 0, float(np.max(np.abs(g))), [f], False)
    res.grad_trace.append(res.final_gradient_norm)

    def track(x):
        lo, hi = float(x.min()), float(x.max())
        res.d_min_visited = min(res.d_min_visited, lo)
        res.d_max_visited = max(res.d_max_visited, hi)
        h = diag_a + x ** -2
        res.max_hessian_cond = max(res.max_hessian_cond, float(h.max() / h.min()))
        return hi

    d_max = track(d)
    gnorm = res.final_gradient_norm
    converged = False
    for it in range(1, cfg.max_iter + 1):
        if cfg.stop == "gradient" and gnorm <= cfg.gtol * (1.0 + d_max):
            converged = True
            break
        delta = direction(a, diag_a, d, g)
        slope = -float(g @ delta)
        if not slope < 0.0:
            converged = gnorm <= cfg.gtol * (1.0 + d_max)
            break
        phi = _LineFunction(a, d, delta)
        eta, change, x, g_new = wolfe_line_search(phi, 0.0, slope, cfg)
        if eta == 0.0 or x is None:
            # no decrease representable in floating point: accept if stationary
            converged = gnorm <= FLOOR_GTOL * (1.0 + d_max)
            break
        drop = -change
        d, f, g = x, f + change, g_new
        d_max = track(d)
        res.iterations = it
        res.objective_trace.append(f)
        res.step_trace.append(eta)
        gnorm = float(np.abs(g).max())
        res.grad_trace.append(gnorm)
        small_grad = gnorm <= cfg.gtol * (1.0 + d_max)
        if cfg.stop == "objective" and drop < cfg.tol:
            converged = True
            break
        if cfg.stop == "both" and drop < cfg.tol and small_grad:
            converged = True
            break
        if cfg.stop == "gradient" and small_grad:
            converged = True
            break
    res.d = d
    res.final_gradient_norm = gnorm
    res.converged = converged
    return res


def _diag_direction(a, diag_a, d, g):
    return g / (diag_a + d ** -2)


def _exact_direction(a, diag_a, d, g):
    h = a + np.diag(d ** -2)
    return linalg.cho_solve(linalg.cho_factor(h, lower=True, check_finite=False), g, check_finite=False)


def solve_d_diagonal_newton(prob: ScalingProblem, cfg: DSolveConfig | None = None, init=None) -> DSolveResult:
    """Newton iteration with the Hessian replaced by its diagonal diag(A) + d^-2."""
    return _solve(prob, cfg or DSolveConfig(), init, _diag_direction)


def solve_d_exact_newton(prob: ScalingProblem, cfg: DSolveConfig | None = None, init=None) -> DSolveResult:
    """Newton iteration with the full Hessian A + diag(d^-2)."""
    return _solve(prob, cfg or DSolveConfig(), init, _exact_direction)
