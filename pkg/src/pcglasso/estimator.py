"""Partial-correlation graphical lasso: objective, block coordinate descent, diagnostics.

The estimator minimizes, over unit-diagonal PD R and positive diagonal D,

    -log det R - 2(1 - alpha) log det D + tr(C D R D) + lam ||R||_1,off

on the correlation scale. The fit alternates a D update (matrix scaling,
:mod:`pcglasso.d_solver`) and an R update (dual coordinate descent,
:mod:`pcglasso.r_solver`). Once the relative objective change is below
``outer_tol`` the first-order residual is checked every iteration and the loop
stops when it reaches ``kkt_tol`` or stops improving.
"""
from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .d_solver import DSolveConfig, build_scaling_problem, d_bounds, scaling_change, solve_d_diagonal_newton
from .exceptions import ConfigurationError, InvalidInputError, NumericalError
from .matrix_core import (
    CorrelationMatrix,
    PrecisionFactorization,
    as_correlation,
    correlation_from_covariance,
    edge_count,
    inv_pd,
    is_positive_definite,
    logdet_pd,
    symmetrize,
)
from .r_solver import default_tau, glasso_fit, solve_r

__all__ = [
    "SolverConfig",
    "FitResult",
    "Uniqueness",
    "objective",
    "fit",
    "fit_covariance",
    "stationarity_residual",
    "stationarity_threshold",
    "explicit_d_from_r",
    "consistency_bound_check",
    "uniqueness_certificate",
    "glasso_fit",
    "four_over_n_alpha",
]


def four_over_n_alpha(n: int) -> float:
    """The alpha = 4/n preset."""
    return 4.0 / n


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.0
    alpha: float = 0.0
    outer_tol: float = 1e-8
    outer_max_iter: int = 500
    d_cfg: DSolveConfig = field(default_factory=DSolveConfig)
    # None -> 1e-7 * mean |offdiag S| per R update
    r_tol: float | None = None
    # None -> identity start; otherwise a PrecisionFactorization on the correlation scale
    init: PrecisionFactorization | None = None
    restarts: int = 1
    seed: int | None = None
    # converged flag: residual <= stat_tol * (1 + ||DCD||_inf)
    stat_tol: float = 1e-6
    # outer loop keeps going until residual <= kkt_tol * (1 + ||DCD||_inf) ...
    kkt_tol: float = 1e-11
    # ... or the residual improved by less than 20% over this many checks
    stall_window: int = 12
    # over-relaxation of the D update, d <- d + d_relax * (d_solved - d); 1 disables
    d_relax: float = 1.7

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigurationError(f"lambda must be a finite value >= 0, got {self.lam}")
        if not self.alpha < 1:
            raise ConfigurationError(f"alpha must be < 1, got {self.alpha}")
        if self.outer_tol <= 0 or self.stat_tol <= 0 or (self.r_tol is not None and self.r_tol <= 0):
            raise ConfigurationError("tolerances must be positive")
        if self.outer_max_iter < 1 or self.restarts < 1:
            raise ConfigurationError("outer_max_iter and restarts must be >= 1")
        if self.kkt_tol <= 0 or self.stall_window < 2:
            raise ConfigurationError("kkt_tol must be positive and stall_window >= 2")
        if not 1.0 <= self.d_relax < 2.0:
            raise ConfigurationError(f"d_relax must lie in [1, 2), got {self.d_relax}")

    def echo(self) -> dict:
        return {
            "lambda": self.lam,
            "alpha": self.alpha,
            "outer_tol": self.outer_tol,
            "outer_max_iter": self.outer_max_iter,
            "r_tol": self.r_tol,
            "restarts": self.restarts,
            "kkt_tol": self.kkt_tol,
            "d_relax": self.d_relax,
            "seed": self.seed,
            "d_solver": asdict(self.d_cfg),
            "covariance_normalization": "1/n",
        }


@dataclass
class FitResult:
    fact: PrecisionFactorization
    w: np.ndarray
    objective_trace: list[float]
    stationarity_residual: float
    outer_iters: int
    wall_time: float
    converged: bool
    lam: float
    alpha: float
    fact_cov: PrecisionFactorization | None = None
    config: dict = field(default_factory=dict)

    @property
    def r(self) -> np.ndarray:
        return self.fact.r

    @property
    def d(self) -> np.ndarray:
        return self.fact.d

    @property
    def k(self) -> np.ndarray:
        """Precision estimate on the correlation scale."""
        return self.fact.k

    @property
    def k_cov(self) -> np.ndarray:
        """Precision estimate on the data scale (correlation scale if no scale was given)."""
        return (self.fact_cov or self.fact).k

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def nnz_offdiag(self) -> int:
        return edge_count(self.fact.r)

    def to_dict(self) -> dict:
        fc = self.fact_cov or self.fact
        return {
            "lambda": self.lam,
            "alpha": self.alpha,
            "converged": self.converged,
            "outer_iters": self.outer_iters,
            "objective": self.objective,
            "stationarity_residual": self.stationarity_residual,
            "nnz_offdiag": self.nnz_offdiag,
            "wall_ms": 1e3 * self.wall_time,
            "R": self.fact.r.tolist(),
            "d": fc.d.tolist(),
            "K": fc.k.tolist(),
            "config": self.config,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _offdiag_l1(r: np.ndarray) -> float:
    return float(np.abs(r).sum() - np.abs(np.diag(r)).sum())


def objective(r, d, chat, lam: float, alpha: float) -> float:
    """Penalized negative log-likelihood on the correlation scale."""
    r = np.asarray(r, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    c = chat.entries if isinstance(chat, CorrelationMatrix) else np.asarray(chat, dtype=float)
    if np.any(d <= 0):
        raise InvalidInputError("d must be strictly positive")
    trace = float(d @ ((r * c) @ d))
    return -logdet_pd(r) - 2.0 * (1.0 - alpha) * float(np.sum(np.log(d))) + trace + lam * _offdiag_l1(r)


def stationarity_threshold(d, chat, stat_tol: float = 1e-6) -> float:
    c = chat.entries if isinstance(chat, CorrelationMatrix) else np.asarray(chat, dtype=float)
    d = np.asarray(d, dtype=float)
    return stat_tol * (1.0 + float(np.max(np.abs(d[:, None] * c * d[None, :]))))


def stationarity_residual(r, d, chat, lam: float, alpha: float, r_inv=None) -> float:
    """Largest violation of the coordinate-wise first-order conditions.

    With M = R^{-1} - D C D - alpha I + lam * diag(J'|R|) the conditions are
    diag(M) = 0, M_ij = lam * sign(R_ij) where R_ij != 0, and |M_ij| <= lam
    where R_ij == 0.
    """
    r = np.asarray(r, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    c = chat.entries if isinstance(chat, CorrelationMatrix) else np.asarray(chat, dtype=float)
    p = r.shape[0]
    if r_inv is None:
        r_inv = inv_pd(r)
    absr = np.abs(r)
    row_l1 = absr.sum(axis=0) - np.diag(absr)
    m = r_inv - d[:, None] * c * d[None, :]
    m[np.diag_indices(p)] += lam * row_l1 - alpha
    off = ~np.eye(p, dtype=bool)
    nz = off & (r != 0.0)
    zero = off & (r == 0.0)
    parts = [np.abs(np.diag(m))]
    if nz.any():
        parts.append(np.abs(m[nz] - lam * np.sign(r[nz])))
    if zero.any():
        parts.append(np.maximum(np.abs(m[zero]) - lam, 0.0))
    return float(max(np.max(x) for x in parts))


def explicit_d_from_r(r, lam: float, alpha: float) -> np.ndarray:
    """d(R)^2 = lam * diag(J'|R|) + diag(R^{-1}) - alpha; holds at every stationary point."""
    r = np.asarray(r, dtype=float)
    absr = np.abs(r)
    sq = lam * (absr.sum(axis=0) - np.diag(absr)) + np.diag(inv_pd(r)) - alpha
    if np.any(sq <= 0):
        raise NumericalError(f"non-positive value under the square root: {sq.min():.3g}")
    return np.sqrt(sq)


def consistency_bound_check(fit_result: FitResult, chat, lam: float, alpha: float, slack: float = 1e-9):
    """Distance of the fitted covariance from C against its worst-case bound.

    Returns (lhs, rhs, holds) with lhs = ||K^{-1} - C||_inf and
    rhs = (lam p + |alpha|) p^2 / ((1 - alpha) lambda_min(C)). ``slack``
    absorbs round-off when rhs is zero.
    """
    c = as_correlation(chat)
    lmin = c.lambda_min
    if lmin <= 0 or not is_positive_definite(c.entries):
        raise InvalidInputError("the bound requires a positive definite correlation matrix")
    p = c.p
    lhs = float(np.max(np.abs(inv_pd(fit_result.fact.k) - c.entries)))
    rhs = (lam * p + abs(alpha)) * p * p / ((1.0 - alpha) * lmin)
    return lhs, rhs, bool(lhs <= rhs + slack * (1.0 + rhs))


class Uniqueness(enum.Enum):
    SMALL_CORRELATION_REGIME = "small_correlation_regime"
    NONE = "none"


def uniqueness_certificate(chat, lam: float, alpha: float) -> Uniqueness:
    """Certify a unique local minimum when ||C - I||_inf <= (2 (1 - alpha) p^3)^(-1/2).

    The certificate does not depend on ``lam``.
    """
    c = as_correlation(chat)
    if not alpha < 1:
        raise ConfigurationError("alpha must be < 1")
    bound = (2.0 * (1.0 - alpha) * c.p ** 3) ** -0.5
    if c.offdiag_max() <= bound:
        return Uniqueness.SMALL_CORRELATION_REGIME
    return Uniqueness.NONE


def _bcd(c: CorrelationMatrix, cfg: SolverConfig, r, w, d):
    lam, alpha = cfg.lam, cfg.alpha
    ce = c.entries
    trace = [objective(r, d, ce, lam, alpha)]
    residuals: list[float] = []
    residual = math.inf
    it = 0
    r_tol = cfg.r_tol
    for it in range(1, cfg.outer_max_iter + 1):
        prob = build_scaling_problem(r, c, alpha)
        d_cfg = cfg.d_cfg
        if cfg.r_tol is None and len(trace) > 1:
            # early D-steps need not be solved to full precision either
            hint = residuals[-1] if residuals else math.sqrt(abs(trace[-2] - trace[-1]))
            d_cfg = replace(d_cfg, tol=max(d_cfg.tol, 1e-4 * hint * hint),
                            gtol=max(d_cfg.gtol, 1e-2 * hint))
        d_new = solve_d_diagonal_newton(prob, d_cfg, init=d).d
        if cfg.d_relax != 1.0:
            # the two blocks are strongly coupled; overshooting in d speeds up the
            # alternation, and is kept only if it still lowers the objective
            x = d + cfg.d_relax * (d_new - d)
            if scaling_change(prob.a, d, x) < 0.0:
                d_new = x
        d = d_new
        s = d[:, None] * ce * d[None, :]
        if cfg.r_tol is None:
            # inexact R-steps cap the attainable residual, so tighten as it shrinks
            tau = default_tau(s)
            if residuals:
                tau = min(tau, max(1e-3 * residuals[-1], 1e-7 * tau))
            r_tol = tau
        rs = solve_r(s, lam, r_tol, warm=(r, w))
        r, w = rs.r, rs.w
        f = objective(r, d, ce, lam, alpha)
        prev = trace[-1]
        trace.append(f)
        if abs(prev - f) >= cfg.outer_tol * max(1.0, abs(f)):
            continue
        # the objective flattens out long before the iterate settles, so the
        # first-order residual decides when to stop
        residual = stationarity_residual(r, d, ce, lam, alpha)
        residuals.append(residual)
        if residual <= cfg.kkt_tol * (1.0 + float(np.max(np.abs(s)))):
            break
        window = residuals[-cfg.stall_window:]
        if len(window) == cfg.stall_window and min(window) > 0.8 * window[0]:
            break
    if not residuals or it == cfg.outer_max_iter:
        residual = stationarity_residual(r, d, ce, lam, alpha)
    converged = residual <= stationarity_threshold(d, ce, cfg.stat_tol)
    return r, w, d, trace, residual, converged, it


def _start_points(c: CorrelationMatrix, cfg: SolverConfig):
    p = c.p
    if cfg.init is not None:
        f0 = cfg.init
        if f0.p != p:
            raise ConfigurationError("initial factorization has the wrong dimension")
        yield np.array(f0.r), inv_pd(f0.r), np.array(f0.d)
    else:
        yield np.eye(p), np.eye(p), np.full(p, math.sqrt(1.0 - cfg.alpha))
    if cfg.restarts > 1:
        rng = np.random.default_rng(cfg.seed)
        lmin = c.lambda_min
        if lmin > 0:
            lo, hi = d_bounds(lmin, cfg.alpha, p)
        else:
            lo, hi = 0.1, 10.0
        for _ in range(cfg.restarts - 1):
            d0 = np.exp(rng.uniform(math.log(lo), math.log(hi), size=p))
            yield np.eye(p), np.eye(p), d0


def fit(chat, cfg: SolverConfig | None = None, scale=None) -> FitResult:
    """Fit on a correlation matrix; ``scale`` = diag(Sigma)^(-1/2) maps K back to the data scale."""
    cfg = cfg or SolverConfig()
    c = as_correlation(chat)
    p = c.p
    t0 = time.perf_counter()
    if p == 1:
        fact = PrecisionFactorization(np.ones((1, 1)), np.array([math.sqrt(1.0 - cfg.alpha)]))
        f = objective(fact.r, fact.d, c.entries, cfg.lam, cfg.alpha)
        res = FitResult(fact, np.ones((1, 1)), [f], 0.0, 0, time.perf_counter() - t0, True,
                        cfg.lam, cfg.alpha, config=cfg.echo())
    else:
        best = None
        for r0, w0, d0 in _start_points(c, cfg):
            out = _bcd(c, cfg, r0, w0, d0)
            if best is None or out[3][-1] < best[3][-1]:
                best = out
        r, w, d, trace, residual, converged, iters = best
        res = FitResult(PrecisionFactorization(r, d), symmetrize(w), trace, residual, iters,
                        time.perf_counter() - t0, converged, cfg.lam, cfg.alpha, config=cfg.echo())
    if scale is not None:
        scale = np.asarray(scale, dtype=float).ravel()
        if scale.shape[0] != p or np.any(scale <= 0):
            raise InvalidInputError("scale must be a positive vector of length p")
        res.fact_cov = res.fact.rescaled(scale)
    return res


def fit_covariance(sigma, cfg: SolverConfig | None = None) -> FitResult:
    """Fit from a covariance matrix; the estimate is scale-invariant by construction."""
    c, scale = correlation_from_covariance(sigma)
    return fit(c, cfg, scale=scale)
