"""Regularization paths and hyperparameter selection (BIC, EBIC, k-fold CV)."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .estimator import FitResult, SolverConfig, fit
from .exceptions import ConfigurationError, InvalidInputError, PCGLassoError
from .matrix_core import SampleData, as_correlation, correlation_from_data, logdet_pd, symmetrize

DEFAULT_GAMMA_EBIC = 0.5


@dataclass(frozen=True)
class Scores:
    loglik: float
    bic: float
    ebic: float


@dataclass
class PathResult:
    lambdas: np.ndarray
    fits: list[FitResult | None]
    edge_counts: list[int | None]
    scores: list[Scores | None]
    alpha: float
    n: int | None = None
    gamma_ebic: float = DEFAULT_GAMMA_EBIC
    errors: dict[int, str] = field(default_factory=dict)

    def best_index(self, criterion: str = "bic") -> int:
        if criterion not in ("bic", "ebic"):
            raise ConfigurationError(f"unknown criterion {criterion!r}")
        vals = [getattr(s, criterion) if s is not None else math.inf for s in self.scores]
        if not np.isfinite(vals).any():
            raise InvalidInputError("no scored fits on the path (was n supplied?)")
        return int(np.argmin(vals))

    def rows(self):
        """(lambda, edges, loglik, bic, ebic, wall_ms) per grid point."""
        out = []
        for lam, f, e, s in zip(self.lambdas, self.fits, self.edge_counts, self.scores):
            nan = math.nan
            out.append((
                float(lam),
                e if e is not None else -1,
                s.loglik if s else nan,
                s.bic if s else nan,
                s.ebic if s else nan,
                1e3 * f.wall_time if f else nan,
            ))
        return out

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["lambda", "edges", "loglik", "bic", "ebic", "wall_ms"])
        for row in self.rows():
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


@dataclass(frozen=True)
class CvResult:
    folds: int
    lambda_grid: np.ndarray
    mean_heldout_loglik: np.ndarray
    selected_lambda: float
    fold_loglik: np.ndarray  # folds x grid


def gaussian_loglik(k_hat, s, n: int) -> float:
    """(n/2) (log det K - tr(K S)), the Gaussian log-likelihood up to constants."""
    k_hat = np.asarray(k_hat, dtype=float)
    s = np.asarray(s, dtype=float)
    if k_hat.shape != s.shape:
        raise InvalidInputError("K and S shapes differ")
    if not np.allclose(s, s.T, atol=1e-12):
        raise InvalidInputError("S must be symmetric")
    # S may be singular (a small held-out fold); K may not
    return 0.5 * n * (logdet_pd(k_hat) - float(np.sum(k_hat * s)))


def _edges(fit_result: FitResult) -> int:
    return fit_result.nnz_offdiag


def bic_score(fit_result: FitResult, chat, n: int) -> float:
    c = as_correlation(chat)
    return -2.0 * gaussian_loglik(fit_result.k, c.entries, n) + _edges(fit_result) * math.log(n)


def ebic_score(fit_result: FitResult, chat, n: int, gamma_ebic: float = DEFAULT_GAMMA_EBIC) -> float:
    if gamma_ebic < 0:
        raise ConfigurationError("gamma_ebic must be >= 0")
    c = as_correlation(chat)
    return bic_score(fit_result, c, n) + 4.0 * gamma_ebic * _edges(fit_result) * math.log(c.p)


def _scores(fit_result: FitResult, chat, n: int, gamma_ebic: float) -> Scores:
    ll = gaussian_loglik(fit_result.k, chat.entries, n)
    e = _edges(fit_result)
    bic = -2.0 * ll + e * math.log(n)
    return Scores(ll, bic, bic + 4.0 * gamma_ebic * e * math.log(chat.p))


def _check_grid(lambdas) -> np.ndarray:
    grid = np.asarray(lambdas, dtype=float).ravel()
    if grid.size == 0:
        raise ConfigurationError("empty lambda grid")
    if not np.all(np.isfinite(grid)) or np.any(grid < 0):
        raise ConfigurationError("lambdas must be finite and >= 0")
    if np.any(np.diff(grid) > 0):
        raise ConfigurationError("lambda grid must be decreasing")
    return grid


def lambda_path(chat, lambdas: Sequence[float], alpha: float = 0.0, cfg: SolverConfig | None = None, *,
                n: int | None = None, scale=None, gamma_ebic: float = DEFAULT_GAMMA_EBIC,
                mode: str = "chained", threads: int = 1) -> PathResult:
    """Fit along a decreasing lambda grid.

    ``mode="chained"`` warm-starts each fit from the previous one;
    ``mode="cold"`` fits every point from the identity start, optionally on
    ``threads`` workers. Repeated lambda values reuse the earlier fit. A
    failing grid point is recorded in ``errors`` and skipped.
    """
    c = as_correlation(chat)
    grid = _check_grid(lambdas)
    if mode not in ("chained", "cold"):
        raise ConfigurationError(f"unknown path mode {mode!r}")
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    base = replace(cfg or SolverConfig(), alpha=alpha)
    fits: list[FitResult | None] = [None] * grid.size
    errors: dict[int, str] = {}

    def one(lam, init):
        return fit(c, replace(base, lam=float(lam), init=init), scale=scale)

    if mode == "chained":
        prev = None
        for i, lam in enumerate(grid):
            if i > 0 and lam == grid[i - 1]:
                fits[i] = fits[i - 1]
                if i - 1 in errors:
                    errors[i] = errors[i - 1]
                continue
            try:
                fits[i] = one(lam, prev.fact if prev is not None else base.init)
                prev = fits[i]
            except PCGLassoError as exc:
                errors[i] = str(exc)
    else:
        uniq = {}
        for i, lam in enumerate(grid):
            uniq.setdefault(float(lam), []).append(i)

        def job(lam):
            try:
                return one(lam, base.init), None
            except PCGLassoError as exc:
                return None, str(exc)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(uniq, pool.map(job, list(uniq))))
        for lam, idx in uniq.items():
            f, err = results[lam]
            for i in idx:
                fits[i] = f
                if err is not None:
                    errors[i] = err

    edges = [f.nnz_offdiag if f is not None else None for f in fits]
    scores = [_scores(f, c, n, gamma_ebic) if (f is not None and n is not None) else None for f in fits]
    return PathResult(grid, fits, edges, scores, float(alpha), n, gamma_ebic, errors)


def kfold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    """Shuffled, nearly equal folds; every fold keeps at least two rows."""
    if folds < 2:
        raise ConfigurationError("folds must be >= 2")
    if n < 2 * folds:
        raise InvalidInputError(f"need n >= 2 * folds rows, got n={n}, folds={folds}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(ix) for ix in np.array_split(perm, folds)]


def heldout_covariance(train: np.ndarray, test: np.ndarray) -> np.ndarray:
    """1/n covariance of the test rows centered at the training means."""
    x = test - train.mean(axis=0)
    return symmetrize(x.T @ x / x.shape[0])


def cross_validate(data: SampleData, lambda_grid, alpha: float = 0.0, folds: int = 5,
                   cfg: SolverConfig | None = None, seed=0, *, threads: int = 1) -> CvResult:
    """k-fold CV on held-out Gaussian log-likelihood (data scale)."""
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    order = np.argsort(-grid, kind="stable")
    sorted_grid = grid[order]
    _check_grid(sorted_grid)
    rows = data.rows
    parts = kfold_indices(data.n, folds, seed)

    def fold_scores(k):
        test_idx = parts[k]
        mask = np.ones(data.n, dtype=bool)
        mask[test_idx] = False
        train, test = rows[mask], rows[test_idx]
        c, scale = correlation_from_data(SampleData(train))
        s_test = heldout_covariance(train, test)
        path = lambda_path(c, sorted_grid, alpha, cfg, scale=scale)
        out = np.full(grid.size, -math.inf)
        for j, f in enumerate(path.fits):
            if f is not None:
                out[order[j]] = gaussian_loglik(f.k_cov, s_test, test.shape[0]) / test.shape[0]
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            table = np.array(list(pool.map(fold_scores, range(folds))))
    else:
        table = np.array([fold_scores(k) for k in range(folds)])
    mean = table.mean(axis=0)
    best = int(np.argmax(mean))
    return CvResult(folds, grid, mean, float(grid[best]), table)
