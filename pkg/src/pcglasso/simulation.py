"""Ground-truth generators, samplers, error metrics, the study runner and the D-solver benchmark."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, stats

from .d_solver import ScalingProblem, solve_d_diagonal_newton, solve_d_exact_newton
from .estimator import SolverConfig, glasso_fit
from .exceptions import ConfigurationError, InvalidInputError, PCGLassoError
from .irrepresentability import hub_matrix, hub_pd
from .matrix_core import (
    SampleData,
    correlation_from_data,
    edge_count,
    inv_pd,
    min_eigenvalue,
    require_pd,
)
from .model_select import gaussian_loglik, heldout_covariance, kfold_indices, lambda_path

STRUCTURES = ("hub", "block_hub", "general_hub", "chain", "block_random")
METHODS = ("pcglasso", "glasso", "corr_glasso")
SELECTIONS = ("bic", "ebic", "cv")


# -- generators -------------------------------------------------------------

def hub_precision(p: int) -> np.ndarray:
    """Unit diagonal, node 0 linked to every other node with weight -1/sqrt(p)."""
    if p < 2:
        raise InvalidInputError("p must be >= 2")
    return hub_matrix(1.0, 1.0, -1.0 / math.sqrt(p), p)


def general_hub_precision(a: float, b: float, c: float, p: int) -> np.ndarray:
    if p < 2:
        raise InvalidInputError("p must be >= 2")
    if not hub_pd(a, b, c, p):
        raise InvalidInputError(
            f"hub parameters are not positive definite: (p-1) c^2 = {(p - 1) * c * c:.6g} >= a b = {a * b:.6g}"
        )
    return hub_matrix(a, b, c, p)


def block_hub_precision(p: int, blocks: int) -> np.ndarray:
    if blocks < 1 or p % blocks:
        raise InvalidInputError(f"p = {p} is not divisible into {blocks} blocks")
    size = p // blocks
    if size < 2:
        raise InvalidInputError("each block needs at least two variables")
    return linalg.block_diag(*[hub_precision(size)] * blocks)


def chain_precision(p: int, rho: float) -> np.ndarray:
    """Tridiagonal precision of the stationary AR(1) chain with lag-one correlation rho."""
    if p < 2:
        raise InvalidInputError("p must be >= 2")
    if not -1.0 < rho < 1.0:
        raise InvalidInputError("|rho| must be < 1")
    q = 1.0 - rho * rho
    k = np.diag(np.full(p, (1.0 + rho * rho) / q))
    k[0, 0] = k[-1, -1] = 1.0 / q
    idx = np.arange(p - 1)
    k[idx, idx + 1] = k[idx + 1, idx] = -rho / q
    return k


def block_random_precision(p: int, blocks: int, rng, density: float = 0.3,
                           low: float = 0.2, high: float = 0.5) -> np.ndarray:
    """Block-diagonal sparse precision with random signed edges, shifted to be well conditioned."""
    if blocks < 1 or p % blocks or p // blocks < 2:
        raise InvalidInputError("p must split into blocks of at least two variables")
    size = p // blocks
    parts = []
    for _ in range(blocks):
        m = np.zeros((size, size))
        iu = np.triu_indices(size, 1)
        keep = rng.random(iu[0].size) < density
        vals = rng.uniform(low, high, iu[0].size) * rng.choice([-1.0, 1.0], iu[0].size)
        m[iu] = np.where(keep, vals, 0.0)
        m = m + m.T
        shift = max(0.0, -min_eigenvalue(m)) + 0.5
        parts.append(m + shift * np.eye(size))
    return linalg.block_diag(*parts)


def sample_gaussian(sigma, n: int, seed) -> np.ndarray:
    """n x p draws L z with L the lower Cholesky factor of sigma."""
    sigma = np.asarray(sigma, dtype=float)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    try:
        chol = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidInputError("sigma is not positive definite") from exc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, sigma.shape[0])) @ chol.T


# -- metrics ----------------------------------------------------------------

class RmseMetrics(NamedTuple):
    full: float
    diag: float
    offdiag_nz: float | None


def rmse_metrics(k_hat, k_star) -> RmseMetrics:
    k_hat = np.asarray(k_hat, dtype=float)
    k_star = np.asarray(k_star, dtype=float)
    if k_hat.shape != k_star.shape:
        raise InvalidInputError("shapes differ")
    err = (k_hat - k_star) ** 2
    off_nz = (k_star != 0) & ~np.eye(k_star.shape[0], dtype=bool)
    nz = math.sqrt(float(err[off_nz].mean())) if off_nz.any() else None
    return RmseMetrics(math.sqrt(float(err.mean())), math.sqrt(float(np.diag(err).mean())), nz)


def sign_accuracy(k_hat, k_star, tol: float = 0.0) -> float:
    """Share of off-diagonal pairs where sign(K_hat, zeroed below tol) equals sign(K*)."""
    k_hat = np.asarray(k_hat, dtype=float)
    k_star = np.asarray(k_star, dtype=float)
    iu = np.triu_indices(k_star.shape[0], 1)
    est = k_hat[iu]
    est = np.where(np.abs(est) > tol, np.sign(est), 0.0)
    return float(np.mean(est == np.sign(k_star[iu])))


# -- study ------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    structure: str = "hub"
    p: int = 20
    blocks: int = 4
    a: float = 1.0
    b: float = 1.0
    c: float = 0.2
    rho: float = 0.5
    n_grid: tuple[int, ...] = (500,)
    replicates: int = 20
    methods: tuple[str, ...] = METHODS
    selection: str = "bic"
    seed: int = 0
    alpha: float = 0.0
    n_lambda: int = 30
    lambda_small: float = 0.01
    gamma_ebic: float = 0.5
    cv_folds: int = 5
    threads: int = 1
    # estimates only need a few digits; a looser residual target keeps paths cheap
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ConfigurationError(f"unknown structure {self.structure!r}")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigurationError(f"methods must be a non-empty subset of {METHODS}")
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"selection must be one of {SELECTIONS}")
        if self.replicates < 1 or self.p < 2 or self.n_lambda < 2 or self.threads < 1:
            raise ConfigurationError("replicates, p, n_lambda and threads must be positive (p, n_lambda >= 2)")
        if not self.n_grid or min(self.n_grid) < 2:
            raise ConfigurationError("every sample size must be >= 2")
        if not self.alpha < 1:
            raise ConfigurationError("alpha must be < 1")

    def truth(self, rng) -> np.ndarray:
        if self.structure == "hub":
            return hub_precision(self.p)
        if self.structure == "block_hub":
            return block_hub_precision(self.p, self.blocks)
        if self.structure == "general_hub":
            return general_hub_precision(self.a, self.b, self.c, self.p)
        if self.structure == "chain":
            return chain_precision(self.p, self.rho)
        return block_random_precision(self.p, self.blocks, rng)


METRICS = ("rmse_full", "rmse_diag", "rmse_offdiag_nz", "sign_accuracy", "wall_time")


@dataclass
class StudyReport:
    config: StudyConfig
    records: list[dict]  # one per (replicate, n, method)
    failures: int = 0
    summary: dict = field(default_factory=dict)

    def aggregate(self) -> None:
        out = {}
        keys = sorted({(r["method"], r["n"]) for r in self.records})
        for method, n in keys:
            rows = [r for r in self.records if r["method"] == method and r["n"] == n]
            cell = {}
            for m in METRICS:
                vals = np.array([r[m] for r in rows if r[m] is not None], dtype=float)
                if vals.size == 0:
                    continue
                sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                cell[m] = (float(vals.mean()), sd)
            out[(method, n)] = cell
        self.summary = out

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["method", "n", "metric", "mean", "sd"])
        for (method, n), cell in self.summary.items():
            for m, (mean, sd) in cell.items():
                w.writerow([method, n, m, repr(mean), repr(sd)])

    def write_raw_csv(self, fh) -> None:
        cols = ["replicate", "n", "method", "lambda", *METRICS]
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in self.records:
            w.writerow({k: r[k] for k in cols})

    def to_dict(self, timing: bool = True) -> dict:
        summary = [
            {"method": m, "n": n, **{k: {"mean": v[0], "sd": v[1]} for k, v in cell.items()
                                     if timing or k != "wall_time"}}
            for (m, n), cell in self.summary.items()
        ]
        return {"config": asdict(self.config), "failures": self.failures, "summary": summary}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _log_grid(lo: float, hi: float, k: int) -> np.ndarray:
    hi = max(hi, lo * 1.0001)
    return np.geomspace(hi, lo, k)


def _glasso_path(s: np.ndarray, grid: np.ndarray) -> list[np.ndarray]:
    return [glasso_fit(s, float(lam)) for lam in grid]


def _bic(k, s, n, gamma, p) -> float:
    e = edge_count(k)
    return -2.0 * gaussian_loglik(k, s, n) + e * math.log(n) + 4.0 * gamma * e * math.log(p)


def _fit_method(method: str, rows: np.ndarray, cfg: StudyConfig):
    """Selected estimate of K on the data scale and the chosen lambda."""
    data = SampleData(rows)
    n, p = data.n, data.p
    c, scale = correlation_from_data(data)
    sig = data.covariance()
    gamma = cfg.gamma_ebic if cfg.selection == "ebic" else 0.0

    if method == "pcglasso":
        off = c.offdiag_max()
        grid = _log_grid(cfg.lambda_small, (1.0 - cfg.alpha) * off, cfg.n_lambda)
    else:
        target = c.entries if method == "corr_glasso" else sig
        lam_max = float(np.max(np.abs(target - np.diag(np.diag(target)))))
        grid = _log_grid(cfg.lambda_small * lam_max, lam_max, cfg.n_lambda)

    def estimates(train_rows):
        d = SampleData(train_rows)
        cc, sc = correlation_from_data(d)
        if method == "pcglasso":
            path = lambda_path(cc, grid, cfg.alpha, SolverConfig(kkt_tol=cfg.kkt_tol), scale=sc)
            return [f.k_cov if f is not None else None for f in path.fits], [
                f.k if f is not None else None for f in path.fits], cc.entries
        if method == "glasso":
            ks = _glasso_path(d.covariance(), grid)
            return ks, ks, d.covariance()
        kc = _glasso_path(cc.entries, grid)
        return [sc[:, None] * k * sc[None, :] for k in kc], kc, cc.entries

    if cfg.selection == "cv":
        parts = kfold_indices(n, cfg.cv_folds, cfg.seed)
        score = np.zeros(grid.size)
        for test_idx in parts:
            mask = np.ones(n, dtype=bool)
            mask[test_idx] = False
            train, test = rows[mask], rows[test_idx]
            s_test = heldout_covariance(train, test)
            ks, _, _ = estimates(train)
            score += [gaussian_loglik(k, s_test, len(test)) / len(test) if k is not None else -math.inf
                      for k in ks]
        best = int(np.argmax(score))
        ks, _, _ = estimates(rows)
    else:
        ks, ks_fit, s_fit = estimates(rows)
        crit = [_bic(kf, s_fit, n, gamma, p) if kf is not None else math.inf for kf in ks_fit]
        best = int(np.argmin(crit))
    if ks[best] is None:
        raise PCGLassoError("selected fit failed")
    return ks[best], float(grid[best])


def _replicate(cfg: StudyConfig, rep: int, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    k_star = cfg.truth(rng)
    sigma = inv_pd(require_pd(k_star, "K*"))
    out, failures = [], 0
    for n in cfg.n_grid:
        rows = sample_gaussian(sigma, n, rng)
        for method in cfg.methods:
            t0 = time.perf_counter()
            try:
                k_hat, lam = _fit_method(method, rows, cfg)
            except PCGLassoError:
                failures += 1
                continue
            wall = time.perf_counter() - t0
            m = rmse_metrics(k_hat, k_star)
            out.append({
                "replicate": rep, "n": n, "method": method, "lambda": lam,
                "rmse_full": m.full, "rmse_diag": m.diag, "rmse_offdiag_nz": m.offdiag_nz,
                "sign_accuracy": sign_accuracy(k_hat, k_star, 1e-10), "wall_time": wall,
            })
    return out, failures


def run_study(cfg: StudyConfig) -> StudyReport:
    """Replicates draw from independent child seeds, so results do not depend on scheduling."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda i: _replicate(cfg, i, seeds[i]), range(cfg.replicates)))
    else:
        results = [_replicate(cfg, i, seeds[i]) for i in range(cfg.replicates)]
    records = [r for rows, _ in results for r in rows]
    rep = StudyReport(cfg, records, sum(f for _, f in results))
    rep.aggregate()
    return rep


# -- D-solver benchmark -------------------------------------------------------

class BenchRow(NamedTuple):
    p: int
    solver: str
    mean_ms: float
    ci_lo: float
    ci_hi: float


@dataclass
class BenchTable:
    rows: list[BenchRow]
    max_gap: float  # largest entrywise disagreement between the two solvers
    samples: dict = field(default_factory=dict)  # (p, solver) -> list of ms

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["p", "solver", "mean_ms", "ci_lo", "ci_hi"])
        for r in self.rows:
            w.writerow([r.p, r.solver, repr(r.mean_ms), repr(r.ci_lo), repr(r.ci_hi)])

    def mean(self, p: int, solver: str) -> float:
        return next(r.mean_ms for r in self.rows if r.p == p and r.solver == solver)


def random_scaling_problem(p: int, rng) -> ScalingProblem:
    """A = R o C with R and C correlation matrices of independent Wishart draws."""
    def corr():
        x = rng.standard_normal((2 * p + 2, p))
        s = x.T @ x
        h = 1.0 / np.sqrt(np.diag(s))
        m = s * h[:, None] * h[None, :]
        np.fill_diagonal(m, 1.0)
        return m

    c = corr()
    a = corr() * c
    return ScalingProblem((a + a.T) / 2.0, 0.0, min_eigenvalue(c))


def _ci(ms: np.ndarray) -> tuple[float, float, float]:
    mean = float(ms.mean())
    if ms.size < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.975, ms.size - 1) * ms.std(ddof=1) / math.sqrt(ms.size))
    return mean, mean - half, mean + half


def bench_d_solvers(p_grid, replicates: int = 10, seed=0) -> BenchTable:
    if replicates < 1:
        raise ConfigurationError("replicates must be >= 1")
    rng = np.random.default_rng(seed)
    rows, samples, gap = [], {}, 0.0
    solvers = (("diagonal", solve_d_diagonal_newton), ("exact", solve_d_exact_newton))
    for p in p_grid:
        times = {name: [] for name, _ in solvers}
        for _ in range(replicates):
            prob = random_scaling_problem(int(p), rng)
            sol = {}
            for name, solver in solvers:
                t0 = time.perf_counter()
                sol[name] = solver(prob).d
                times[name].append(1e3 * (time.perf_counter() - t0))
            gap = max(gap, float(np.max(np.abs(sol["diagonal"] - sol["exact"]))))
        for name, _ in solvers:
            ms = np.array(times[name])
            samples[(int(p), name)] = ms.tolist()
            rows.append(BenchRow(int(p), name, *_ci(ms)))
    return BenchTable(rows, gap, samples)
