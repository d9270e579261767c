"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Fits produced for criteria 2, 3, 4 and 7 are cached and re-examined by
criterion 8.
"""
import functools
import math
import time

import numpy as np
import pytest

from conftest import example_two_minima, random_corr, random_unit_diag_pd, record_criterion, shrink_to_identity
from pcglasso.d_solver import d_bounds, solve_d_diagonal_newton, solve_d_exact_newton
from pcglasso.estimator import (
    SolverConfig,
    consistency_bound_check,
    explicit_d_from_r,
    fit,
    fit_covariance,
    objective,
    stationarity_residual,
    stationarity_threshold,
)
from pcglasso.irrepresentability import (
    HUB_PCG_CONSTANT,
    hub_irr_closed_form,
    hub_matrix,
    irr_glasso,
    irr_heatmap,
    irr_pcglasso,
    m_tilde,
    n_tilde,
)
from pcglasso.matrix_core import PrecisionFactorization, correlation_from_covariance, partial_correlations
from pcglasso.r_solver import check_dual_feasibility, r_objective, solve_r
from pcglasso.simulation import StudyConfig, bench_d_solvers, run_study

from test_d_solver import random_problem
from test_r_solver import brute_force_r, random_s


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# -- cached fits shared with criterion 8 ---------------------------------------

@functools.lru_cache(maxsize=None)
def two_minima_fits():
    r0, rho, d = example_two_minima()
    c = np.array([[1.0, rho], [rho, 1.0]])
    other = PrecisionFactorization(np.array([[1.0, r0], [r0, 1.0]]), np.full(2, d))
    fits = {}
    for lam in (1.0, 1.3):
        for name, init in (("identity", None), ("other", other)):
            fits[(lam, name)] = fit(c, SolverConfig(lam=lam, init=init))
    return c, fits


@functools.lru_cache(maxsize=None)
def identity_regime_fits():
    rng = np.random.default_rng(303)
    combos = [(lam, alpha) for lam in (0.3, 0.6) for alpha in (0.0, 0.5, -1.0)]
    out = []
    for i in range(50):
        lam, alpha = combos[i % len(combos)]
        p = int(rng.integers(2, 11))
        bound = lam / (1 - alpha)
        c = shrink_to_identity(random_corr(rng, p), bound * rng.uniform(0.3, 1.0))
        out.append((c, lam, alpha, fit(c, SolverConfig(lam=lam, alpha=alpha))))
    return out


@functools.lru_cache(maxsize=None)
def mle_fits():
    rng = np.random.default_rng(404)
    out = []
    for _ in range(100):
        p = int(rng.integers(2, 9))
        c = random_corr(rng, p, df=int(rng.integers(p + 2, 4 * p + 2)))
        out.append((c, 0.0, 0.0, fit(c, SolverConfig())))
    return out


@functools.lru_cache(maxsize=None)
def scale_pairs():
    rng = np.random.default_rng(707)
    out = []
    for _ in range(50):
        p = int(rng.integers(2, 9))
        x = rng.standard_normal((3 * p, p)) @ rng.standard_normal((p, p))
        sigma = x.T @ x / x.shape[0] + 0.05 * np.eye(p)
        h = np.exp(rng.uniform(-1.5, 1.5, p))
        h_pow2 = 2.0 ** np.round(np.log2(h))
        cfg = SolverConfig(lam=float(rng.uniform(0.02, 0.3)), alpha=float(rng.choice([0.0, 0.2])))
        fits = [fit_covariance(m, cfg) for m in (sigma, h[:, None] * sigma * h[None, :],
                                                  h_pow2[:, None] * sigma * h_pow2[None, :])]
        out.append((sigma, h, h_pow2, cfg, *fits))
    return out


# -- criteria ------------------------------------------------------------------

INTRO_K = np.array([[1.0, 1.0, 2.0], [1.0, 4.0, 3.0], [2.0, 3.0, 25.0]])


def test_criterion_01_intro_example():
    expected = np.array([[1, -0.5, -0.4], [-0.5, 1, -0.3], [-0.4, -0.3, 1]])
    partial_correlations(INTRO_K)  # warm caches before timing
    pc, secs = timed(lambda: partial_correlations(INTRO_K))
    err = float(np.max(np.abs(pc - expected)))
    ok = err <= 1e-12 and secs < 1e-3
    record_criterion(1, ok, f"max error {err:.2e}, {1e3 * secs:.3f} ms")
    assert ok


def test_criterion_02_two_minima():
    t0 = time.perf_counter()
    r0, rho, d = example_two_minima()
    c = np.array([[1.0, rho], [rho, 1.0]])
    r_other = np.array([[1.0, r0], [r0, 1.0]])
    gap = abs(objective(np.eye(2), np.ones(2), c, 1.0, 0.0) - objective(r_other, np.full(2, d), c, 1.0, 0.0))
    res_i = stationarity_residual(np.eye(2), np.ones(2), c, 1.0, 0.0)
    res_o = stationarity_residual(r_other, np.full(2, d), c, 1.0, 0.0)
    _, fits = two_minima_fits()
    dist = max(float(np.max(np.abs(fits[(1.3, name)].r - np.eye(2)))) for name in ("identity", "other"))
    secs = time.perf_counter() - t0
    ok = gap <= 1e-6 and res_i <= 1e-8 and res_o <= 1e-8 and dist <= 1e-8 and secs < 1.0
    record_criterion(2, ok, f"objective gap {gap:.1e}, residuals {res_i:.1e}/{res_o:.1e}, "
                            f"lam=1.3 |R-I| {dist:.1e}, {secs:.2f} s")
    assert ok


def test_criterion_03_identity_regime():
    fits, secs = timed(identity_regime_fits)
    worst_r = worst_d = worst_res = 0.0
    for c, lam, alpha, res in fits:
        worst_r = max(worst_r, float(np.max(np.abs(res.r - np.eye(c.shape[0])))))
        worst_d = max(worst_d, float(np.max(np.abs(res.d - math.sqrt(1 - alpha)))))
        worst_res = max(worst_res, res.stationarity_residual)
    ok = worst_r <= 1e-8 and worst_d <= 1e-8 and worst_res <= 1e-8 and secs < 5.0
    record_criterion(3, ok, f"50 fits: |R-I| {worst_r:.1e}, |d-sqrt(1-a)| {worst_d:.1e}, "
                            f"residual {worst_res:.1e}, {secs:.2f} s")
    assert ok


def test_criterion_04_mle_recovery():
    fits, secs = timed(mle_fits)
    worst = max(float(np.max(np.abs(res.k @ c - np.eye(c.shape[0])))) for c, _, _, res in fits)
    ok = worst <= 1e-8 and secs < 10.0
    record_criterion(4, ok, f"100 fits: max |KC - I| {worst:.1e}, {secs:.2f} s")
    assert ok


def test_criterion_05_d_solvers():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    gap, outside, non_monotone, failed = 0.0, 0, 0, 0
    for _ in range(100):
        p = int(rng.integers(2, 51))
        alpha = float(rng.uniform(-1.0, 0.9))
        prob, c = random_problem(rng, p, alpha)
        init = np.exp(rng.uniform(-1, 1, p))
        a = solve_d_diagonal_newton(prob, init=init)
        b = solve_d_exact_newton(prob, init=init)
        failed += not (a.converged and b.converged)
        gap = max(gap, float(np.max(np.abs(a.d - b.d))))
        for res in (a, b):
            non_monotone += bool(np.any(np.diff(res.objective_trace) > 0))
            if prob.lambda_min_chat > 0:
                lo, hi = d_bounds(prob.lambda_min_chat, alpha, p)
                outside += bool(np.any(res.d < lo * (1 - 1e-12)) or np.any(res.d > hi * (1 + 1e-12)))
    secs = time.perf_counter() - t0
    ok = gap <= 1e-8 and outside == 0 and non_monotone == 0 and failed == 0 and secs < 30.0
    record_criterion(5, ok, f"100 problems: max gap {gap:.1e}, outside box {outside}, "
                            f"non-monotone {non_monotone}, unconverged {failed}, {secs:.2f} s")
    assert ok


def test_criterion_06_r_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    viol = dual = 0.0
    for _ in range(100):
        p = int(rng.integers(2, 16))
        lam = float(rng.uniform(0.0, 0.6))
        s = random_s(rng, p)
        res = solve_r(s, lam)
        rep = check_dual_feasibility(res.r, res.w, s, lam)
        viol = max(viol, rep.max_offdiag_violation)
        dual = max(dual, float(np.max(np.abs(res.r @ res.w - np.eye(p)))))
    brute_gap = 0.0
    for p in (2, 3):
        for k in range(5):
            s = random_s(rng, p)
            lam = float(rng.uniform(0.0, 0.4))
            res = solve_r(s, lam)
            brute_gap = max(brute_gap, abs(r_objective(res.r, s, lam) - brute_force_r(s, lam, seed=k)))
    secs = time.perf_counter() - t0
    ok = viol <= 1e-8 and dual <= 1e-6 and brute_gap <= 1e-4 and secs < 60.0
    record_criterion(6, ok, f"box violation {viol:.1e}, |RW-I| {dual:.1e}, "
                            f"brute-force gap {brute_gap:.1e}, {secs:.2f} s")
    assert ok


def test_criterion_07_scale_invariance():
    pairs, secs = timed(scale_pairs)
    bitwise = all(np.array_equal(base.r, pow2.r) for _, _, _, _, base, _, pow2 in pairs)
    k_err = 0.0
    for _, h, h_pow2, _, base, cont, pow2 in pairs:
        for hh, other in ((h, cont), (h_pow2, pow2)):
            expected = base.k_cov / hh[:, None] / hh[None, :]
            k_err = max(k_err, float(np.max(np.abs(other.k_cov - expected))))
    support = all(np.array_equal(base.r != 0, cont.r != 0) for _, _, _, _, base, cont, _ in pairs)
    ok = bitwise and support and k_err <= 1e-8 and secs < 10.0
    record_criterion(7, ok, f"50 pairs: R bitwise equal {bitwise}, same support {support}, "
                            f"K rescaling error {k_err:.1e}, {secs:.2f} s")
    assert ok


def _criterion_8_fits():
    c2, fits2 = two_minima_fits()
    for (lam, _), res in fits2.items():
        yield c2, lam, 0.0, res
    yield from identity_regime_fits()
    yield from mle_fits()
    for sigma, h, h_pow2, cfg, base, cont, pow2 in scale_pairs():
        for hh, res in ((np.ones_like(h), base), (h, cont), (h_pow2, pow2)):
            c, _ = correlation_from_covariance(hh[:, None] * sigma * hh[None, :])
            yield c.entries, cfg.lam, cfg.alpha, res


def test_criterion_08_stationarity_and_bound():
    checked = skipped = 0
    worst_res = worst_d = 0.0
    bound_fail = 0
    for c, lam, alpha, res in _criterion_8_fits():
        if not res.converged:
            skipped += 1
            continue
        checked += 1
        r, d = res.r, res.d
        resid = stationarity_residual(r, d, c, lam, alpha)
        worst_res = max(worst_res, resid / stationarity_threshold(d, c))
        worst_d = max(worst_d, float(np.max(np.abs(explicit_d_from_r(r, lam, alpha) - d))))
        bound_fail += not consistency_bound_check(res, c, lam, alpha)[2]
    ok = worst_res <= 1.0 and worst_d <= 1e-6 and bound_fail == 0 and checked > 0
    record_criterion(8, ok, f"{checked} converged fits ({skipped} unconverged): residual/threshold "
                            f"{worst_res:.1e}, explicit-D gap {worst_d:.1e}, bound failures {bound_fail}")
    assert ok


def test_criterion_09_irrepresentability():
    t0 = time.perf_counter()
    closed_gap = 0.0
    for p in range(3, 16):
        for a in np.linspace(0.1, 10.0, 20):
            for frac in np.linspace(-0.95, 0.95, 20):
                c = frac * math.sqrt(a / (p - 1))
                pcg, gl, pd = hub_irr_closed_form(a, 1.0, c, p)
                assert pd
                k = hub_matrix(a, 1.0, c, p)
                closed_gap = max(closed_gap, abs(irr_pcglasso(k) - pcg), abs(irr_glasso(np.linalg.inv(k)) - gl))
    rng = np.random.default_rng(909)
    inv_gap = 0.0
    for _ in range(20):
        p = int(rng.integers(3, 9))
        k = np.zeros((p, p))
        iu = np.triu_indices(p, 1)
        k[iu] = rng.uniform(-0.5, 0.5, iu[0].size) * (rng.random(iu[0].size) < 0.4)
        k = k + k.T
        k += (np.abs(np.linalg.eigvalsh(k)).max() + 0.3) * np.eye(p)
        h = np.exp(rng.uniform(-2, 2, p))
        inv_gap = max(inv_gap, abs(irr_pcglasso(h[:, None] * k * h[None, :]) - irr_pcglasso(k)))
    hm = irr_heatmap(np.linspace(0.1, 10.0, 60), np.linspace(-1.0, 1.0, 61), b=1.0, p=15)
    pd_rows = [r for r in hm.rows if r.pd]
    pcg_ok = all(r.irr_pcg < 1 for r in pd_rows)
    glasso_ok = all((r.irr_glasso < 1) == (2 * abs(r.c) < 1) for r in hm.rows)
    bound_ok = all(r.irr_pcg <= HUB_PCG_CONSTANT / math.sqrt(14) for r in pd_rows)
    secs = time.perf_counter() - t0
    ok = closed_gap <= 1e-8 and inv_gap <= 1e-10 and pcg_ok and glasso_ok and bound_ok and secs < 60.0
    record_criterion(9, ok, f"closed-form gap {closed_gap:.1e}, rescaling gap {inv_gap:.1e}, "
                            f"heatmap {len(pd_rows)} PD cells: pcg<1 {pcg_ok}, glasso pattern {glasso_ok}, "
                            f"bound {bound_ok}, {secs:.1f} s")
    assert ok


def test_criterion_10_n_tilde_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst = 0.0
    for i in range(20):
        p = 2 + i % 7
        r = random_unit_diag_pd(rng, p)
        worst = max(worst, float(np.max(np.abs(n_tilde(r) @ m_tilde(r) - np.eye(p * p)))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and secs < 10.0
    record_criterion(10, ok, f"20 matrices: max |N M - I| {worst:.1e}, {secs:.2f} s")
    assert ok


def test_criterion_11_desk_study():
    t0 = time.perf_counter()
    common = dict(p=20, n_grid=(500,), replicates=20, methods=("pcglasso", "glasso"), selection="bic", seed=2024)
    hub = run_study(StudyConfig(structure="hub", **common))
    by_rep = {}
    for r in hub.records:
        by_rep.setdefault(r["replicate"], {})[r["method"]] = r
    paired = [v for v in by_rep.values() if len(v) == 2]
    wins = sum(v["pcglasso"]["rmse_offdiag_nz"] < v["glasso"]["rmse_offdiag_nz"] for v in paired)
    share = wins / 20
    pcg_full = hub.summary[("pcglasso", 500)]["rmse_full"][0]
    gl_full = hub.summary[("glasso", 500)]["rmse_full"][0]
    other = run_study(StudyConfig(structure="block_random", blocks=4, **common))
    pcg_br = other.summary[("pcglasso", 500)]["rmse_full"][0]
    gl_br = other.summary[("glasso", 500)]["rmse_full"][0]
    secs = time.perf_counter() - t0
    ok = (share >= 0.8 and pcg_full < gl_full and pcg_br <= 1.25 * gl_br and secs < 600
          and hub.failures == 0 and other.failures == 0)
    record_criterion(11, ok, f"hub: offdiag-nz wins {wins}/20, rmse_full {pcg_full:.4f} vs {gl_full:.4f}; "
                             f"block_random rmse_full {pcg_br:.4f} vs {gl_br:.4f} "
                             f"(ratio {pcg_br / gl_br:.2f}); {secs:.0f} s")
    assert ok


def test_criterion_12_d_solver_timing():
    t0 = time.perf_counter()
    table = bench_d_solvers([200, 400], replicates=10, seed=12)
    parts = []
    ordered = True
    for p in (200, 400):
        dm, em = table.mean(p, "diagonal"), table.mean(p, "exact")
        ordered &= dm < em
        parts.append(f"p={p}: {dm:.2f} ms vs {em:.2f} ms")
    secs = time.perf_counter() - t0
    ok = ordered and table.max_gap <= 1e-8 and secs < 300
    record_criterion(12, ok, f"diagonal vs exact Newton {', '.join(parts)}; agreement {table.max_gap:.1e}; "
                             f"{secs:.1f} s")
    assert ok
