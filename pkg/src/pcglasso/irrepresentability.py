"""Irrepresentability values for PCGLASSO and GLASSO.

Vectorization is column-major throughout: vec(X)[i + j * p] = X[i, j].
With this ordering (A kron B) vec(X) = vec(B X A^T).

The support S of K* contains the diagonal. Pi is the off-diagonal sign
pattern of K* with a zero diagonal. Both values have the form

    || G[S^c, S] G[S, S]^{-1} vec(Pi)[S] ||_inf

with G = Gamma-tilde (built from R* only) for PCGLASSO and G = Sigma* kron
Sigma* for GLASSO.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import linalg

from .exceptions import ConfigurationError, InvalidInputError, NumericalError
from .matrix_core import factorize_precision, inv_pd, is_positive_definite, require_pd

SUPPORT_TOL = 1e-12
MAX_GENERIC_P = 60
HUB_PCG_CONSTANT = 4.0 * math.sqrt(2.0) / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True)
class SupportSet:
    p: int
    mask: np.ndarray  # p x p boolean, diagonal included

    @classmethod
    def of(cls, k: np.ndarray, tol: float = SUPPORT_TOL) -> "SupportSet":
        k = np.asarray(k, dtype=float)
        mask = np.abs(k) > tol
        mask |= mask.T
        np.fill_diagonal(mask, True)
        return cls(k.shape[0], mask)

    @property
    def pairs(self) -> frozenset:
        return frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(self.mask))))

    @property
    def complement(self) -> frozenset:
        return frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(~self.mask))))

    def vec_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices of S and S^c in column-major vec order."""
        flat = self.mask.ravel(order="F")
        return np.flatnonzero(flat), np.flatnonzero(~flat)


@dataclass(frozen=True)
class IrrReport:
    irr_pcg: float
    irr_glasso: float
    pcg_satisfied: bool
    glasso_satisfied: bool
    pd_input: bool
    support: SupportSet


class HubIrr(NamedTuple):
    pcg: float
    glasso: float
    pd: bool


def _diag_vec_index(p: int) -> np.ndarray:
    return np.arange(p) * (p + 1)


def _p_diag(p: int) -> np.ndarray:
    m = np.zeros(p * p)
    m[_diag_vec_index(p)] = 1.0
    return np.diag(m)


def _check_generic(p: int):
    if p > MAX_GENERIC_P:
        raise ConfigurationError(
            f"p = {p} exceeds the dense p^2 x p^2 limit of {MAX_GENERIC_P}; use closed forms"
        )


def _unit_diag_pd(r) -> np.ndarray:
    r = require_pd(np.asarray(r, dtype=float), "R*")
    if not np.allclose(np.diag(r), 1.0, atol=1e-12):
        raise InvalidInputError("R* must have a unit diagonal")
    return r


def m_r(r) -> np.ndarray:
    """I - 1/2 P_diag (I kron R + R kron I)."""
    r = np.asarray(r, dtype=float)
    p = r.shape[0]
    eye = np.eye(p)
    return np.eye(p * p) - 0.5 * _p_diag(p) @ (np.kron(eye, r) + np.kron(r, eye))


def m_tilde(r) -> np.ndarray:
    return m_r(r) + _p_diag(np.asarray(r).shape[0])


def n_tilde(r) -> np.ndarray:
    """Closed-form inverse of m_tilde: P_perp + 1/2 P_diag (I kron R + R kron I)."""
    r = np.asarray(r, dtype=float)
    p = r.shape[0]
    eye = np.eye(p)
    pd_ = _p_diag(p)
    return (np.eye(p * p) - pd_) + 0.5 * pd_ @ (np.kron(eye, r) + np.kron(r, eye))


def gamma_tilde(r_star) -> np.ndarray:
    """P_perp (Ri kron Ri) + 1/2 P_diag (Ri kron I + I kron Ri), Ri = (R*)^{-1}."""
    r = _unit_diag_pd(r_star)
    p = r.shape[0]
    _check_generic(p)
    ri = inv_pd(r)
    eye = np.eye(p)
    g = np.kron(ri, ri)
    d = _diag_vec_index(p)
    g[d, :] = 0.5 * (np.kron(ri, eye)[d, :] + np.kron(eye, ri)[d, :])
    return g


def _irr_value(g: np.ndarray, k: np.ndarray) -> float:
    p = k.shape[0]
    sup = SupportSet.of(k)
    s_idx, sc_idx = sup.vec_index()
    pi = np.sign(k) * sup.mask
    np.fill_diagonal(pi, 0.0)
    pi_s = pi.ravel(order="F")[s_idx]
    if sc_idx.size == 0 or not pi_s.any():
        return 0.0
    g_ss = g[np.ix_(s_idx, s_idx)]
    cond = np.linalg.cond(g_ss)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericalError(f"Gamma_SS is numerically singular (cond = {cond:.3g})")
    x = linalg.solve(g_ss, pi_s)
    return float(np.max(np.abs(g[np.ix_(sc_idx, s_idx)] @ x)))


def irr_pcglasso(k_star) -> float:
    k = require_pd(np.asarray(k_star, dtype=float), "K*")
    _check_generic(k.shape[0])
    r = factorize_precision(k).r
    return _irr_value(gamma_tilde(r), k)


def irr_glasso(sigma_star) -> float:
    sigma = require_pd(np.asarray(sigma_star, dtype=float), "Sigma*")
    _check_generic(sigma.shape[0])
    k = inv_pd(sigma)
    # exact zeros of K* are lost in the inversion; clean them relative to the diagonal
    scale = np.sqrt(np.outer(np.diag(k), np.diag(k)))
    k = np.where(np.abs(k) > 1e-10 * scale, k, 0.0)
    return _irr_value(np.kron(sigma, sigma), k)


def irr_report(k_star) -> IrrReport:
    k = np.asarray(k_star, dtype=float)
    pd_input = bool(np.all(np.isfinite(k))) and is_positive_definite(k)
    if not pd_input:
        raise InvalidInputError("K* must be positive definite")
    pcg = irr_pcglasso(k)
    gl = irr_glasso(inv_pd(k))
    return IrrReport(pcg, gl, pcg < 1.0, gl < 1.0, pd_input, SupportSet.of(k))


def hub_matrix(a: float, b: float, c: float, p: int) -> np.ndarray:
    """K_11 = a, K_ii = b (i >= 2), K_1i = K_i1 = c; no PD check."""
    k = np.diag(np.full(p, float(b)))
    k[0, 0] = a
    k[0, 1:] = c
    k[1:, 0] = c
    return k


def hub_pd(a: float, b: float, c: float, p: int) -> bool:
    return a > 0 and b > 0 and c * c / (a * b) < 1.0 / (p - 1)


def hub_irr_closed_form(a: float, b: float, c: float, p: int) -> HubIrr:
    if a <= 0 or b <= 0:
        raise InvalidInputError("a and b must be positive")
    if p < 2:
        raise InvalidInputError("p must be >= 2")
    t = c * c / (a * b)
    pcg = abs(c) / math.sqrt(a * b) * (2.0 - (p - 1) * t)
    return HubIrr(pcg, 2.0 * abs(c) / b, hub_pd(a, b, c, p))


@dataclass(frozen=True)
class HeatmapRow:
    a: float
    c: float
    irr_pcg: float
    irr_glasso: float
    pd: bool


@dataclass
class Heatmap:
    rows: list[HeatmapRow]
    b: float
    p: int
    checked: int  # PD cells cross-checked against the generic path
    max_check_gap: float

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["a", "c", "irr_pcg", "irr_glasso", "pd"])
        for r in self.rows:
            w.writerow([repr(r.a), repr(r.c), repr(r.irr_pcg), repr(r.irr_glasso), int(r.pd)])


def irr_heatmap(a_grid: Iterable[float], c_grid: Iterable[float], b: float = 1.0, p: int = 15, *,
                check_fraction: float = 0.05, check_tol: float = 1e-8, seed=0) -> Heatmap:
    """Closed-form IRR values on an (a, c) grid.

    A random ``check_fraction`` of the PD cells (at least one when any
    exists) is recomputed through the generic Kronecker path; a gap above
    ``check_tol`` raises NumericalError.
    """
    a_grid = [float(x) for x in a_grid]
    c_grid = [float(x) for x in c_grid]
    if not all(map(math.isfinite, a_grid + c_grid)):
        raise InvalidInputError("grids must be finite")
    rows = [HeatmapRow(a, c, *hub_irr_closed_form(a, b, c, p)) for a in a_grid for c in c_grid]
    pd_idx = [i for i, r in enumerate(rows) if r.pd]
    checked, gap = 0, 0.0
    if pd_idx and check_fraction > 0 and p <= MAX_GENERIC_P:
        rng = np.random.default_rng(seed)
        m = max(1, int(round(check_fraction * len(pd_idx))))
        for i in rng.choice(pd_idx, size=min(m, len(pd_idx)), replace=False):
            r = rows[i]
            k = hub_matrix(r.a, b, r.c, p)
            gp = abs(irr_pcglasso(k) - r.irr_pcg)
            gg = abs(irr_glasso(inv_pd(k)) - r.irr_glasso)
            gap = max(gap, gp, gg)
            checked += 1
        if gap > check_tol:
            raise NumericalError(f"closed form and generic path differ by {gap:.3g}")
    return Heatmap(rows, float(b), int(p), checked, gap)
