"""Unit-diagonal R update by dual block coordinate descent.

Solves

    min_R  -log det R + tr(R S) + lam * ||R||_1,off   over unit-diagonal PD R

through its dual  max_W log det W - tr W  s.t. |W_ij - S_ij| <= lam (i != j),
one column of W at a time. Each column update is a LASSO in
beta = W11^{-1} w12, solved by cyclic coordinate descent.

Sign convention: while the sweeps run, the off-diagonal entries of column j
of the working matrix hold beta for that column (so the working matrix is
-R off the diagonal, with zero diagonal). The final step negates it, writes
the unit diagonal and symmetrizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import ConfigurationError, InvalidInputError
from .matrix_core import is_positive_definite, symmetrize


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


@numba.njit(cache=True, nogil=True)
def _soft(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


# A small W change per sweep does not by itself bound the box violation,
# which is governed by the inner LASSO tolerance; require both.
BOX_FRACTION = 0.05


@numba.njit(cache=True, nogil=True)
def _box_violation(s, w, lam):
    p = s.shape[0]
    worst = 0.0
    for i in range(p):
        for j in range(i + 1, p):
            e = abs(w[i, j] - s[i, j]) - lam
            if e > worst:
                worst = e
    return worst


@numba.njit(cache=True, nogil=True)
def _r_sweeps(s, lam, tau, work, w, max_sweeps, max_inner):
    p = s.shape[0]
    v = np.empty(p)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        big_delta = 0.0
        for j in range(p):
            # v = W @ work[:, j]; work[j, j] == 0
            for i in range(p):
                acc = 0.0
                for k in range(p):
                    acc += w[i, k] * work[k, j]
                v[i] = acc
            for _ in range(max_inner):
                dmax = 0.0
                for i in range(p):
                    if i == j:
                        continue
                    wii = w[i, i]
                    c = _soft(s[i, j] - v[i] + wii * work[i, j], lam) / wii
                    delta = c - work[i, j]
                    if delta != 0.0:
                        work[i, j] = c
                        for k in range(p):
                            v[k] += delta * w[k, i]
                        ad = abs(delta)
                        if ad > dmax:
                            dmax = ad
                if dmax * p < tau:
                    break
            # column change measured off the diagonal; the diagonal entry is
            # recomputed below from the unit-diagonal condition
            change = 0.0
            for i in range(p):
                if i != j:
                    change += abs(w[i, j] - v[i])
            if change > big_delta:
                big_delta = change
            for i in range(p):
                if i != j:
                    w[i, j] = v[i]
                    w[j, i] = v[i]
            wjj = 1.0
            for i in range(p):
                if i != j:
                    wjj += w[i, j] * work[i, j]
            dj = abs(wjj - w[j, j])
            if dj > big_delta:
                big_delta = dj
            w[j, j] = wjj
        if big_delta < tau and _box_violation(s, w, lam) <= BOX_FRACTION * tau:
            converged = True
            break
    return sweeps, converged


@numba.njit(cache=True, nogil=True)
def _glasso_sweeps(s, lam, tau, beta, w, max_sweeps, max_inner):
    """Classic GLASSO: W_jj = S_jj fixed, off-diagonal box of width lam.

    W must start dual feasible (inside the box and PD); each column update
    then keeps it PD.
    """
    p = s.shape[0]
    v = np.empty(p)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        big_delta = 0.0
        for j in range(p):
            for i in range(p):
                acc = 0.0
                for k in range(p):
                    if k != j:
                        acc += w[i, k] * beta[k, j]
                v[i] = acc
            for _ in range(max_inner):
                dmax = 0.0
                for i in range(p):
                    if i == j:
                        continue
                    wii = w[i, i]
                    c = _soft(s[i, j] - v[i] + wii * beta[i, j], lam) / wii
                    delta = c - beta[i, j]
                    if delta != 0.0:
                        beta[i, j] = c
                        for k in range(p):
                            v[k] += delta * w[k, i]
                        ad = abs(delta)
                        if ad > dmax:
                            dmax = ad
                if dmax * p < tau:
                    break
            change = 0.0
            for i in range(p):
                if i != j:
                    change += abs(w[i, j] - v[i])
                    w[i, j] = v[i]
                    w[j, i] = v[i]
            if change > big_delta:
                big_delta = change
        if big_delta < tau:
            converged = True
            break
    return sweeps, converged


@dataclass
class RSolveResult:
    r: np.ndarray
    w: np.ndarray
    sweeps: int
    converged: bool

    def __iter__(self):
        # allows ``r, w = solve_r(...)``
        yield self.r
        yield self.w


@dataclass(frozen=True)
class DualFeasibilityReport:
    max_offdiag_violation: float
    diag_residual: float
    kkt_sign_violations: int


def default_tau(s: np.ndarray) -> float:
    """1e-7 times the mean absolute off-diagonal of S (mean diagonal if S is diagonal)."""
    p = s.shape[0]
    off = np.abs(s[~np.eye(p, dtype=bool)])
    scale = float(off.mean()) if off.size and off.mean() > 0 else float(np.mean(np.diag(s)))
    return 1e-7 * scale


def _validate(s, lam):
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidInputError("S must be square")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("S contains non-finite entries")
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    if np.any(np.diag(s) <= 0):
        raise InvalidInputError("S must have a strictly positive diagonal")
    if lam == 0 and not is_positive_definite(s):
        raise InvalidInputError("S is singular and lambda = 0: the primal problem is unbounded")
    return symmetrize(s)


def solve_r(s, lam: float, tol: float | None = None, warm=None, *, max_sweeps: int = 10_000,
            max_inner: int = 10_000) -> RSolveResult:
    """Minimize -log det R + tr(RS) + lam ||R||_1,off over unit-diagonal PD R.

    ``warm`` is an optional pair (R0, W0); otherwise the cold start R = 0,
    W = I is used. Returns R (unit diagonal, symmetric) and W ~ R^{-1}.
    """
    s = _validate(s, lam)
    p = s.shape[0]
    tau = default_tau(s) if tol is None else float(tol)
    if tau <= 0:
        raise ConfigurationError("tolerance must be positive")
    if warm is None:
        work = np.zeros((p, p))
        w = np.eye(p)
    else:
        r0, w0 = warm
        work = -np.array(r0, dtype=float)
        np.fill_diagonal(work, 0.0)
        w = np.array(w0, dtype=float)
    work = np.ascontiguousarray(work)
    w = np.ascontiguousarray(w)
    sweeps, converged = _r_sweeps(s, float(lam), tau, work, w, max_sweeps, max_inner)
    r = -work + 0.0  # + 0.0 turns -0.0 into 0.0
    np.fill_diagonal(r, 1.0)
    r = symmetrize(r)
    np.fill_diagonal(r, 1.0)
    return RSolveResult(r, symmetrize(w), int(sweeps), bool(converged))


def check_dual_feasibility(r, w, s, lam: float, sign_tol: float = 1e-6) -> DualFeasibilityReport:
    """Box violation of W around S, |diag(RW) - 1|, and KKT sign mismatches.

    On the support of R the primal-dual pair must satisfy
    W_ij - S_ij = lam * sign(R_ij); entries where this fails by more than
    ``sign_tol`` (relative to 1 + lam) are counted.
    """
    r, w, s = (np.asarray(x, dtype=float) for x in (r, w, s))
    p = s.shape[0]
    off = ~np.eye(p, dtype=bool)
    gap = (w - s)[off]
    viol = float(max(np.max(np.abs(gap) - lam, initial=0.0), 0.0)) if p > 1 else 0.0
    diag_res = float(np.max(np.abs(np.diag(r @ w) - 1.0)))
    nz = off & (r != 0.0)
    mismatch = np.abs((w - s)[nz] - lam * np.sign(r[nz])) > sign_tol * (1.0 + lam)
    return DualFeasibilityReport(viol, diag_res, int(np.count_nonzero(mismatch)))


def r_objective(r, s, lam: float) -> float:
    from .matrix_core import logdet_pd

    r = np.asarray(r, dtype=float)
    off = np.abs(r).sum() - np.abs(np.diag(r)).sum()
    return -logdet_pd(r) + float(np.sum(r * s)) + lam * off


def glasso_fit(s, lam: float, tol: float | None = None, *, max_sweeps: int = 10_000,
               max_inner: int = 10_000) -> np.ndarray:
    """Standard graphical lasso estimate (off-diagonal penalty only).

    Uses the same column-wise dual coordinate descent with the diagonal of
    W pinned to diag(S).
    """
    s = _validate(s, lam)
    p = s.shape[0]
    if lam == 0:
        from .matrix_core import inv_pd

        return inv_pd(s)
    tau = default_tau(s) if tol is None else float(tol)
    beta = np.zeros((p, p))
    off = ~np.eye(p, dtype=bool)
    # feasible PD start: pull S toward its diagonal just enough to enter the box
    off_max = float(np.max(np.abs(s[off]))) if p > 1 else 0.0
    t = 1.0 if off_max <= lam else lam / off_max
    w = (1.0 - t) * s + t * np.diag(np.diag(s))
    w = np.ascontiguousarray(symmetrize(w))
    _glasso_sweeps(s, float(lam), tau, beta, w, max_sweeps, max_inner)
    k = np.zeros((p, p))
    for j in range(p):
        idx = off[j]
        b = beta[idx, j]
        kjj = 1.0 / (w[j, j] - float(w[idx, j] @ b))
        k[j, j] = kjj
        k[idx, j] = -b * kjj
    return symmetrize(k)
