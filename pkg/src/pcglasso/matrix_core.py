"""Dense symmetric matrix helpers and the K = D R D factorization.

Every symmetric output is symmetrized as ``(M + M.T) / 2`` before it is
returned, so callers may rely on exact (bitwise) symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return (m + m.T) / 2.0


def _check_square(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def is_positive_definite(m: np.ndarray) -> bool:
    try:
        linalg.cholesky(symmetrize(m), lower=True)
    except linalg.LinAlgError:
        return False
    return True


def require_pd(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = _check_square(m, name)
    if not is_positive_definite(m):
        raise InvalidInputError(f"{name} is not positive definite")
    return m


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    m = _check_square(m)
    return float(linalg.eigvalsh(symmetrize(m), subset_by_index=[0, 0])[0])


def logdet_pd(m: np.ndarray) -> float:
    """log det of a PD matrix via Cholesky; raises on non-PD input."""
    try:
        chol = linalg.cholesky(symmetrize(m), lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidInputError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def inv_pd(m: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(symmetrize(m), lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidInputError("matrix is not positive definite") from exc
    return symmetrize(linalg.cho_solve(c, np.eye(m.shape[0])))


@dataclass(frozen=True)
class SampleData:
    """n x p observations; columns are centered on construction."""

    rows: np.ndarray

    def __post_init__(self):
        x = np.array(self.rows, dtype=float, copy=True)
        if x.ndim != 2:
            raise InvalidInputError("data must be a 2-d array (rows = observations)")
        n, p = x.shape
        if n < 2 or p < 2:
            raise InvalidInputError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("data contains non-finite values")
        x -= x.mean(axis=0)
        var = np.einsum("ij,ij->j", x, x) / n
        bad = np.flatnonzero(var <= 0.0)
        if bad.size:
            raise InvalidInputError(f"columns with zero variance: {bad.tolist()}")
        x.setflags(write=False)
        object.__setattr__(self, "rows", x)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def covariance(self) -> np.ndarray:
        """Sample covariance with 1/n normalization."""
        return symmetrize(self.rows.T @ self.rows / self.n)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric, unit-diagonal matrix with |entries| <= 1."""

    entries: np.ndarray

    def __post_init__(self):
        c = symmetrize(_check_square(self.entries, "correlation matrix"))
        if c.shape[0] < 1:
            raise InvalidInputError("empty correlation matrix")
        if np.max(np.abs(np.diag(c) - 1.0)) > 1e-10:
            raise InvalidInputError("correlation matrix must have unit diagonal")
        if np.max(np.abs(c)) > 1.0 + 1e-10:
            raise InvalidInputError("correlation entries must lie in [-1, 1]")
        np.fill_diagonal(c, 1.0)
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def lambda_min(self) -> float:
        return min_eigenvalue(self.entries)

    def offdiag_max(self) -> float:
        """||C - I||_inf, the largest absolute off-diagonal correlation."""
        if self.p < 2:
            return 0.0
        return float(np.max(np.abs(self.entries - np.eye(self.p))))


def as_correlation(c) -> CorrelationMatrix:
    return c if isinstance(c, CorrelationMatrix) else CorrelationMatrix(np.asarray(c, dtype=float))


def correlation_from_covariance(sigma: np.ndarray) -> tuple[CorrelationMatrix, np.ndarray]:
    """Return (H Sigma H, diag(H)) with H = diag(Sigma)^(-1/2)."""
    sigma = symmetrize(_check_square(sigma, "covariance"))
    diag = np.diag(sigma)
    if np.any(diag <= 0.0):
        raise InvalidInputError("covariance has non-positive diagonal entries")
    scale = 1.0 / np.sqrt(diag)
    c = sigma * scale[:, None] * scale[None, :]
    c = np.clip(symmetrize(c), -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(c), scale


def correlation_from_data(data: SampleData) -> tuple[CorrelationMatrix, np.ndarray]:
    if not isinstance(data, SampleData):
        data = SampleData(np.asarray(data, dtype=float))
    return correlation_from_covariance(data.covariance())


@dataclass(frozen=True)
class PrecisionFactorization:
    """K = D R D with unit-diagonal R and positive diagonal d.

    ``scale`` optionally carries diag(Sigma)^(-1/2) so that a factorization
    obtained on the correlation scale can be mapped back to the data scale.
    """

    r: np.ndarray
    d: np.ndarray
    scale: np.ndarray | None = None

    def __post_init__(self):
        r = symmetrize(_check_square(self.r, "R"))
        d = np.array(self.d, dtype=float).ravel()
        if d.shape[0] != r.shape[0]:
            raise InvalidInputError("d and R dimensions disagree")
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            raise InvalidInputError("d must be strictly positive")
        np.fill_diagonal(r, 1.0)
        r.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "d", d)
        if self.scale is not None:
            s = np.array(self.scale, dtype=float).ravel()
            s.setflags(write=False)
            object.__setattr__(self, "scale", s)

    @property
    def p(self) -> int:
        return self.r.shape[0]

    @property
    def k(self) -> np.ndarray:
        return compose_precision(self)

    def rescaled(self, scale: np.ndarray) -> "PrecisionFactorization":
        """Factorization of H K H for H = diag(scale); R is unchanged."""
        scale = np.asarray(scale, dtype=float).ravel()
        return PrecisionFactorization(self.r, scale * self.d, scale=scale)


def compose_precision(f: PrecisionFactorization) -> np.ndarray:
    return symmetrize(f.d[:, None] * f.r * f.d[None, :])


def factorize_precision(k: np.ndarray) -> PrecisionFactorization:
    k = require_pd(k, "precision matrix")
    k = symmetrize(k)
    d = np.sqrt(np.diag(k))
    r = k / d[:, None] / d[None, :]
    return PrecisionFactorization(r, d)


def partial_correlations(k: np.ndarray) -> np.ndarray:
    """P_ij = -K_ij / sqrt(K_ii K_jj), unit diagonal."""
    f = factorize_precision(k)
    pc = -np.array(f.r)
    np.fill_diagonal(pc, 1.0)
    return pc


def offdiag_support(m: np.ndarray) -> np.ndarray:
    """Boolean mask of exactly nonzero off-diagonal entries."""
    mask = np.asarray(m) != 0.0
    np.fill_diagonal(mask, False)
    return mask


def edge_count(m: np.ndarray) -> int:
    """Number of unordered pairs i < j with m_ij != 0."""
    return int(np.count_nonzero(np.triu(offdiag_support(m), 1)))
