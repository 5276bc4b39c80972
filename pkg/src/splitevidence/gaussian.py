"""Gaussian moment and natural-parameter algebra.

The combination rules only ever touch Gaussians through two primitives: the
log normalizing constant of an unnormalized Gaussian given in natural form,
and conversions between moment form (mean, cov) and natural form
(eta = cov^-1 mean, lam = cov^-1).  Everything is routed through Cholesky
factors; no matrix is ever inverted explicitly for a quadratic form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DomainError, SpdError

LOG_2PI = math.log(2.0 * math.pi)


def chol_spd(a: np.ndarray, sym_tol: float = 1e-10, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises SpdError carrying the smallest eigenvalue when the matrix is
    asymmetric beyond ``sym_tol`` (relative) or not positive definite.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpdError(f"{what} is not square: shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if a.size and float(np.abs(a - a.T).max()) > sym_tol * scale:
        raise SpdError(f"{what} is not symmetric to tolerance {sym_tol}")
    try:
        return cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(a).min()) if a.size else float("nan")
        raise SpdError(f"{what} is not positive definite", min_eigenvalue=min_eig) from None


@dataclass(eq=False)
class GaussianMoments:
    """Mean vector and covariance matrix of a p-dimensional Gaussian."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.dim, self.dim):
            raise DomainError(
                f"covariance shape {self.cov.shape} does not match mean length {self.dim}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def chol(self) -> np.ndarray:
        return chol_spd(self.cov, what="covariance")


@dataclass(eq=False)
class NaturalGaussian:
    """Natural parameters (eta, lam) with the cached log normalizer xi.

    The density is exp(eta'theta - theta'lam theta / 2 + xi), so that
    xi = -(p log 2pi - log|lam| + eta'lam^-1 eta) / 2.
    """

    eta: np.ndarray
    lam: np.ndarray
    xi: float


def log_normalizer_natural(eta: np.ndarray, lam: np.ndarray) -> float:
    """xi such that exp(eta'x - x'lam x/2 + xi) integrates to one."""
    eta = np.asarray(eta, dtype=float)
    p = eta.shape[0]
    if p == 0:
        return 0.0
    L = chol_spd(lam, what="precision")
    half = solve_triangular(L, eta, lower=True)
    logdet_lam = 2.0 * float(np.sum(np.log(np.diag(L))))
    quad = float(half @ half)
    return -0.5 * (p * LOG_2PI - logdet_lam + quad)


def to_natural(m: GaussianMoments) -> NaturalGaussian:
    L = m.chol()
    ident = np.eye(m.dim)
    lam = cho_solve((L, True), ident)
    lam = 0.5 * (lam + lam.T)
    eta = cho_solve((L, True), m.mean)
    xi = log_normalizer_natural(eta, lam)
    return NaturalGaussian(eta=eta, lam=lam, xi=xi)


def to_moments(n: NaturalGaussian) -> GaussianMoments:
    L = chol_spd(n.lam, what="precision")
    ident = np.eye(n.eta.shape[0])
    cov = cho_solve((L, True), ident)
    cov = 0.5 * (cov + cov.T)
    mean = cho_solve((L, True), n.eta)
    return GaussianMoments(mean=mean, cov=cov)


def log_mvn(x: np.ndarray, m: GaussianMoments) -> float:
    """Log density of N(mean, cov) at x."""
    L = m.chol()
    half = solve_triangular(L, np.asarray(x, dtype=float) - m.mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (m.dim * LOG_2PI + logdet + float(half @ half))


def log_gaussian_product_integral_natural(etas: np.ndarray, lams: np.ndarray) -> float:
    """log of the integral of a product of Gaussian densities in natural form.

    ``etas`` has shape (S, p) and ``lams`` shape (S, p, p).  The result is
    sum_s xi_s - xi_pooled where the pooled parameters are the sums.  For a
    single factor the pooled parameters coincide with the factor's own, so
    the result is exactly 0.0.
    """
    etas = np.asarray(etas, dtype=float)
    lams = np.asarray(lams, dtype=float)
    if etas.ndim != 2 or lams.ndim != 3:
        raise DomainError("expected stacked natural parameters (S,p) and (S,p,p)")
    if etas.shape[0] == 0:
        raise DomainError("empty factor list")
    xi_parts = [log_normalizer_natural(etas[s], lams[s]) for s in range(etas.shape[0])]
    xi_pooled = log_normalizer_natural(etas.sum(axis=0), lams.sum(axis=0))
    return float(sum(xi_parts) - xi_pooled)


def log_gaussian_product_integral(parts: Sequence[GaussianMoments]) -> float:
    """log integral of the product of Gaussian densities given in moment form."""
    if len(parts) == 0:
        raise DomainError("empty factor list")
    dims = {m.dim for m in parts}
    if len(dims) != 1:
        raise DomainError(f"factors have mixed dimensions {sorted(dims)}")
    nats = [to_natural(m) for m in parts]
    etas = np.stack([n.eta for n in nats])
    lams = np.stack([n.lam for n in nats])
    return log_gaussian_product_integral_natural(etas, lams)


def consensus_moments(parts: Sequence[GaussianMoments]) -> GaussianMoments:
    """Precision-weighted pooling of per-shard Gaussian moments."""
    if len(parts) == 0:
        raise DomainError("empty factor list")
    dims = {m.dim for m in parts}
    if len(dims) != 1:
        raise DomainError(f"factors have mixed dimensions {sorted(dims)}")
    nats = [to_natural(m) for m in parts]
    lam = np.sum([n.lam for n in nats], axis=0)
    eta = np.sum([n.eta for n in nats], axis=0)
    return to_moments(NaturalGaussian(eta=eta, lam=lam, xi=0.0))


def batched_log_normalizer(eta: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """log_normalizer_natural over a stack of precisions sharing one eta.

    ``eta`` has shape (p,) and ``lams`` shape (N, p, p); returns shape (N,).
    Used on conditional Gaussian streams where eta is constant over draws.
    """
    lams = np.asarray(lams, dtype=float)
    n, p, _ = lams.shape
    try:
        chols = np.linalg.cholesky(lams)
    except np.linalg.LinAlgError:
        for i in range(n):
            chol_spd(lams[i], what=f"precision record {i}")
        raise
    logdet = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    rhs = np.broadcast_to(eta, (n, p))[..., None]
    half = np.linalg.solve(chols, rhs)[..., 0]
    quad = np.einsum("np,np->n", half, half)
    return -0.5 * (p * LOG_2PI - logdet + quad)
