"""Sparse precision builders for the latent Gaussian components.

Each builder returns a :class:`SparsePrecision`: the (unit-scale) precision
matrix together with its rank deficiency, the constraint vectors spanning its
null space, and the log generalized determinant (product of nonzero
eigenvalues).  Intrinsic components keep their exact singular precision; the
inference engine enforces the constraints by conditioning, never by jitter.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.linalg import cholesky_banded, solve_triangular

from .priors import ConfigurationError

__all__ = [
    "SparsePrecision",
    "build_iid",
    "build_rw2",
    "build_cyclic_rw2",
    "pacf_to_ar2",
    "build_ar2",
    "build_mv_iid",
    "scale_precision",
    "reference_marginal_sd",
]


@dataclass(frozen=True)
class SparsePrecision:
    """A symmetric positive semi-definite precision with declared null space.

    ``log_gdet`` is the sum of log nonzero eigenvalues, so that the density
    of the improper Gaussian is well-defined after conditioning on the
    constraints.  ``constraints`` has one row per null-space direction.
    """

    matrix: sparse.csc_array
    rank_deficiency: int = 0
    constraints: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    log_gdet: float = 0.0

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _as_csc(M) -> sparse.csc_array:
    Q = sparse.csc_array(M)
    Q.eliminate_zeros()
    return Q


def build_iid(n: int) -> SparsePrecision:
    """Identity precision for n exchangeable effects."""
    if n < 1:
        raise ConfigurationError(f"iid component needs n >= 1, got {n}")
    return SparsePrecision(matrix=_as_csc(sparse.eye_array(n, format="csc")))


def _second_difference(n: int) -> sparse.csc_array:
    data = np.tile([1.0, -2.0, 1.0], (n - 2, 1))
    offsets = np.arange(n - 2)
    rows = np.repeat(np.arange(n - 2), 3)
    cols = (offsets[:, None] + np.arange(3)[None, :]).ravel()
    return sparse.csc_array(
        sparse.coo_array((data.ravel(), (rows, cols)), shape=(n - 2, n))
    )


def build_rw2(n: int) -> SparsePrecision:
    """Second-order random walk precision D2' D2 (interior stencil
    1, -4, 6, -4, 1), improper with the constant and the linear trend in its
    null space."""
    if n < 3:
        raise ConfigurationError(f"rw2 component needs n >= 3, got {n}")
    D2 = _second_difference(n)
    Q = _as_csc(D2.T @ D2)
    constraints = np.vstack([np.ones(n), np.arange(1.0, n + 1.0)])
    # nonzero eigenvalues of D2'D2 equal the spectrum of the pentadiagonal
    # D2 D2', whose banded Cholesky gives the log-determinant in O(n)
    G = (D2 @ D2.T).toarray()
    bands = np.zeros((3, n - 2))
    bands[0, 2:] = np.diagonal(G, 2)
    bands[1, 1:] = np.diagonal(G, 1)
    bands[2, :] = np.diagonal(G)
    chol = cholesky_banded(bands, lower=False)
    log_gdet = 2.0 * float(np.sum(np.log(chol[-1])))
    return SparsePrecision(
        matrix=Q, rank_deficiency=2, constraints=constraints, log_gdet=log_gdet
    )


def build_cyclic_rw2(n: int, period: int) -> SparsePrecision:
    """Cyclic second-order random walk over one period.

    The component has dimension = period (observations map onto it by index
    mod period); the matrix is the circulant with first row
    (6, -4, 1, 0, ..., 0, 1, -4), singular only along the constant.
    """
    if period < 5:
        raise ConfigurationError(f"cyclic_rw2 needs period >= 5, got {period}")
    if n < 1:
        raise ConfigurationError(f"cyclic_rw2 needs n >= 1 observations, got {n}")
    p = period
    first = np.zeros(p)
    first[[0, 1, 2, p - 2, p - 1]] = [6.0, -4.0, 1.0, 1.0, -4.0]
    rows = np.repeat(np.arange(p), 5)
    cols = (np.arange(p)[:, None] + np.array([0, 1, 2, p - 2, p - 1])[None, :]) % p
    vals = np.tile([6.0, -4.0, 1.0, 1.0, -4.0], p)
    Q = _as_csc(sparse.coo_array((vals, (rows, cols.ravel())), shape=(p, p)))
    # circulant spectrum: (2 cos(2 pi k / p) - 2)^2, zero only at k = 0
    eig = (2.0 * np.cos(2.0 * np.pi * np.arange(1, p) / p) - 2.0) ** 2
    return SparsePrecision(
        matrix=Q,
        rank_deficiency=1,
        constraints=np.ones((1, p)),
        log_gdet=float(np.sum(np.log(eig))),
    )


def pacf_to_ar2(pacf1: float, pacf2: float) -> tuple:
    """Durbin-Levinson map from the first two partial autocorrelations to
    AR(2) coefficients: a1 = pacf1*(1 - pacf2), a2 = pacf2.  Any pacfs in
    (-1, 1) give a stationary model."""
    if not (abs(pacf1) < 1 and abs(pacf2) < 1):
        raise ConfigurationError(
            f"partial autocorrelations must lie in (-1, 1), got ({pacf1}, {pacf2})"
        )
    return pacf1 * (1.0 - pacf2), pacf2


def build_ar2(n: int, pacf1: float, pacf2: float) -> SparsePrecision:
    """Stationary unit-marginal-variance AR(2) precision, bandwidth 2.

    Q = pad(Gamma2^-1) + A'A / v with A the conditional-mean rows
    (-a2, -a1, 1) and v = (1 - pacf1^2)(1 - pacf2^2) the innovation variance
    that makes every marginal variance 1; the stationary initial block
    Gamma2 supplies the boundary correction.
    """
    if n < 3:
        raise ConfigurationError(f"ar2 component needs n >= 3, got {n}")
    a1, a2 = pacf_to_ar2(pacf1, pacf2)
    v = (1.0 - pacf1**2) * (1.0 - pacf2**2)
    r1 = a1 / (1.0 - a2)
    A = sparse.coo_array(
        (
            np.tile([-a2, -a1, 1.0], n - 2),
            (
                np.repeat(np.arange(n - 2), 3),
                (np.arange(n - 2)[:, None] + np.arange(3)[None, :]).ravel(),
            ),
        ),
        shape=(n - 2, n),
    )
    gamma2_inv = np.array([[1.0, -r1], [-r1, 1.0]]) / (1.0 - r1 * r1)
    Q = sparse.lil_array((n, n))
    Q[:2, :2] = gamma2_inv
    Q = _as_csc(sparse.csc_array(Q) + (A.T @ A) / v)
    log_gdet = -(n - 2) * np.log(v) - np.log1p(-r1 * r1)
    return SparsePrecision(matrix=Q, log_gdet=float(log_gdet))


def build_mv_iid(n: int, sigmas: np.ndarray, R: np.ndarray) -> SparsePrecision:
    """n independent d-dimensional Gaussians with covariance
    diag(sigmas) R diag(sigmas), laid out observation-major
    (w_11..w_1d, w_21..w_2d, ...)."""
    if n < 1:
        raise ConfigurationError(f"mv_iid component needs n >= 1, got {n}")
    sigmas = np.asarray(sigmas, dtype=float)
    R = np.asarray(R, dtype=float)
    d = sigmas.size
    if np.any(sigmas <= 0):
        raise ConfigurationError("mv_iid standard deviations must be positive")
    if R.shape != (d, d):
        raise ConfigurationError(
            f"correlation matrix shape {R.shape} does not match {d} sigmas"
        )
    if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
        raise ConfigurationError("R must be symmetric with unit diagonal")
    sign, logdet_R = np.linalg.slogdet(R)
    if sign <= 0:
        raise ConfigurationError("R must be positive definite")
    cov = R * np.outer(sigmas, sigmas)
    block = np.linalg.inv(cov)
    block = 0.5 * (block + block.T)
    Q = _as_csc(sparse.kron(sparse.eye_array(n), block, format="csc"))
    log_gdet = -n * (logdet_R + 2.0 * float(np.sum(np.log(sigmas))))
    return SparsePrecision(matrix=Q, log_gdet=log_gdet)


def scale_precision(Q: SparsePrecision, tau: float) -> SparsePrecision:
    """Entrywise tau * Q, keeping constraints and adjusting the generalized
    determinant by (dimension - rank_deficiency) * log tau."""
    if tau <= 0:
        raise ConfigurationError(f"precision scale must be positive, got {tau}")
    return replace(
        Q,
        matrix=_as_csc(Q.matrix * tau),
        log_gdet=Q.log_gdet + (Q.dimension - Q.rank_deficiency) * float(np.log(tau)),
    )


def reference_marginal_sd(prec: SparsePrecision) -> float:
    """Root-mean marginal variance of the unit-scale component under its
    constraints.  Intrinsic precisions are divided by the square of this at
    model assembly, so a scale hyper multiplying the field is the
    contribution sd itself; for a raw rw2 the reference grows with n
    (roughly n^1.5), which would make scale priors meaningless.
    """
    n = prec.dimension
    dense = prec.matrix.toarray()
    if prec.rank_deficiency == 0:
        L = np.linalg.cholesky(dense)
        inv_diag = np.sum(solve_triangular(L, np.eye(n), lower=True) ** 2, axis=0)
        return float(np.sqrt(np.mean(inv_diag)))
    # the constraints span the null space, so the pseudo-inverse is exactly
    # the covariance conditional on C w = 0
    w, V = np.linalg.eigh(dense)
    keep = w > 1e-9 * w[-1]
    pinv_diag = ((V[:, keep] ** 2) / w[keep]).sum(axis=1)
    return float(np.sqrt(np.mean(pinv_diag)))
