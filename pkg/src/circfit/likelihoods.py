"""Observation families: log-likelihoods with derivatives in the predictor.

Four families cover the models here: gaussian (mean eta, precision tau),
poisson (rate exp(eta)), gamma (shape rho, rate rho*exp(-eta), so the mean is
exp(eta)), and the link-adjusted von Mises for angular responses.  Each
returns the log density together with its first and second derivatives with
respect to eta, which is all the Gaussian approximation needs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .circular import (
    BOUNDARY_MARGIN,
    lavm_approx_concentration,
    lavm_deta_logpdf,
    lavm_logpdf,
)

__all__ = [
    "FAMILY_HYPERS",
    "LikelihoodFamily",
    "ObservationBlock",
    "ObservationError",
    "ValidationIssue",
    "loglik",
    "lavm_curvature_floor",
    "validate_block",
]

# family -> names of its hyperparameters, in binding order
FAMILY_HYPERS = {
    "gaussian": ("tau",),
    "poisson": (),
    "gamma": ("rho",),
    "lavm": ("kappa",),
}


class ObservationError(ValueError):
    """A response outside its family's domain; carries the offending indices."""

    def __init__(self, message: str, indices):
        self.indices = list(np.atleast_1d(indices))
        super().__init__(f"{message} (observations {self.indices})")


@dataclass(frozen=True)
class LikelihoodFamily:
    kind: str
    hyper_bindings: tuple = ()

    def __post_init__(self):
        if self.kind not in FAMILY_HYPERS:
            raise ValueError(f"unknown likelihood family {self.kind!r}")
        expected = len(FAMILY_HYPERS[self.kind])
        if len(self.hyper_bindings) != expected:
            raise ValueError(
                f"{self.kind} takes {expected} hyperparameter binding(s), "
                f"got {self.hyper_bindings}"
            )


@dataclass(frozen=True)
class ObservationBlock:
    """Responses of one family plus their mapping onto predictor nodes."""

    family: LikelihoodFamily
    responses: np.ndarray
    predictor_index: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(
            self, "responses", np.asarray(self.responses, dtype=float)
        )
        idx = self.predictor_index
        if idx is None:
            idx = np.arange(self.responses.size)
        object.__setattr__(self, "predictor_index", np.asarray(idx, dtype=int))
        if self.predictor_index.shape != self.responses.shape:
            raise ValueError("predictor_index must align with responses")

    @property
    def size(self) -> int:
        return self.responses.size


def _gaussian(y, eta, tau):
    if tau <= 0:
        raise ValueError(f"gaussian precision must be positive, got {tau}")
    r = y - eta
    value = 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * r * r
    return value, tau * r, np.full_like(r, -tau)


def _poisson(y, eta):
    bad = (y < 0) | (y != np.floor(y))
    if np.any(bad):
        raise ObservationError(
            "poisson responses must be nonnegative integers", np.nonzero(bad)[0]
        )
    rate = np.exp(eta)
    value = y * eta - rate - gammaln(y + 1.0)
    return value, y - rate, -rate


def _gamma(y, eta, rho):
    if rho <= 0:
        raise ValueError(f"gamma shape must be positive, got {rho}")
    bad = y <= 0
    if np.any(bad):
        raise ObservationError(
            "gamma responses must be positive", np.nonzero(bad)[0]
        )
    # shape rho, rate rho * exp(-eta): mean exp(eta), tau = rho / mean^2
    scaled = y * np.exp(-eta)
    value = (
        rho * (np.log(rho) - eta)
        - gammaln(rho)
        + (rho - 1.0) * np.log(y)
        - rho * scaled
    )
    return value, rho * (scaled - 1.0), -rho * scaled


def _lavm(y, eta, kappa):
    bad = np.abs(y) >= np.pi - BOUNDARY_MARGIN
    if np.any(bad):
        raise ObservationError(
            "angular responses inside the boundary band |x| >= pi - 1e-6; "
            "consider pre-centering",
            np.nonzero(bad)[0],
        )
    value = lavm_logpdf(y, eta, kappa)
    d1, d2 = lavm_deta_logpdf(y, eta, kappa)
    return value, d1, d2


def loglik(kind: str, y, eta, hyper: float = None):
    """(log density, d/d eta, d^2/d eta^2) for one family, vectorized.

    ``hyper`` is the family hyperparameter on its natural scale (tau, rho or
    kappa); poisson takes none.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if kind == "gaussian":
        return _gaussian(y, eta, hyper)
    if kind == "poisson":
        return _poisson(y, eta)
    if kind == "gamma":
        return _gamma(y, eta, hyper)
    if kind == "lavm":
        return _lavm(y, eta, hyper)
    raise ValueError(f"unknown likelihood family {kind!r}")


def lavm_curvature_floor(eta, kappa):
    """Negative curvature to substitute where the lavm d2 turns nonnegative
    far from the conditional mode: minus the local concentration of the
    density, which preserves the Newton fixed point while keeping steps
    descent-directed."""
    return -lavm_approx_concentration(eta, kappa)


@dataclass(frozen=True)
class ValidationIssue:
    observation: int
    problem: str


def validate_block(block: ObservationBlock):
    """Per-observation domain report for a block; empty means valid."""
    y = block.responses
    kind = block.family.kind
    issues = []
    if not np.all(np.isfinite(y)):
        issues += [
            ValidationIssue(int(i), "response is not finite")
            for i in np.nonzero(~np.isfinite(y))[0]
        ]
    if kind == "poisson":
        bad = (y < 0) | (y != np.floor(y))
        issues += [
            ValidationIssue(int(i), "poisson response must be a count")
            for i in np.nonzero(bad & np.isfinite(y))[0]
        ]
    elif kind == "gamma":
        issues += [
            ValidationIssue(int(i), "gamma response must be positive")
            for i in np.nonzero((y <= 0) & np.isfinite(y))[0]
        ]
    elif kind == "lavm":
        outside = np.abs(y) > np.pi
        # advise one decade before the hard band: evaluation degrades well
        # before it becomes an error
        band = (np.abs(y) >= np.pi - 10.0 * BOUNDARY_MARGIN) & ~outside
        issues += [
            ValidationIssue(int(i), "angle outside (-pi, pi]")
            for i in np.nonzero(outside & np.isfinite(y))[0]
        ]
        issues += [
            ValidationIssue(
                int(i),
                "angle within 1e-5 of the boundary where the likelihood "
                "turns singular; pre-center the angles first",
            )
            for i in np.nonzero(band & np.isfinite(y))[0]
        ]
    return sorted(issues, key=lambda issue: issue.observation)
