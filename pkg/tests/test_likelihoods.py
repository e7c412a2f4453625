"""Tests for the observation families and block validation."""

import numpy as np
import pytest
from scipy.integrate import quad

from circfit.likelihoods import (
    LikelihoodFamily,
    ObservationBlock,
    ObservationError,
    lavm_curvature_floor,
    loglik,
    validate_block,
)
from circfit.circular import lavm_approx_concentration

FD_RTOL = 1e-6

# (kind, y, eta, hyper) grids the derivative checks sweep over
CASES = [
    ("gaussian", y, eta, tau)
    for y in (-1.0, 0.0, 2.5)
    for eta in (-2.0, 0.3)
    for tau in (0.5, 4.0)
] + [
    ("poisson", y, eta, None) for y in (0.0, 2.0, 11.0) for eta in (-1.0, 0.0, 1.7)
] + [
    ("gamma", y, eta, rho)
    for y in (0.2, 1.0, 5.0)
    for eta in (-1.0, 0.5)
    for rho in (0.7, 3.0)
] + [
    ("lavm", y, eta, kappa)
    for y in (-2.0, 0.1, 1.4)
    for eta in (-0.7, 0.0, 1.0)
    for kappa in (0.5, 10.0)
]


class TestExamples:
    def test_gaussian_standard(self):
        value, d1, d2 = loglik("gaussian", 0.0, 0.0, 1.0)
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-15)
        assert d1 == 0.0
        assert d2 == -1.0

    def test_poisson_two_at_unit_rate(self):
        value, d1, d2 = loglik("poisson", 2.0, 0.0)
        assert value == pytest.approx(-1.0 - np.log(2.0), rel=1e-14)
        assert d1 == pytest.approx(1.0)
        assert d2 == pytest.approx(-1.0)

    def test_gamma_exponential_case(self):
        value, d1, d2 = loglik("gamma", 1.0, 0.0, 1.0)
        assert value == pytest.approx(-1.0, rel=1e-14)
        assert d1 == pytest.approx(0.0, abs=1e-15)
        assert d2 == pytest.approx(-1.0, rel=1e-14)

    def test_lavm_delegates_to_circular(self):
        from circfit.circular import lavm_deta_logpdf, lavm_logpdf

        value, d1, d2 = loglik("lavm", 0.4, 0.2, 5.0)
        assert value == lavm_logpdf(0.4, 0.2, 5.0)
        assert (d1, d2) == lavm_deta_logpdf(0.4, 0.2, 5.0)


class TestDerivatives:
    @pytest.mark.parametrize("kind,y,eta,hyper", CASES)
    def test_matches_finite_differences(self, kind, y, eta, hyper):
        h = 1e-6
        value, d1, d2 = loglik(kind, y, eta, hyper)
        vp = loglik(kind, y, eta + h, hyper)[0]
        vm = loglik(kind, y, eta - h, hyper)[0]
        fd1 = (vp - vm) / (2.0 * h)
        assert d1 == pytest.approx(fd1, rel=FD_RTOL, abs=1e-8)
        h2 = 1e-4
        vp = loglik(kind, y, eta + h2, hyper)[0]
        vm = loglik(kind, y, eta - h2, hyper)[0]
        fd2 = (vp - 2.0 * value + vm) / (h2 * h2)
        assert d2 == pytest.approx(fd2, rel=1e-4, abs=1e-6)

    def test_gaussian_poisson_concave_everywhere(self):
        etas = np.linspace(-3, 3, 25)
        assert np.all(loglik("gaussian", 1.0, etas, 2.0)[2] < 0)
        assert np.all(loglik("poisson", 3.0, etas)[2] < 0)

    def test_gamma_concave_at_conditional_mode(self):
        # d1 = 0 at eta = log(y); curvature there is -rho
        for y, rho in [(0.5, 1.0), (4.0, 2.5)]:
            _, d1, d2 = loglik("gamma", y, np.log(y), rho)
            assert abs(d1) < 1e-12
            assert d2 == pytest.approx(-rho, rel=1e-12)

    def test_lavm_concave_at_conditional_mode(self):
        from scipy.optimize import brentq

        y, kappa = 1.2, 3.0
        d1_of = lambda eta: loglik("lavm", y, eta, kappa)[1]
        mode = brentq(d1_of, -3.0, 3.0)
        assert loglik("lavm", y, mode, kappa)[2] < 0

    def test_lavm_curvature_floor_is_local_concentration(self):
        assert lavm_curvature_floor(1.0, 50.0) == pytest.approx(-201.0, rel=1e-12)
        assert lavm_curvature_floor(0.0, 2.0) == -lavm_approx_concentration(0.0, 2.0)


class TestNormalization:
    def test_gaussian_integrates_to_one(self):
        for eta, tau in [(0.0, 1.0), (1.5, 0.3)]:
            total = quad(
                lambda y: np.exp(loglik("gaussian", y, eta, tau)[0]),
                -np.inf,
                np.inf,
            )[0]
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_poisson_sums_to_one(self):
        for eta in (-1.0, 0.0, 2.0):
            ys = np.arange(0.0, 200.0)
            total = np.exp(loglik("poisson", ys, np.full_like(ys, eta))[0]).sum()
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_gamma_integrates_to_one(self):
        for eta, rho in [(0.0, 1.0), (1.0, 2.5)]:
            total = quad(
                lambda y: np.exp(loglik("gamma", y, eta, rho)[0]), 0.0, np.inf
            )[0]
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_gamma_mean_is_exp_eta(self):
        eta, rho = 0.7, 2.0
        mean = quad(
            lambda y: y * np.exp(loglik("gamma", y, eta, rho)[0]), 0.0, np.inf
        )[0]
        assert mean == pytest.approx(np.exp(eta), rel=1e-9)


class TestDomainErrors:
    def test_poisson_rejects_negative_with_index(self):
        with pytest.raises(ObservationError) as err:
            loglik("poisson", np.array([1.0, -1.0, 2.0]), np.zeros(3))
        assert err.value.indices == [1]

    def test_gamma_rejects_nonpositive(self):
        with pytest.raises(ObservationError) as err:
            loglik("gamma", np.array([0.0, 1.0]), np.zeros(2), 1.0)
        assert err.value.indices == [0]

    def test_lavm_rejects_boundary_band(self):
        with pytest.raises(ObservationError) as err:
            loglik(
                "lavm", np.array([0.1, np.pi - 5e-7, -0.2]), np.zeros(3), 1.0
            )
        assert err.value.indices == [1]

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            loglik("weibull", 1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            LikelihoodFamily("weibull")

    def test_hyper_binding_arity(self):
        with pytest.raises(ValueError):
            LikelihoodFamily("gaussian", ())
        LikelihoodFamily("poisson", ())


class TestValidateBlock:
    def test_valid_block_is_empty(self):
        block = ObservationBlock(
            LikelihoodFamily("poisson", ()), np.array([0.0, 3.0, 7.0])
        )
        assert validate_block(block) == []

    def test_lavm_boundary_band_flagged_with_advice(self):
        block = ObservationBlock(
            LikelihoodFamily("lavm", ("kappa",)), np.array([0.5, 3.14159])
        )
        report = validate_block(block)
        assert [issue.observation for issue in report] == [1]
        assert "pre-center" in report[0].problem

    def test_poisson_negative_flagged(self):
        block = ObservationBlock(
            LikelihoodFamily("poisson", ()), np.array([2.0, -1.0])
        )
        report = validate_block(block)
        assert [issue.observation for issue in report] == [1]

    def test_gamma_and_nonfinite_flagged(self):
        block = ObservationBlock(
            LikelihoodFamily("gamma", ("rho",)), np.array([1.0, 0.0, np.nan])
        )
        problems = {issue.observation for issue in validate_block(block)}
        assert problems == {1, 2}

    def test_default_predictor_index(self):
        block = ObservationBlock(
            LikelihoodFamily("gaussian", ("tau",)), np.array([1.0, 2.0])
        )
        assert np.array_equal(block.predictor_index, [0, 1])
