"""
Unit tests for variance measurement, bounds and audits.

To run: pytest tests/
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bbvi.diagnostics import (
    base_moment_check,
    complexity_constants,
    convergence_envelope,
    empirical_gradient_variance,
    non_standardized_energy,
    nonconvexity_report,
    predicted_iterations,
    theoretical_variance_bound,
    trace_identity_check,
    trace_of_variance,
    variance_report,
)
from bbvi.errors import InvalidArgumentError
from bbvi.scale_matrix import BlockLayout, BorderedBlockDiagonalScale, SparsityDescriptor
from bbvi.targets import ComponentStructure, FiniteSumQuadratic, SyntheticIsotropicHierarchical, Target
from bbvi.variational_family import (
    SCALED_UNIFORM,
    STANDARD_GAUSSIAN,
    VariationalParams,
    initial_params,
    reparameterize_non_standardized,
    sample_base,
)


class LinearTarget(Target):
    """l(z) = z in one dimension."""

    def __init__(self):
        super().__init__(ComponentStructure(1, [np.array([0])]))

    def eval_component(self, n, z_sub):
        x = self._check_component(n, z_sub)
        return float(x[0]), np.ones(1)


def descriptor_for(params, target):
    return SparsityDescriptor.from_structure(params.C, target.structure.index_sets)


def random_feasible(params, rng, around):
    C = params.C
    entries = rng.normal(0.0, 0.1, C.num_params)
    entries[C.diagonal_positions] = rng.uniform(0.1, 1.0, C.diagonal_positions.size)
    return VariationalParams(around + rng.normal(0.0, 0.5, C.dim), C.with_entries(entries))


class TestTraceOfVariance:
    """Tests for the jackknifed trace of the sample covariance."""

    def test_identical_rows(self):
        estimate, stderr = trace_of_variance(np.ones((10, 3)))
        assert estimate == 0.0
        assert stderr == 0.0

    def test_two_samples_have_no_stderr(self):
        estimate, stderr = trace_of_variance(np.array([[0.0], [2.0]]))
        assert estimate == pytest.approx(2.0)
        assert np.isnan(stderr)

    def test_needs_two_samples(self):
        with pytest.raises(InvalidArgumentError):
            trace_of_variance(np.ones((1, 3)))

    def test_unit_gaussian_rows(self):
        samples = np.random.default_rng(0).standard_normal((20_000, 4))
        estimate, stderr = trace_of_variance(samples)
        # Var ||x||^2 = 2 d
        assert stderr == pytest.approx(np.sqrt(8.0 / 20_000), rel=0.1)
        assert abs(estimate - 4.0) < 4 * stderr


class TestEmpiricalVariance:
    """Tests for the measured gradient variance."""

    def test_linear_target(self):
        target = LinearTarget()
        params = initial_params("mean_field", dim=1)
        estimate, stderr = empirical_gradient_variance(params, target, 4, 4000, np.random.default_rng(1))
        assert abs(estimate - 0.25) < 4 * stderr

    def test_doubling_samples_halves_variance(self):
        target = LinearTarget()
        params = initial_params("mean_field", dim=1)
        rng = np.random.default_rng(2)
        v4, se4 = empirical_gradient_variance(params, target, 4, 4000, rng)
        v8, se8 = empirical_gradient_variance(params, target, 8, 4000, rng)
        assert abs(v8 - v4 / 2) <= 3 * np.sqrt(se8 ** 2 + (se4 / 2) ** 2)

    def test_reproducible(self):
        target = SyntheticIsotropicHierarchical(3)
        params = initial_params("structured", layout=target.layout)
        first = empirical_gradient_variance(params, target, 2, 50, np.random.default_rng(3))
        second = empirical_gradient_variance(params, target, 2, 50, np.random.default_rng(3))
        assert first == second


class TestVarianceBound:
    """Tests for the analytic variance bound."""

    def test_vanishes_at_point_mass_on_centers(self):
        target = SyntheticIsotropicHierarchical(5)
        params = initial_params("full_rank", layout=target.layout)
        params = VariationalParams(np.full(target.dim, 5.0), params.C.with_entries(1e-8 * params.C.entries))
        bound = theoretical_variance_bound(params, target, descriptor_for(params, target), 8, 3.0)
        assert bound == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("family,d_star", [("full_rank", 23), ("structured", 8), ("mean_field", 8)])
    def test_dimension_factor(self, family, d_star):
        target = SyntheticIsotropicHierarchical(6)
        params = initial_params(family, layout=target.layout)
        descriptor = descriptor_for(params, target)
        assert descriptor.effective_dimensionality() == d_star
        bound, contributions = theoretical_variance_bound(params, target, descriptor, 2, 3.0, per_component=True)
        # every component: L_n^2 (||0 - 5||^2 k + ||C_n||_F^2) with k = 8 coordinates
        term = 100.0 * (25.0 * 8 + params.C.frobenius_norm_sq(component=0, descriptor=descriptor))
        np.testing.assert_allclose(contributions, 6 / 2 * (d_star + 3.0) * term)
        assert bound == pytest.approx(contributions.sum())

    def test_structured_factor_is_eleven(self):
        target = SyntheticIsotropicHierarchical(4, d_z=5, d_y=3)
        params = initial_params("structured", layout=target.layout)
        report = variance_report(params, target, "structured", 8, 50, np.random.default_rng(4))
        assert report.d_star + report.k_phi == 11.0
        assert set(report.to_row()) == {"family", "n", "M", "d_star", "k_phi", "empirical", "stderr", "bound"}

    @pytest.mark.parametrize("family", ["mean_field", "structured", "full_rank"])
    def test_bound_holds(self, family):
        rng = np.random.default_rng(5)
        target = SyntheticIsotropicHierarchical(20)
        base_params = initial_params(family, layout=target.layout)
        for _ in range(3):
            params = random_feasible(base_params, rng, 5.0)
            report = variance_report(params, target, family, 8, 500, rng)
            assert report.empirical <= report.bound + 3 * report.stderr

    @pytest.mark.parametrize("family", ["mean_field", "full_rank"])
    def test_bound_holds_on_random_quadratic(self, family):
        rng = np.random.default_rng(12)
        target = FiniteSumQuadratic.random(8, 6, 3, rng)
        base_params = initial_params(family, dim=8)
        for _ in range(3):
            params = random_feasible(base_params, rng, 0.0)
            report = variance_report(params, target, family, 4, 500, rng)
            assert report.empirical <= report.bound + 3 * report.stderr

    @pytest.mark.parametrize("family", ["mean_field", "structured", "full_rank"])
    def test_bound_holds_on_hierarchical_quadratic(self, family):
        rng = np.random.default_rng(14)
        layout = BlockLayout(2, 2, 5)
        target = FiniteSumQuadratic.hierarchical(layout, rng)
        base_params = initial_params(family, layout=layout)
        for _ in range(3):
            params = random_feasible(base_params, rng, 0.0)
            report = variance_report(params, target, family, 4, 500, rng)
            assert report.empirical <= report.bound + 3 * report.stderr

    def test_uniform_base_uses_smaller_kurtosis(self):
        target = SyntheticIsotropicHierarchical(4)
        params = initial_params("mean_field", layout=target.layout)
        descriptor = descriptor_for(params, target)
        gaussian = theoretical_variance_bound(params, target, descriptor, 1, STANDARD_GAUSSIAN.kurtosis)
        uniform = theoretical_variance_bound(params, target, descriptor, 1, SCALED_UNIFORM.kurtosis)
        assert uniform / gaussian == pytest.approx((8 + 1.8) / (8 + 3.0))


class TestComplexity:
    """Tests for the iteration-complexity constants."""

    def test_synthetic_constants(self):
        N, M = 10, 8
        target = SyntheticIsotropicHierarchical(N, d_z=5, d_y=3)
        optimum = target.optimal_params("structured")
        descriptor = descriptor_for(optimum, target)
        constants = complexity_constants(target, descriptor, M, optimum, 3.0)
        factor = N / M * (8 + 3.0)
        # kappa_n = 1 for every component, kappa = L / mu = 1
        assert constants.C_bias == pytest.approx(2 * factor * N + 1)
        # ||C*_n||_F^2 = (d_z + d_y) variance
        assert constants.C_var == pytest.approx(4 * factor * N * (8 * 0.1))
        assert constants.mu == pytest.approx(10.0)
        assert constants.max_stepsize == pytest.approx(min(1 / (2 * constants.expected_smoothness), 0.1))

    def test_predicted_iterations_nonincreasing_in_samples(self):
        target = SyntheticIsotropicHierarchical(10)
        optimum = target.optimal_params("mean_field")
        descriptor = descriptor_for(optimum, target)
        r0 = 500.0
        predictions = [
            predicted_iterations(complexity_constants(target, descriptor, M, optimum, 3.0), 1.0, r0=r0)
            for M in (1, 2, 4, 8, 16)
        ]
        assert all(b <= a for a, b in zip(predictions, predictions[1:]))

    def test_predicted_iterations_arguments(self):
        target = SyntheticIsotropicHierarchical(3)
        optimum = target.optimal_params("mean_field")
        constants = complexity_constants(target, descriptor_for(optimum, target), 8, optimum, 3.0)
        assert predicted_iterations(constants, 1.0, delta0=4.0) == pytest.approx(
            predicted_iterations(constants, 1.0, r0=16.0))
        with pytest.raises(InvalidArgumentError):
            predicted_iterations(constants, 1.0)

    def test_envelope(self):
        assert convergence_envelope(0.1, 1.0, 10.0, 2.0, 0) == pytest.approx(10.0 + 0.4)
        assert convergence_envelope(0.5, 2.0, 10.0, 0.0, 3) == pytest.approx(0.0)
        with pytest.raises(InvalidArgumentError):
            convergence_envelope(1.0, 2.0, 10.0, 1.0, 5)


class TestBaseAudits:
    """Tests for the base-distribution checks."""

    @pytest.mark.parametrize("dist", [STANDARD_GAUSSIAN, SCALED_UNIFORM])
    def test_moments(self, dist):
        report = base_moment_check(dist, 200_000, np.random.default_rng(6))
        assert report.passed
        assert report.estimates[3] == pytest.approx(dist.kurtosis, abs=0.1)

    def test_moment_check_needs_samples(self):
        with pytest.raises(InvalidArgumentError):
            base_moment_check(STANDARD_GAUSSIAN, 10, np.random.default_rng(0))

    def test_trace_identity_zero_matrix(self):
        report = trace_identity_check(np.zeros((3, 3)), STANDARD_GAUSSIAN, 1000, np.random.default_rng(7))
        assert report.estimate == 0.0 and report.exact == 0.0 and report.passed

    def test_trace_identity_identity(self):
        report = trace_identity_check(np.eye(5), SCALED_UNIFORM, 50_000, np.random.default_rng(8))
        assert report.exact == 5.0
        assert report.passed

    @pytest.mark.parametrize("dist", [STANDARD_GAUSSIAN, SCALED_UNIFORM])
    def test_trace_identity_random(self, dist):
        A = np.random.default_rng(9).normal(size=(20, 20))
        report = trace_identity_check(A, dist, 100_000, np.random.default_rng(10))
        assert report.passed


class TestNonconvexity:
    """Tests for the non-standardized energy and its Hessian."""

    def test_examples(self):
        assert nonconvexity_report(1.0, 0.0, 0.0).det == pytest.approx(8.0)
        report = nonconvexity_report(1.0, 1.0, 1.0)
        assert report.det == pytest.approx(-16.0)
        assert report.min_eigenvalue < 0
        assert report.energy == pytest.approx(3.0)

    def finite_difference_hessian(self, point, h):
        def energy(p):
            return nonconvexity_report(*p).energy

        numeric = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                ei, ej = np.eye(3)[i] * h, np.eye(3)[j] * h
                numeric[i, j] = (energy(point + ei + ej) - energy(point + ei - ej)
                                 - energy(point - ei + ej) + energy(point - ei - ej)) / (4 * h * h)
        return numeric

    def test_hessian_matches_finite_differences(self):
        # f has degree two in each variable, so central differences are exact up to rounding
        h = 0.25
        min_eigenvalues = []
        for x in np.linspace(-2.0, 2.0, 20):
            for y in np.linspace(-1.5, 1.5, 20):
                point = np.array([x, y, 1.0])
                numeric = self.finite_difference_hessian(point, h)
                report = nonconvexity_report(*point)
                np.testing.assert_allclose(report.hessian, numeric, rtol=1e-9, atol=1e-9)
                assert report.det == pytest.approx(np.linalg.det(numeric), rel=1e-6)
                assert (report.det < 0) == (abs(y) > 1 / np.sqrt(3))
                min_eigenvalues.append(report.min_eigenvalue)
        assert min(min_eigenvalues) < 0

    def test_matches_scalar_bordered_energy(self):
        layout = BlockLayout(1, 1, 1)
        x, y, z = 0.8, 1.2, 0.5
        C = BorderedBlockDiagonalScale.from_blocks(layout, [[x]], [[[y]]], [[[z]]])
        params = VariationalParams(np.zeros(2), C)
        assert non_standardized_energy(params) == pytest.approx(nonconvexity_report(x, y, z).energy)

        samples = reparameterize_non_standardized(
            params, sample_base(STANDARD_GAUSSIAN, 2, np.random.default_rng(11), num_samples=200_000)
        )
        sq_norms = np.sum(samples ** 2, axis=1)
        stderr = sq_norms.std(ddof=1) / np.sqrt(sq_norms.size)
        assert abs(sq_norms.mean() - non_standardized_energy(params)) < 4 * stderr

    def test_energy_needs_zero_location(self):
        layout = BlockLayout(1, 1, 1)
        params = initial_params("structured", layout=layout)
        params.m[0] = 1.0
        with pytest.raises(InvalidArgumentError):
            non_standardized_energy(params)


def within_bound(report):
    """empirical <= bound (1 + 3 relative standard errors)"""
    return report.empirical <= report.bound * (1 + 3 * report.stderr / report.empirical)


@pytest.mark.skipif(os.getenv("BBVI_RUN_SLOW") != "1", reason="set BBVI_RUN_SLOW=1 for the full variance audit")
class TestVarianceBoundAudit:
    """The variance bound at 10 random feasible points per family, 2000 outer samples each."""

    @pytest.mark.parametrize("n", [50, 100])
    @pytest.mark.parametrize("family", ["mean_field", "structured", "full_rank"])
    def test_synthetic_target(self, family, n):
        rng = np.random.default_rng(100 + n)
        target = SyntheticIsotropicHierarchical(n)
        base_params = initial_params(family, layout=target.layout)
        for _ in range(10):
            params = random_feasible(base_params, rng, 5.0)
            report = variance_report(params, target, family, 8, 2000, rng)
            assert within_bound(report)

    @pytest.mark.parametrize("family", ["mean_field", "structured", "full_rank"])
    def test_finite_sum_quadratic(self, family):
        rng = np.random.default_rng(21)
        layout = BlockLayout(3, 2, 20)
        target = FiniteSumQuadratic.hierarchical(layout, rng)
        base_params = initial_params(family, layout=layout)
        for _ in range(10):
            params = random_feasible(base_params, rng, 0.0)
            report = variance_report(params, target, family, 8, 2000, rng)
            assert within_bound(report)


class TestMeanFieldDimension:
    """The mean-field bound factor and per-coordinate variance do not depend on d."""

    M = 4

    def report_at(self, dim, rng):
        target = FiniteSumQuadratic.factorized(dim)
        params = initial_params("mean_field", dim=dim)
        params = VariationalParams(np.ones(dim), params.C.with_entries(np.full(dim, 0.5)))
        return target, params, variance_report(params, target, "mean_field", self.M, 2000, rng)

    def test_factor_is_one_plus_kurtosis(self):
        for dim in (10, 100):
            _, _, report = self.report_at(dim, np.random.default_rng(dim))
            assert report.d_star == 1
            assert report.d_star + report.k_phi == pytest.approx(1 + STANDARD_GAUSSIAN.kurtosis)

    def test_per_component_terms_do_not_grow(self):
        per_component = {}
        for dim in (10, 100):
            target, params, report = self.report_at(dim, np.random.default_rng(dim))
            _, contributions = theoretical_variance_bound(
                params, target, descriptor_for(params, target), self.M, STANDARD_GAUSSIAN.kurtosis,
                per_component=True,
            )
            # strip the N/M prefactor: (1 + k) L_n^2 (||m_n||^2 + ||C_n||_F^2) = 4 (1 + 0.25)
            per_component[dim] = contributions * self.M / dim
            np.testing.assert_allclose(per_component[dim], 5.0)

            # per coordinate: Var(c u) + Var(c u^2 + m u) = c^2 + 2 c^2 + m^2
            per_coordinate = report.empirical / dim
            assert abs(per_coordinate - 1.75 / self.M) < 4 * report.stderr / dim
        assert per_component[100].max() <= per_component[10].max()
