"""
Unit tests for finite-sum targets.

To run: pytest tests/
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bbvi.errors import InvalidArgumentError, UnsupportedOperationError
from bbvi.scale_matrix import BlockLayout, BorderedBlockDiagonalScale
from bbvi.variational_family import elbo_estimate
from bbvi.targets import (
    GLOBAL_REPLICATED,
    ComponentStructure,
    CorrelatedHierarchicalGaussian,
    FiniteSumQuadratic,
    QuadraticTarget,
    SyntheticIsotropicHierarchical,
    load_observations,
    save_observations,
)


def builtin_targets():
    rng = np.random.default_rng(0)
    return [
        SyntheticIsotropicHierarchical(4, d_z=2, d_y=3),
        SyntheticIsotropicHierarchical(3, d_z=2, d_y=2, global_term=GLOBAL_REPLICATED),
        FiniteSumQuadratic.random(6, 6, 3, rng),
        FiniteSumQuadratic.hierarchical(BlockLayout(2, 2, 3), rng),
        CorrelatedHierarchicalGaussian.simulate(4, d_z=2, d_y=2, seed=1),
    ]


def elbo_gradient_at(target, params):
    """Exact negative-ELBO gradient of a quadratic target, as dense (grad_m, grad_C)."""
    H = target.hessian()
    C = params.C.to_dense()
    grad_m = H @ params.m - target.linear_term()
    grad_C = H @ C - np.diag(1.0 / np.diag(C))
    pattern = params.C.with_entries(np.ones(params.C.num_params)).to_dense() != 0
    return grad_m, np.where(pattern, grad_C, 0.0)


class TestComponentStructure:
    """Tests for index-set validation."""

    def test_hierarchical_sets(self):
        structure = ComponentStructure.hierarchical(BlockLayout(1, 2, 2))
        np.testing.assert_array_equal(structure.index_sets[1], [0, 3, 4])

    def test_invalid_sets(self):
        with pytest.raises(InvalidArgumentError):
            ComponentStructure(3, [np.array([], dtype=int)])
        with pytest.raises(InvalidArgumentError):
            ComponentStructure(3, [np.array([2, 1])])
        with pytest.raises(InvalidArgumentError):
            ComponentStructure(3, [np.array([0, 3])])


class TestEvaluation:
    """Tests for component and batched evaluation."""

    def test_quadratic_example(self):
        target = FiniteSumQuadratic([[0, 1]], [np.eye(2)], [np.zeros(2)])
        value, grad = target.eval_component(0, np.array([3.0, 4.0]))
        assert value == pytest.approx(12.5)
        np.testing.assert_allclose(grad, [3.0, 4.0])

    def test_synthetic_at_mean(self):
        target = SyntheticIsotropicHierarchical(3)
        value, grad = target.eval_component(0, np.full(8, 5.0))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)
        # a third of the five global log-normalizers plus all three local ones
        assert value == pytest.approx(0.5 * (5 / 3 + 3) * np.log(2.0 * np.pi * 0.1))

    def test_unknown_global_term(self):
        with pytest.raises(InvalidArgumentError):
            SyntheticIsotropicHierarchical(3, global_term="pooled")

    def test_wrong_component_input(self):
        target = SyntheticIsotropicHierarchical(3)
        with pytest.raises(InvalidArgumentError):
            target.eval_component(3, np.zeros(8))
        with pytest.raises(InvalidArgumentError):
            target.eval_component(0, np.zeros(7))

    @pytest.mark.parametrize("index", range(5))
    def test_batch_matches_component_sum(self, index):
        target = builtin_targets()[index]
        rng = np.random.default_rng(10 + index)
        z = rng.normal(size=(6, target.dim))
        values, grads = target.value_and_grad(z)
        for row in range(z.shape[0]):
            expected_value = 0.0
            expected_grad = np.zeros(target.dim)
            for n, idx in enumerate(target.structure.index_sets):
                value, grad = target.eval_component(n, z[row, idx])
                expected_value += value
                expected_grad[idx] += grad
            assert values[row] == pytest.approx(expected_value, rel=1e-10)
            np.testing.assert_allclose(grads[row], expected_grad, rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("index", range(5))
    def test_gradient_matches_finite_differences(self, index):
        target = builtin_targets()[index]
        rng = np.random.default_rng(20 + index)
        h = 1e-5
        for n in range(target.num_components):
            x = rng.normal(size=target.structure.index_sets[n].size)
            _, grad = target.eval_component(n, x)
            numeric = np.zeros_like(x)
            for j in range(x.size):
                step = np.zeros_like(x)
                step[j] = h
                numeric[j] = (target.eval_component(n, x + step)[0] - target.eval_component(n, x - step)[0]) / (2 * h)
            np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-6)


class TestMetadata:
    """Tests for smoothness constants and stationary points."""

    def test_synthetic_constants(self):
        constants = SyntheticIsotropicHierarchical(10).smoothness_constants()
        np.testing.assert_allclose(constants.per_component, 10.0)
        assert constants.mu == pytest.approx(10.0)
        assert constants.L == pytest.approx(10.0)

    def test_replicated_global_term_constants(self):
        constants = SyntheticIsotropicHierarchical(10, global_term=GLOBAL_REPLICATED).smoothness_constants()
        np.testing.assert_allclose(constants.per_component, 10.0)
        assert constants.mu == pytest.approx(10.0)
        assert constants.L == pytest.approx(100.0)

    @pytest.mark.parametrize("global_term", ["shared", "replicated"])
    def test_synthetic_constants_match_assembled_spectrum(self, global_term):
        target = SyntheticIsotropicHierarchical(6, global_term=global_term)
        closed_form = target.smoothness_constants()
        assembled = QuadraticTarget.smoothness_constants(target)
        assert closed_form.L == pytest.approx(assembled.L)
        assert closed_form.mu == pytest.approx(assembled.mu)

    def test_component_smoothness_is_largest_eigenvalue(self):
        target = FiniteSumQuadratic([[0, 1]], [np.diag([1.0, 4.0])], [np.zeros(2)])
        assert target.smoothness_constants().per_component[0] == pytest.approx(4.0)

    def test_stationary_points_zero_gradient(self):
        for target in builtin_targets():
            for n, point in enumerate(target.stationary_points()):
                _, grad = target.eval_component(n, point)
                np.testing.assert_allclose(grad, 0.0, atol=1e-10)

    def test_synthetic_stationary_points(self):
        for point in SyntheticIsotropicHierarchical(3).stationary_points():
            np.testing.assert_array_equal(point, np.full(8, 5.0))

    def test_indefinite_matrix_rejected(self):
        with pytest.raises(InvalidArgumentError):
            FiniteSumQuadratic([[0, 1]], [np.diag([1.0, -1.0])], [np.zeros(2)])


class TestOptimalParams:
    """Tests for the closed-form variational optima."""

    @pytest.mark.parametrize("family", ["mean_field", "full_rank", "structured"])
    def test_synthetic_stationary(self, family):
        target = SyntheticIsotropicHierarchical(4, d_z=2, d_y=2)
        grad_m, grad_C = elbo_gradient_at(target, target.optimal_params(family))
        np.testing.assert_allclose(grad_m, 0.0, atol=1e-9)
        np.testing.assert_allclose(grad_C, 0.0, atol=1e-9)

    @pytest.mark.parametrize("family", ["mean_field", "full_rank", "structured"])
    def test_correlated_stationary(self, family):
        target = CorrelatedHierarchicalGaussian.simulate(5, d_z=2, d_y=2, seed=3)
        params = target.optimal_params(family)
        grad_m, grad_C = elbo_gradient_at(target, params)
        np.testing.assert_allclose(grad_m, 0.0, atol=1e-8)
        np.testing.assert_allclose(grad_C, 0.0, atol=1e-8)

    def test_structured_optimum_is_bordered(self):
        target = CorrelatedHierarchicalGaussian.simulate(3, d_z=1, d_y=2, seed=4)
        assert isinstance(target.optimal_params("structured").C, BorderedBlockDiagonalScale)

    def test_structured_needs_layout(self):
        target = FiniteSumQuadratic.random(4, 4, 2, np.random.default_rng(5))
        with pytest.raises(UnsupportedOperationError):
            target.optimal_params("structured")

    @pytest.mark.parametrize("global_term,global_scale", [("shared", np.sqrt(0.1)), ("replicated", np.sqrt(0.01))])
    def test_synthetic_closed_form(self, global_term, global_scale):
        target = SyntheticIsotropicHierarchical(10, d_z=1, d_y=1, global_term=global_term)
        params = target.optimal_params("mean_field")
        np.testing.assert_allclose(params.m, 5.0)
        assert params.C.entries[0] == pytest.approx(global_scale)
        np.testing.assert_allclose(params.C.entries[1:], np.sqrt(0.1))

    @pytest.mark.parametrize("global_term", ["shared", "replicated"])
    def test_synthetic_elbo_at_optimum_is_log_evidence(self, global_term):
        N, d_z, d_y = 4, 2, 3
        target = SyntheticIsotropicHierarchical(N, d_z=d_z, d_y=d_y, global_term=global_term)
        global_precision = 10.0 if global_term == "shared" else 10.0 * N
        precisions = np.concatenate([np.full(d_z, global_precision), np.full(N * d_y, 10.0)])
        weight = 1.0 / N if global_term == "shared" else 1.0
        # log of the integral of exp(-l), with the normalizers each component carries
        log_normalizers = N * 0.5 * (weight * d_z + d_y) * np.log(2.0 * np.pi * 0.1)
        log_evidence = 0.5 * np.sum(np.log(2.0 * np.pi / precisions)) - log_normalizers
        assert target.gaussian_oracle().log_evidence == pytest.approx(log_evidence)
        for family in ("mean_field", "structured", "full_rank"):
            elbo = elbo_estimate(target.optimal_params(family), target, 20_000, np.random.default_rng(8))
            assert elbo == pytest.approx(log_evidence, abs=0.1)


class TestCorrelatedHierarchical:
    """Tests for the two-level Gaussian model."""

    def unit_model(self, x=0.0, **kwargs):
        defaults = dict(coupling=np.array([[1.0]]), local_covariance=np.array([[1.0]]),
                        prior_scale=1.0, noise_scale=1.0)
        defaults.update(kwargs)
        return CorrelatedHierarchicalGaussian(np.array([[x]]), 1, **defaults)

    def test_precision_example(self):
        np.testing.assert_allclose(self.unit_model().hessian(), [[2.0, -1.0], [-1.0, 2.0]])

    def test_log_evidence(self):
        # marginally x ~ N(0, 1 + 1 + 1)
        oracle = self.unit_model(x=0.7).posterior_oracle()
        assert oracle.log_evidence == pytest.approx(-0.5 * np.log(2 * np.pi * 3.0) - 0.7 ** 2 / 6.0)

    def test_log_evidence_by_quadrature(self):
        target = self.unit_model(x=0.3)
        grid = np.linspace(-8.0, 8.0, 401)
        step = grid[1] - grid[0]
        zz, yy = np.meshgrid(grid, grid, indexing="ij")
        values = target.value(np.column_stack([zz.ravel(), yy.ravel()]))
        log_integral = np.log(np.sum(np.exp(-values)) * step * step)
        assert log_integral == pytest.approx(target.posterior_oracle().log_evidence, abs=1e-3)

    def test_uninformative_noise_recovers_prior(self):
        target = self.unit_model(x=3.0, noise_scale=1e6, prior_mean=np.array([1.0]),
                                 offset=np.array([0.5]), coupling=np.array([[2.0]]))
        np.testing.assert_allclose(target.posterior_oracle().mean, [1.0, 2.5], atol=1e-6)

    def test_local_blocks_decoupled(self):
        target = CorrelatedHierarchicalGaussian.simulate(3, d_z=2, d_y=2, seed=2)
        H = target.hessian()
        layout = target.layout
        for a in range(3):
            for b in range(3):
                if a != b:
                    rows = slice(layout.local_offset(a), layout.local_offset(a) + 2)
                    cols = slice(layout.local_offset(b), layout.local_offset(b) + 2)
                    assert np.all(H[rows, cols] == 0.0)

    def test_simulation_is_seeded(self):
        a = CorrelatedHierarchicalGaussian.simulate(5, seed=9).observations
        b = CorrelatedHierarchicalGaussian.simulate(5, seed=9).observations
        np.testing.assert_array_equal(a, b)

    def test_observation_file_round_trip(self, tmp_path):
        observations = np.random.default_rng(6).normal(size=(4, 2))
        path = save_observations(observations, tmp_path / "obs.csv")
        np.testing.assert_allclose(load_observations(path), observations)

    def test_non_numeric_observation_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,x1\n1.0,abc\n")
        with pytest.raises(InvalidArgumentError):
            load_observations(path)
