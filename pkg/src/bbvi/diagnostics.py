"""
Diagnostics for BBVI runs.

Measures the trace of the gradient variance, evaluates the analytic
variance bound and iteration-complexity constants of quadratic targets, and
audits the base distribution and the non-convex energy example.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .gradient_estimator import estimate_energy_gradient
from .logger import get_logger
from .scale_matrix import BorderedBlockDiagonalScale, SparsityDescriptor
from .variational_family import STANDARD_GAUSSIAN, BaseDistribution, VariationalParams


logger = get_logger("diagnostics")

MIN_MOMENT_SAMPLES = 1000


@dataclass
class VarianceReport:
    """Measured and predicted trace of the gradient variance for one family and size."""
    family: str
    n: int
    M: int
    d_star: int
    k_phi: float
    empirical: float
    stderr: float
    bound: float
    per_component: np.ndarray = field(default=None, repr=False)

    def to_row(self) -> Dict[str, float]:
        row = asdict(self)
        row.pop("per_component")
        return row


@dataclass
class ComplexityConstants:
    """
    Constants of the fixed-stepsize complexity analysis.

    Attributes:
        C_var: Variance constant of the iteration bound
        C_bias: Bias constant of the iteration bound
        expected_smoothness: Convex expected-smoothness constant
        sigma_sq: Gradient-noise constant at the optimum
        max_stepsize: Largest admissible fixed stepsize
        mu: Strong-convexity constant of the target
    """
    C_var: float
    C_bias: float
    expected_smoothness: float
    sigma_sq: float
    max_stepsize: float
    mu: float

    def predicted_iterations(self, eps: float, delta0: float) -> float:
        """T(eps, Delta_0) = max(C_var / eps, C_bias) * log(2 Delta_0^2 / eps)."""
        if not eps > 0:
            raise InvalidArgumentError(f"eps must be positive, got {eps}")
        return max(self.C_var / eps, self.C_bias) * np.log(2.0 * delta0 ** 2 / eps)


@dataclass
class MomentReport:
    estimates: np.ndarray
    stderrs: np.ndarray
    expected: np.ndarray
    passed: bool


@dataclass
class TraceIdentityReport:
    estimate: float
    exact: float
    stderr: float
    passed: bool


@dataclass
class NonconvexityReport:
    energy: float
    hessian: np.ndarray
    det: float
    min_eigenvalue: float


def _jackknife_trace(sq_dev: np.ndarray) -> Tuple[float, float]:
    """
    Trace of the sample covariance and its jackknife standard error.

    Args:
        sq_dev: Squared distances ``||x_i - mean||^2`` of the S samples

    Returns:
        (estimate, stderr); stderr is NaN for fewer than three samples
    """
    S = sq_dev.size
    total = float(sq_dev.sum())
    estimate = total / (S - 1)
    if S < 3:
        return estimate, float("nan")
    # leave-one-out sum of squares: total - S/(S-1) * ||x_i - mean||^2
    loo = (total - S / (S - 1) * sq_dev) / (S - 2)
    stderr = float(np.sqrt((S - 1) / S * np.sum((loo - loo.mean()) ** 2)))
    return estimate, stderr


def trace_of_variance(samples: np.ndarray) -> Tuple[float, float]:
    """
    Sum of per-entry sample variances of a stack of vectors.

    Args:
        samples: Array of shape (S, P), one sample per row, S >= 2

    Returns:
        (estimate, jackknife standard error)
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise InvalidArgumentError(f"need an (S, P) array with S >= 2, got shape {samples.shape}")
    centered = samples - samples.mean(axis=0)
    return _jackknife_trace(np.sum(centered * centered, axis=1))


def empirical_gradient_variance(params: VariationalParams, target, num_samples: int,
                                num_outer: int, rng: np.random.Generator,
                                base: BaseDistribution = STANDARD_GAUSSIAN) -> Tuple[float, float]:
    """
    Measure ``tr V g_M(lambda)`` from independent gradient estimates.

    Every outer sample gets its own seed, so the two streaming passes (mean,
    then squared deviations) regenerate identical estimates without holding
    all of them in memory.

    Args:
        params: Point at which the estimator is evaluated
        target: Finite-sum target
        num_samples: Monte Carlo samples per estimate (M)
        num_outer: Number of independent estimates (S >= 2)
        rng: Random stream supplying the per-estimate seeds
        base: Base distribution

    Returns:
        (estimate, jackknife standard error)
    """
    if num_outer < 2:
        raise InvalidArgumentError(f"need at least 2 outer samples, got {num_outer}")
    seeds = rng.integers(0, np.iinfo(np.int64).max, size=num_outer)

    def draw(seed) -> np.ndarray:
        estimate = estimate_energy_gradient(params, target, num_samples,
                                            np.random.default_rng(seed), base)
        return estimate.to_vector()

    mean = np.zeros(params.num_params)
    for seed in seeds:
        mean += draw(seed)
    mean /= num_outer

    sq_dev = np.empty(num_outer)
    for i, seed in enumerate(seeds):
        diff = draw(seed) - mean
        sq_dev[i] = np.dot(diff, diff)
    return _jackknife_trace(sq_dev)


def _bound_terms(params: VariationalParams, target, descriptor: SparsityDescriptor) -> np.ndarray:
    """L_n^2 (||m_n - zbar_n||^2 + ||C_n||_F^2) for every component."""
    smoothness = target.smoothness_constants()
    centers = target.stationary_points()
    if descriptor.num_components != target.num_components:
        raise InvalidArgumentError(
            f"descriptor has {descriptor.num_components} components, target has {target.num_components}"
        )
    terms = np.empty(target.num_components)
    for n, idx in enumerate(target.structure.index_sets):
        location = params.m[idx] - centers[n]
        scale = params.C.frobenius_norm_sq(component=n, descriptor=descriptor)
        terms[n] = smoothness.per_component[n] ** 2 * (np.dot(location, location) + scale)
    return terms


def theoretical_variance_bound(params: VariationalParams, target, descriptor: SparsityDescriptor,
                               num_samples: int, kurtosis: float,
                               per_component: bool = False):
    """
    ``(N/M)(d* + k_phi) sum_n L_n^2 (||m_n - zbar_n||^2 + ||C_n||_F^2)``.

    Args:
        params: Point at which the bound is evaluated
        target: Target with smoothness and stationary-point metadata
        descriptor: Sparsity descriptor of the family on the target
        num_samples: Monte Carlo samples per estimate (M)
        kurtosis: Fourth moment k_phi of the base distribution
        per_component: Also return the per-component contributions

    Returns:
        The bound, or (bound, contributions) when ``per_component`` is set

    Raises:
        UnsupportedOperationError: if the target lacks the metadata
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"number of samples must be at least 1, got {num_samples}")
    factor = target.num_components / num_samples * (descriptor.effective_dimensionality() + kurtosis)
    contributions = factor * _bound_terms(params, target, descriptor)
    bound = float(contributions.sum())
    return (bound, contributions) if per_component else bound


def variance_report(params: VariationalParams, target, family: str, num_samples: int,
                    num_outer: int, rng: np.random.Generator,
                    base: BaseDistribution = STANDARD_GAUSSIAN) -> VarianceReport:
    """Measured variance and bound at ``params`` for one family."""
    descriptor = SparsityDescriptor.from_structure(params.C, target.structure.index_sets)
    empirical, stderr = empirical_gradient_variance(params, target, num_samples, num_outer, rng, base)
    bound, contributions = theoretical_variance_bound(
        params, target, descriptor, num_samples, base.kurtosis, per_component=True
    )
    report = VarianceReport(
        family=family,
        n=target.num_components,
        M=num_samples,
        d_star=descriptor.effective_dimensionality(),
        k_phi=base.kurtosis,
        empirical=empirical,
        stderr=stderr,
        bound=bound,
        per_component=contributions,
    )
    logger.debug(f"Variance {family} N={report.n} M={num_samples}: "
                 f"{empirical:.4g} +/- {stderr:.2g} (bound {bound:.4g})")
    return report


def complexity_constants(target, descriptor: SparsityDescriptor, num_samples: int,
                         optimum: VariationalParams, kurtosis: float) -> ComplexityConstants:
    """
    Iteration-complexity constants of proximal SGD on a quadratic target.

    Args:
        target: Target with smoothness and stationary-point metadata
        descriptor: Sparsity descriptor of the family on the target
        num_samples: Monte Carlo samples per estimate (M)
        optimum: The family's optimum lambda*
        kurtosis: Fourth moment k_phi of the base distribution

    Returns:
        ComplexityConstants
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"number of samples must be at least 1, got {num_samples}")
    smoothness = target.smoothness_constants()
    mu = smoothness.mu
    L_n = smoothness.per_component
    N = target.num_components
    factor = N / num_samples * (descriptor.effective_dimensionality() + kurtosis)

    terms = _bound_terms(optimum, target, descriptor)
    kappa_sq = (L_n / mu) ** 2
    sigma_sq = factor * float(terms.sum())
    C_var = 4.0 * sigma_sq / mu ** 2
    C_bias = 2.0 * factor * float(kappa_sq.sum()) + smoothness.L / mu
    expected_smoothness = factor * float(np.sum(L_n ** 2)) / mu + smoothness.L
    max_stepsize = min(1.0 / (2.0 * expected_smoothness), 1.0 / mu)
    return ComplexityConstants(
        C_var=C_var,
        C_bias=C_bias,
        expected_smoothness=expected_smoothness,
        sigma_sq=sigma_sq,
        max_stepsize=max_stepsize,
        mu=mu,
    )


def convergence_envelope(stepsize: float, mu: float, r0: float, sigma_sq: float, iterations: int) -> float:
    """Fixed-stepsize bound ``(1 - gamma mu)^T r_0 + 2 gamma sigma^2 / mu`` on E r_T."""
    if not 0 < stepsize * mu <= 1:
        raise InvalidArgumentError(f"need 0 < stepsize * mu <= 1, got {stepsize * mu}")
    return (1.0 - stepsize * mu) ** iterations * r0 + 2.0 * stepsize * sigma_sq / mu


def base_moment_check(dist: BaseDistribution, num_samples: int, rng: np.random.Generator) -> MomentReport:
    """
    Check that the base distribution is symmetric, standardized and has kurtosis k_phi.

    Passes when each of the first four moments lies within 4 standard
    errors of (0, 1, 0, k_phi).
    """
    if num_samples < MIN_MOMENT_SAMPLES:
        raise InvalidArgumentError(f"moment check needs at least {MIN_MOMENT_SAMPLES} samples")
    u = dist.sample(rng, num_samples)
    powers = np.stack([u ** k for k in range(1, 5)])
    estimates = powers.mean(axis=1)
    stderrs = powers.std(axis=1, ddof=1) / np.sqrt(num_samples)
    expected = np.array([0.0, 1.0, 0.0, dist.kurtosis])
    passed = bool(np.all(np.abs(estimates - expected) <= 4.0 * stderrs))
    return MomentReport(estimates, stderrs, expected, passed)


def trace_identity_check(A: np.ndarray, dist: BaseDistribution, num_samples: int,
                         rng: np.random.Generator) -> TraceIdentityReport:
    """Monte Carlo check of ``E ||A u||^2 = ||A||_F^2``, passing within 5 standard errors."""
    if num_samples < MIN_MOMENT_SAMPLES:
        raise InvalidArgumentError(f"trace identity check needs at least {MIN_MOMENT_SAMPLES} samples")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    u = dist.sample(rng, (num_samples, A.shape[1]))
    norms = np.sum((u @ A.T) ** 2, axis=1)
    estimate = float(norms.mean())
    stderr = float(norms.std(ddof=1) / np.sqrt(num_samples))
    exact = float(np.sum(A * A))
    return TraceIdentityReport(estimate, exact, stderr, abs(estimate - exact) <= 5.0 * stderr)


def nonconvexity_report(x: float, y: float, z: float) -> NonconvexityReport:
    """
    Energy ``f = x^2 + z^2 + x^2 y^2`` with its analytic Hessian.

    f is the energy of a scalar non-standardized bordered family on
    ``l(z, y) = z^2 + y^2`` with (x, y, z) = (C_zz, C_yz, C_yy); its
    Hessian determinant ``8 x^2 (1 - 3 y^2)`` turns negative for |y| > 1/sqrt(3).
    """
    energy = x * x + z * z + x * x * y * y
    hessian = np.array([
        [2.0 + 2.0 * y * y, 4.0 * x * y, 0.0],
        [4.0 * x * y, 2.0 * x * x, 0.0],
        [0.0, 0.0, 2.0],
    ])
    det = 8.0 * x * x * (1.0 - 3.0 * y * y)
    min_eigenvalue = float(np.linalg.eigvalsh(hessian)[0])
    return NonconvexityReport(float(energy), hessian, float(det), min_eigenvalue)


def non_standardized_energy(params: VariationalParams) -> float:
    """
    Closed-form ``E ||T(u)||^2`` under the non-standardized bordered map with m = 0.

    Equals ``||C_zz||_F^2 + sum_n (||C_yy,n||_F^2 + ||C_yz,n C_zz||_F^2)``.
    """
    if not isinstance(params.C, BorderedBlockDiagonalScale):
        raise InvalidArgumentError("the non-standardized energy is defined for bordered scales only")
    if np.any(params.m != 0):
        raise InvalidArgumentError("the closed form assumes a zero location")
    c_zz, borders, local_blocks = params.C.blocks()
    coupled = np.einsum("nij,jk->nik", borders, c_zz)
    return float(np.sum(c_zz ** 2) + np.sum(local_blocks ** 2) + np.sum(coupled ** 2))


def predicted_iterations(constants: ComplexityConstants, eps: float,
                         delta0: Optional[float] = None, r0: Optional[float] = None) -> float:
    """Predicted iteration count from a distance ``delta0`` (or a squared distance ``r0``)."""
    if delta0 is None:
        if r0 is None:
            raise InvalidArgumentError("either delta0 or r0 must be given")
        delta0 = np.sqrt(r0)
    return constants.predicted_iterations(eps, delta0)
