"""
Reparameterization gradient of the energy f(lambda) = E l(T_lambda(u)).

Each noise draw u_m is shared by all components; by linearity the pullback
of the summed component gradients equals the sum of per-component
pullbacks, so the estimator scatters component gradients into one
d-vector per draw and accumulates ``g u^T`` on the stored pattern of C.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidArgumentError
from .logger import get_logger
from .scale_matrix import ScaleMatrix, SparsityDescriptor
from .variational_family import (
    STANDARD_GAUSSIAN,
    BaseDistribution,
    VariationalParams,
    reparameterize,
    sample_base,
)


logger = get_logger("gradient_estimator")


@dataclass
class GradientEstimate:
    """Gradient with the shape of lambda: a location part and a scale-shaped part."""
    grad_m: np.ndarray
    grad_C: ScaleMatrix

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.grad_m, self.grad_C.entries])

    def plus(self, other: "GradientEstimate") -> "GradientEstimate":
        return GradientEstimate(
            self.grad_m + other.grad_m,
            self.grad_C.with_entries(self.grad_C.entries + other.grad_C.entries),
        )


def estimate_energy_gradient(params: VariationalParams, target, num_samples: int,
                             rng: np.random.Generator,
                             base: BaseDistribution = STANDARD_GAUSSIAN) -> GradientEstimate:
    """
    M-sample reparameterization estimate of the energy gradient.

    Args:
        params: Current variational parameters
        target: Finite-sum target exposing ``value_and_grad``
        num_samples: Number of Monte Carlo draws M
        rng: Random stream
        base: Base distribution of the family

    Returns:
        GradientEstimate shaped like ``params``
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"number of samples must be at least 1, got {num_samples}")
    u = sample_base(base, params.dim, rng, num_samples)
    return energy_gradient_from_noise(params, target, u)


def energy_gradient_from_noise(params: VariationalParams, target, u: np.ndarray) -> GradientEstimate:
    """The estimator evaluated on given noise draws (one per row of ``u``)."""
    u = np.atleast_2d(u)
    num_samples = u.shape[0]
    _, grads = target.value_and_grad(reparameterize(params, u))
    grad_m = grads.mean(axis=0)
    grad_C = params.C.zeros_like().outer_accumulate(grads / num_samples, u)
    return GradientEstimate(grad_m, grad_C)


def jacobian_factor(u: np.ndarray, descriptor: SparsityDescriptor, n: int) -> float:
    """
    ``1 + sum_j delta_{n,j} u_j^2``, the scalar of the squared Jacobian of T^n.

    Args:
        u: Noise vector of length d
        descriptor: Sparsity descriptor of the family on the target
        n: Component index

    Returns:
        The Jacobian factor
    """
    if not 0 <= n < descriptor.num_components:
        raise InvalidArgumentError(f"component index {n} out of range [0, {descriptor.num_components})")
    u = np.asarray(u, dtype=float)
    return float(1.0 + np.sum(u[descriptor.delta[n]] ** 2))


class _SingleComponent:
    """One component l_n of a target, scattered into the full coordinate space."""

    def __init__(self, target, n: int):
        self.target = target
        self.n = n
        self.index_set = target.structure.index_sets[n]

    def value_and_grad(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.atleast_2d(z)
        values = np.empty(z.shape[0])
        grads = np.zeros_like(z, dtype=float)
        for row in range(z.shape[0]):
            values[row], grads[row, self.index_set] = self.target.eval_component(self.n, z[row, self.index_set])
        return values, grads


def component_energy_gradient(params: VariationalParams, target, u: np.ndarray, n: int) -> GradientEstimate:
    """Single-draw pullback of ``l_n(T_lambda(u))`` onto the stored parameters."""
    return energy_gradient_from_noise(params, _SingleComponent(target, n), np.asarray(u, dtype=float)[None])


def component_parameter_gradient(params: VariationalParams, target, u: np.ndarray,
                                 descriptor: SparsityDescriptor, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    lambda-gradient of ``l_n(T^n_lambda(u))`` on the parameters of component n.

    The parameters of component n are the location entries on its index set
    and the scale entries of its rows on every delta-marked column, so the
    scale block is dense even where the family stores structural zeros.

    Returns:
        (gradient of l_n in its own coordinates, location part, scale part of
        shape (|index set|, number of marked columns))
    """
    if not 0 <= n < descriptor.num_components:
        raise InvalidArgumentError(f"component index {n} out of range [0, {descriptor.num_components})")
    idx = descriptor.index_sets[n]
    estimate = component_energy_gradient(params, target, u, n)
    grad = estimate.grad_m[idx]
    # d T_i / d C_ij = u_j
    marked_noise = np.asarray(u, dtype=float)[descriptor.delta[n]]
    return grad, grad.copy(), np.outer(grad, marked_noise)
