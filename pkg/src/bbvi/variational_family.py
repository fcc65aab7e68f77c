"""
Location-scale variational families.

A member is ``q_lambda``: the law of ``z = C u + m`` where ``u`` has i.i.d.
standardized coordinates drawn from a base distribution. This module covers
base sampling, the reparameterization map, entropy, Monte Carlo ELBO
estimates and the parameter-space distance used to track convergence.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from .errors import InvalidArgumentError
from .logger import get_logger
from .scale_matrix import (
    BlockLayout,
    BorderedBlockDiagonalScale,
    DenseLowerTriangularScale,
    DiagonalScale,
    ScaleMatrix,
)


logger = get_logger("variational_family")

MEAN_FIELD = "mean_field"
FULL_RANK = "full_rank"
STRUCTURED = "structured"
FAMILIES = (MEAN_FIELD, FULL_RANK, STRUCTURED)

INIT_STANDARD = "standard"
INIT_REALISTIC = "realistic"


@dataclass(frozen=True)
class BaseDistribution:
    """
    Standardized base distribution of the location-scale family.

    Attributes:
        name: Identifier used in configuration files
        kurtosis: Fourth moment k_phi of one coordinate
        coordinate_entropy: Differential entropy of one coordinate
    """
    name: str
    kurtosis: float
    coordinate_entropy: float

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.name == "gaussian":
            return rng.standard_normal(size)
        half_width = np.sqrt(3.0)
        return rng.uniform(-half_width, half_width, size)


STANDARD_GAUSSIAN = BaseDistribution("gaussian", 3.0, 0.5 * np.log(2.0 * np.pi * np.e))
SCALED_UNIFORM = BaseDistribution("uniform", 9.0 / 5.0, np.log(2.0 * np.sqrt(3.0)))

BASE_DISTRIBUTIONS: Dict[str, BaseDistribution] = {
    STANDARD_GAUSSIAN.name: STANDARD_GAUSSIAN,
    SCALED_UNIFORM.name: SCALED_UNIFORM,
}


def get_base_distribution(name: str) -> BaseDistribution:
    try:
        return BASE_DISTRIBUTIONS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown base distribution '{name}', expected one of {sorted(BASE_DISTRIBUTIONS)}"
        ) from None


def sample_base(dist: BaseDistribution, d: int, rng: np.random.Generator,
                num_samples: Optional[int] = None) -> np.ndarray:
    """
    Draw standardized noise.

    Args:
        dist: Base distribution
        d: Dimension of one draw
        rng: Caller-owned random stream
        num_samples: If given, return an (num_samples, d) batch

    Returns:
        Vector of length d, or a batch of draws
    """
    if d < 1:
        raise InvalidArgumentError(f"dimension must be positive, got {d}")
    size = d if num_samples is None else (num_samples, d)
    return dist.sample(rng, size)


@dataclass
class VariationalParams:
    """The variational parameter lambda = (m, C)."""
    m: np.ndarray
    C: ScaleMatrix

    def __post_init__(self):
        self.m = np.array(self.m, dtype=float)
        if self.m.shape != (self.C.dim,):
            raise InvalidArgumentError(
                f"location has shape {self.m.shape} but scale dimension is {self.C.dim}"
            )

    @property
    def dim(self) -> int:
        return self.C.dim

    @property
    def num_params(self) -> int:
        return self.dim + self.C.num_params

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.m, self.C.entries])

    def with_vector(self, vector: np.ndarray) -> "VariationalParams":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.num_params,):
            raise InvalidArgumentError(f"expected {self.num_params} parameters, got shape {vector.shape}")
        return VariationalParams(vector[:self.dim].copy(), self.C.with_entries(vector[self.dim:].copy()))

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.m.copy(), self.C.copy())

    def same_structure(self, other: "VariationalParams") -> bool:
        return self.C.same_structure(other.C)


def make_scale(family: str, dim: Optional[int] = None, layout: Optional[BlockLayout] = None,
               scale: float = 1.0) -> ScaleMatrix:
    """
    Build ``scale * I`` in the storage of a variational family.

    Args:
        family: One of ``mean_field``, ``full_rank``, ``structured``
        dim: Dimension (taken from ``layout`` when omitted)
        layout: Block layout, required for the structured family
        scale: Diagonal value

    Returns:
        ScaleMatrix of the family's variant
    """
    if dim is None:
        if layout is None:
            raise InvalidArgumentError("either dim or layout must be given")
        dim = layout.dim
    if family == MEAN_FIELD:
        return DiagonalScale.identity(dim, scale)
    if family == FULL_RANK:
        return DenseLowerTriangularScale.identity(dim, scale)
    if family == STRUCTURED:
        if layout is None:
            raise InvalidArgumentError("the structured family needs a block layout")
        if layout.dim != dim:
            raise InvalidArgumentError(f"layout dimension {layout.dim} does not match {dim}")
        return BorderedBlockDiagonalScale.identity(layout, scale)
    raise InvalidArgumentError(f"unknown family '{family}', expected one of {FAMILIES}")


def initial_params(family: str, dim: Optional[int] = None, layout: Optional[BlockLayout] = None,
                   init: str = INIT_STANDARD) -> VariationalParams:
    """
    Starting point of an optimization run.

    ``standard`` is N(0, I); ``realistic`` is N(0, 10^-2 I).
    """
    if init == INIT_STANDARD:
        scale = 1.0
    elif init == INIT_REALISTIC:
        scale = 0.1
    else:
        raise InvalidArgumentError(f"unknown init '{init}', expected '{INIT_STANDARD}' or '{INIT_REALISTIC}'")
    C = make_scale(family, dim=dim, layout=layout, scale=scale)
    return VariationalParams(np.zeros(C.dim), C)


def reparameterize(params: VariationalParams, u: np.ndarray) -> np.ndarray:
    """T_lambda(u) = C u + m, for one draw or an (M, d) batch."""
    return params.C.matvec(u) + params.m


def reparameterize_non_standardized(params: VariationalParams, u: np.ndarray) -> np.ndarray:
    """
    Non-standardized map of a bordered structure.

    The global block is ``z = C_zz u_z + m_z`` and every local block is
    ``y_n = C_{y_n,y_n} u_{y_n} + m_{y_n} + C_{y_n,z} z``, so the border
    multiplies the sampled ``z`` instead of the noise ``u_z``.
    """
    C = params.C
    if not isinstance(C, BorderedBlockDiagonalScale):
        raise InvalidArgumentError("the non-standardized map is defined for bordered scales only")
    u = np.asarray(u, dtype=float)
    batch = np.atleast_2d(u)
    if batch.shape[1] != C.dim:
        raise InvalidArgumentError(f"expected noise of dimension {C.dim}, got shape {u.shape}")
    layout = C.layout
    c_zz, borders, local_blocks = C.blocks()
    u_y = batch[:, layout.d_z:].reshape(-1, layout.n_blocks, layout.d_y)
    z = batch[:, :layout.d_z] @ c_zz.T + params.m[:layout.d_z]
    y = (np.einsum("nij,mnj->mni", local_blocks, u_y)
         + np.einsum("nij,mj->mni", borders, z)
         + params.m[layout.d_z:].reshape(layout.n_blocks, layout.d_y))
    out = np.concatenate([z, y.reshape(batch.shape[0], -1)], axis=1)
    return out[0] if u.ndim == 1 else out


def negative_entropy(params: VariationalParams, report: bool = False,
                     base: BaseDistribution = STANDARD_GAUSSIAN) -> float:
    """
    The entropic regularizer h(lambda) = -log det C.

    Args:
        params: Variational parameters; C must lie in the domain
        report: Also subtract the base-distribution entropy so that the value
            is the exact negative differential entropy of q
        base: Base distribution supplying the entropy constant

    Returns:
        Negative entropy
    """
    value = -params.C.log_det_diag()
    if report:
        value -= params.dim * base.coordinate_entropy
    return value


def entropy(params: VariationalParams, base: BaseDistribution = STANDARD_GAUSSIAN) -> float:
    return -negative_entropy(params, report=True, base=base)


def elbo_estimate(params: VariationalParams, target, num_samples: int, rng: np.random.Generator,
                  base: BaseDistribution = STANDARD_GAUSSIAN) -> float:
    """
    Unbiased Monte Carlo estimate of the ELBO.

    Args:
        params: Variational parameters
        target: Target exposing ``value(Z)`` for an (M, d) batch
        num_samples: Number of Monte Carlo draws M
        rng: Random stream
        base: Base distribution of the family

    Returns:
        Mean of ``-l(T_lambda(u))`` plus the exact entropy of q
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"number of samples must be at least 1, got {num_samples}")
    h = entropy(params, base)
    u = sample_base(base, params.dim, rng, num_samples)
    energy = float(np.mean(target.value(reparameterize(params, u))))
    return -energy + h


def param_distance_sq(params: VariationalParams, reference: VariationalParams) -> float:
    """
    ||m - m*||^2 + ||C - C*||_F^2.

    Matching structures compare stored entries; differing structures of the
    same dimension are compared after dense expansion.
    """
    if params.dim != reference.dim:
        raise InvalidArgumentError(
            f"cannot compare parameters of dimension {params.dim} and {reference.dim}"
        )
    if params.same_structure(reference):
        diff = params.to_vector() - reference.to_vector()
        return float(np.dot(diff, diff))
    dm = params.m - reference.m
    dC = params.C.to_dense() - reference.C.to_dense()
    return float(np.dot(dm, dm) + np.sum(dC * dC))
