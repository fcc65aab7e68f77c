"""
Finite-sum targets l(z) = sum_n l_n(z) for black-box variational inference.

Each component only touches a subset of the coordinates. All built-in
targets are Gaussian (quadratic components), which gives exact smoothness
constants, stationary points, posterior moments and optimal variational
parameters to test against.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InvalidArgumentError, NumericalError, UnsupportedOperationError
from .logger import get_logger
from .scale_matrix import (
    BlockLayout,
    BorderedBlockDiagonalScale,
    DenseLowerTriangularScale,
    DiagonalScale,
)
from .variational_family import FULL_RANK, MEAN_FIELD, STRUCTURED, VariationalParams


logger = get_logger("targets")

MAX_ORACLE_DIM = 2000


@dataclass
class ComponentStructure:
    """Coordinates of z used by each component l_n."""
    dim: int
    index_sets: List[np.ndarray]

    def __post_init__(self):
        checked = []
        for n, idx in enumerate(self.index_sets):
            idx = np.asarray(idx, dtype=int)
            if idx.ndim != 1 or idx.size == 0:
                raise InvalidArgumentError(f"component {n} needs a non-empty 1-D index set")
            if np.any(np.diff(idx) <= 0):
                raise InvalidArgumentError(f"component {n} index set must be sorted and duplicate-free")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise InvalidArgumentError(f"component {n} index set exceeds [0, {self.dim})")
            checked.append(idx)
        self.index_sets = checked

    @classmethod
    def hierarchical(cls, layout: BlockLayout) -> "ComponentStructure":
        return cls(layout.dim, [layout.component_indices(n) for n in range(layout.n_blocks)])

    @property
    def num_components(self) -> int:
        return len(self.index_sets)


@dataclass
class SmoothnessConstants:
    """Smoothness L of l, strong convexity mu of l, and per-component L_n."""
    L: float
    mu: float
    per_component: np.ndarray


@dataclass
class PosteriorOracle:
    mean: np.ndarray
    covariance: np.ndarray
    log_evidence: float


class Target(ABC):
    """
    Negative log-joint written as a finite sum of components.

    Subclasses implement :meth:`eval_component`; the batched
    :meth:`value_and_grad` defaults to scattering component results.
    """

    def __init__(self, structure: ComponentStructure, layout: Optional[BlockLayout] = None):
        self.structure = structure
        self.layout = layout

    @property
    def dim(self) -> int:
        return self.structure.dim

    @property
    def num_components(self) -> int:
        return self.structure.num_components

    def _check_component(self, n: int, z_sub: np.ndarray) -> np.ndarray:
        if not 0 <= n < self.num_components:
            raise InvalidArgumentError(f"component index {n} out of range [0, {self.num_components})")
        z_sub = np.asarray(z_sub, dtype=float)
        expected = self.structure.index_sets[n].size
        if z_sub.shape != (expected,):
            raise InvalidArgumentError(f"component {n} expects {expected} coordinates, got shape {z_sub.shape}")
        return z_sub

    @abstractmethod
    def eval_component(self, n: int, z_sub: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        Evaluate l_n on its own coordinates.

        Args:
            n: Component index
            z_sub: Values of the coordinates in the n-th index set

        Returns:
            (value, gradient in the component subspace)
        """

    def value_and_grad(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Full l and its gradient for a batch of points.

        Args:
            z: Array of shape (M, d)

        Returns:
            (values of shape (M,), gradients of shape (M, d))
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        values = np.zeros(z.shape[0])
        grads = np.zeros_like(z)
        for row in range(z.shape[0]):
            for n, idx in enumerate(self.structure.index_sets):
                value, grad = self.eval_component(n, z[row, idx])
                values[row] += value
                grads[row, idx] += grad
        return values, grads

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.value_and_grad(z)[0]

    def smoothness_constants(self) -> SmoothnessConstants:
        raise UnsupportedOperationError(f"{type(self).__name__} provides no smoothness metadata")

    def stationary_points(self) -> List[np.ndarray]:
        raise UnsupportedOperationError(f"{type(self).__name__} provides no stationary points")

    def optimal_params(self, family: str) -> VariationalParams:
        raise UnsupportedOperationError(f"{type(self).__name__} has no closed-form variational optimum")


class QuadraticTarget(Target):
    """
    Target whose components are quadratics ``0.5 x^T H_n x - h_n^T x + c_n``.

    ``x`` is the restriction of z to the n-th index set and every ``H_n`` is
    symmetric positive definite.
    """

    def __init__(self, structure: ComponentStructure, hessians: Sequence[np.ndarray],
                 linear_terms: Sequence[np.ndarray], constants: Optional[Sequence[float]] = None,
                 layout: Optional[BlockLayout] = None):
        super().__init__(structure, layout)
        n_comp = structure.num_components
        if len(hessians) != n_comp or len(linear_terms) != n_comp:
            raise InvalidArgumentError("need one Hessian and one linear term per component")
        self.hessians = [np.asarray(H, dtype=float) for H in hessians]
        self.linear_terms = [np.asarray(h, dtype=float) for h in linear_terms]
        self.constants = np.zeros(n_comp) if constants is None else np.asarray(constants, dtype=float)

        for n, (idx, H, h) in enumerate(zip(structure.index_sets, self.hessians, self.linear_terms)):
            k = idx.size
            if H.shape != (k, k) or h.shape != (k,):
                raise InvalidArgumentError(f"component {n} blocks do not match its {k} coordinates")
            if not np.allclose(H, H.T):
                raise InvalidArgumentError(f"component {n} Hessian is not symmetric")

        sizes = {idx.size for idx in structure.index_sets}
        self._stacked = None
        if len(sizes) == 1:
            self._stacked = (
                np.stack(structure.index_sets),
                np.stack(self.hessians),
                np.stack(self.linear_terms),
            )

    def eval_component(self, n: int, z_sub: np.ndarray) -> Tuple[float, np.ndarray]:
        x = self._check_component(n, z_sub)
        Hx = self.hessians[n] @ x
        value = 0.5 * x @ Hx - self.linear_terms[n] @ x + self.constants[n]
        return float(value), Hx - self.linear_terms[n]

    def value_and_grad(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self._stacked is None:
            return super().value_and_grad(z)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        idx, H, h = self._stacked
        num_rows = z.shape[0]
        x = z[:, idx]
        Hx = np.einsum("nij,mnj->mni", H, x)
        values = (0.5 * np.einsum("mni,mni->m", x, Hx)
                  - np.einsum("mni,ni->m", x, h)
                  + self.constants.sum())
        component_grads = Hx - h[None]
        # scatter-add component gradients into the full coordinate space
        grads_t = np.zeros((self.dim, num_rows))
        np.add.at(grads_t, idx.ravel(), component_grads.reshape(num_rows, -1).T)
        return values, grads_t.T

    # ------------------------------------------------------------------
    # assembled quantities
    # ------------------------------------------------------------------
    def hessian(self) -> np.ndarray:
        H = np.zeros((self.dim, self.dim))
        for idx, H_n in zip(self.structure.index_sets, self.hessians):
            H[np.ix_(idx, idx)] += H_n
        return H

    def linear_term(self) -> np.ndarray:
        h = np.zeros(self.dim)
        for idx, h_n in zip(self.structure.index_sets, self.linear_terms):
            h[idx] += h_n
        return h

    def smoothness_constants(self) -> SmoothnessConstants:
        per_component = np.array([np.linalg.eigvalsh(H_n)[-1] for H_n in self.hessians])
        spectrum = np.linalg.eigvalsh(self.hessian())
        return SmoothnessConstants(L=float(spectrum[-1]), mu=float(spectrum[0]), per_component=per_component)

    def stationary_points(self) -> List[np.ndarray]:
        return [np.linalg.solve(H_n, h_n) for H_n, h_n in zip(self.hessians, self.linear_terms)]

    def gaussian_oracle(self) -> PosteriorOracle:
        """
        Exact moments and normalizer of the Gaussian exp(-l).

        Returns:
            PosteriorOracle with mean, covariance and log of the integral of exp(-l)
        """
        if self.dim > MAX_ORACLE_DIM:
            raise UnsupportedOperationError(
                f"dense oracle limited to d <= {MAX_ORACLE_DIM}, target has d = {self.dim}"
            )
        precision = self.hessian()
        try:
            chol = np.linalg.cholesky(precision)
        except np.linalg.LinAlgError as e:
            raise NumericalError("assembled precision is not positive definite") from e
        h = self.linear_term()
        mean = np.linalg.solve(precision, h)
        covariance = np.linalg.inv(precision)
        covariance = 0.5 * (covariance + covariance.T)
        min_value = self.constants.sum() - 0.5 * h @ mean
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        log_evidence = -min_value + 0.5 * self.dim * np.log(2.0 * np.pi) - 0.5 * log_det
        return PosteriorOracle(mean=mean, covariance=covariance, log_evidence=float(log_evidence))

    def optimal_params(self, family: str) -> VariationalParams:
        """
        Exact ELBO maximizer of a variational family for this Gaussian target.

        Args:
            family: ``full_rank``, ``mean_field`` or ``structured``

        Returns:
            VariationalParams at the optimum
        """
        oracle = self.gaussian_oracle()
        if family == MEAN_FIELD:
            precision_diag = np.diag(self.hessian())
            return VariationalParams(oracle.mean, DiagonalScale(1.0 / np.sqrt(precision_diag)))
        chol = np.linalg.cholesky(oracle.covariance)
        if family == FULL_RANK:
            return VariationalParams(oracle.mean, DenseLowerTriangularScale.from_dense(chol))
        if family == STRUCTURED:
            if self.layout is None:
                raise UnsupportedOperationError("structured optimum needs a block layout")
            tolerance = 1e-8 * max(1.0, float(np.max(np.abs(chol))))
            try:
                scale = BorderedBlockDiagonalScale.from_dense(self.layout, chol, atol=tolerance)
            except InvalidArgumentError as e:
                raise UnsupportedOperationError(
                    "posterior Cholesky factor is not bordered block-diagonal"
                ) from e
            return VariationalParams(oracle.mean, scale)
        raise InvalidArgumentError(f"unknown family '{family}'")


GLOBAL_SHARED = "shared"
GLOBAL_REPLICATED = "replicated"
GLOBAL_TERMS = (GLOBAL_SHARED, GLOBAL_REPLICATED)


class SyntheticIsotropicHierarchical(QuadraticTarget):
    """
    Isotropic Gaussian hierarchical target used by the scaling experiments.

    ``l_n(y_n, z) = -log N(y_n; mean, variance I) - w log N(z; mean, variance I)``.

    With ``global_term="shared"`` (default) each component carries ``w = 1/N``
    of the global term, so the aggregate precision of z is ``1 / variance``.
    ``"replicated"`` uses ``w = 1`` and an aggregate z precision of
    ``N / variance``.
    """

    def __init__(self, n_datapoints: int, d_z: int = 5, d_y: int = 3,
                 mean: float = 5.0, variance: float = 0.1, global_term: str = GLOBAL_SHARED):
        if variance <= 0:
            raise InvalidArgumentError(f"variance must be positive, got {variance}")
        if global_term not in GLOBAL_TERMS:
            raise InvalidArgumentError(f"global_term must be one of {GLOBAL_TERMS}, got '{global_term}'")
        layout = BlockLayout(d_z, d_y, n_datapoints)
        structure = ComponentStructure.hierarchical(layout)
        global_weight = 1.0 / n_datapoints if global_term == GLOBAL_SHARED else 1.0

        precision = 1.0 / variance
        weights = np.concatenate([np.full(d_z, global_weight), np.ones(d_y)])
        hessian = np.diag(precision * weights)
        linear = precision * mean * weights
        # 0.5 x^T H x - h^T x + c == sum_j w_j (x_j - mean)^2 / (2 variance) + log_normalizer
        log_normalizer = 0.5 * np.log(2.0 * np.pi * variance) * weights.sum()
        constant = 0.5 * precision * mean ** 2 * weights.sum() + log_normalizer
        super().__init__(
            structure,
            [hessian] * n_datapoints,
            [linear] * n_datapoints,
            np.full(n_datapoints, constant),
            layout=layout,
        )
        self.mean = float(mean)
        self.variance = float(variance)
        self.global_term = global_term
        self.global_weight = float(global_weight)
        self._log_normalizer = float(log_normalizer)

    @property
    def global_precision(self) -> float:
        """Aggregate precision of each global coordinate."""
        return self.layout.n_blocks * self.global_weight / self.variance

    def value_and_grad(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        diff = z - self.mean
        precisions = np.full(self.dim, 1.0 / self.variance)
        precisions[:self.layout.d_z] = self.global_precision
        grads = precisions * diff
        values = 0.5 * np.sum(precisions * diff * diff, axis=1) + self.num_components * self._log_normalizer
        return values, grads

    def smoothness_constants(self) -> SmoothnessConstants:
        precision = 1.0 / self.variance
        curvatures = [precision]
        if self.layout.d_z > 0:
            curvatures.append(self.global_precision)
        per_component = precision * max(self.global_weight, 1.0) if self.layout.d_z > 0 else precision
        return SmoothnessConstants(
            L=max(curvatures), mu=min(curvatures), per_component=np.full(self.num_components, per_component)
        )

    def stationary_points(self) -> List[np.ndarray]:
        k = self.layout.d_z + self.layout.d_y
        return [np.full(k, self.mean) for _ in range(self.num_components)]

    def optimal_params(self, family: str) -> VariationalParams:
        """Closed form: m* = mean everywhere, scale 1/sqrt(precision) per coordinate."""
        diag = np.full(self.dim, np.sqrt(self.variance))
        diag[:self.layout.d_z] = 1.0 / np.sqrt(self.global_precision)
        m = np.full(self.dim, self.mean)
        if family == MEAN_FIELD:
            return VariationalParams(m, DiagonalScale(diag))
        if family == FULL_RANK:
            return VariationalParams(m, DenseLowerTriangularScale.from_dense(np.diag(diag)))
        if family == STRUCTURED:
            return VariationalParams(m, BorderedBlockDiagonalScale.from_dense(self.layout, np.diag(diag)))
        raise InvalidArgumentError(f"unknown family '{family}'")


class FiniteSumQuadratic(QuadraticTarget):
    """``l_n(x) = 0.5 (x - zbar_n)^T A_n (x - zbar_n) + c_n`` on each index set."""

    def __init__(self, index_sets: Sequence[Sequence[int]], matrices: Sequence[np.ndarray],
                 centers: Sequence[np.ndarray], dim: Optional[int] = None,
                 constants: Optional[Sequence[float]] = None, layout: Optional[BlockLayout] = None):
        index_sets = [np.asarray(idx, dtype=int) for idx in index_sets]
        if dim is None:
            dim = int(max(idx.max() for idx in index_sets)) + 1
        structure = ComponentStructure(dim, index_sets)
        matrices = [np.asarray(A, dtype=float) for A in matrices]
        centers = [np.asarray(c, dtype=float) for c in centers]
        for n, A in enumerate(matrices):
            try:
                np.linalg.cholesky(A)
            except np.linalg.LinAlgError as e:
                raise InvalidArgumentError(f"component {n} matrix is not positive definite") from e
        base_constants = np.zeros(len(matrices)) if constants is None else np.asarray(constants, dtype=float)
        linear = [A @ c for A, c in zip(matrices, centers)]
        shifted = [b + 0.5 * c @ A @ c for A, c, b in zip(matrices, centers, base_constants)]
        super().__init__(structure, matrices, linear, shifted, layout=layout)
        self.centers = centers

    @classmethod
    def random(cls, dim: int, n_components: int, subset_size: int, rng: np.random.Generator,
               eigen_range: Tuple[float, float] = (0.5, 2.0)) -> "FiniteSumQuadratic":
        """
        Random instance whose index sets jointly cover every coordinate.

        Args:
            dim: Dimension d
            n_components: Number of components N
            subset_size: Coordinates per component
            rng: Random stream
            eigen_range: Range of the eigenvalues of every A_n

        Returns:
            FiniteSumQuadratic
        """
        if not 1 <= subset_size <= dim:
            raise InvalidArgumentError(f"subset size must lie in [1, {dim}], got {subset_size}")
        index_sets, matrices, centers = [], [], []
        order = rng.permutation(dim)
        for n in range(n_components):
            # cycle through a permutation so the union covers all coordinates
            forced = order[n % dim]
            others = rng.choice(np.setdiff1d(np.arange(dim), [forced]), subset_size - 1, replace=False)
            idx = np.sort(np.concatenate([[forced], others]))
            q, _ = np.linalg.qr(rng.standard_normal((subset_size, subset_size)))
            eigen = rng.uniform(*eigen_range, subset_size)
            index_sets.append(idx)
            matrices.append((q * eigen) @ q.T)
            centers.append(rng.normal(0.0, 1.0, subset_size))
        covered = np.unique(np.concatenate(index_sets))
        if covered.size < dim:
            raise InvalidArgumentError(
                f"{n_components} components of size {subset_size} cannot cover {dim} coordinates"
            )
        return cls(index_sets, matrices, centers, dim=dim)

    @classmethod
    def factorized(cls, dim: int, curvatures: Optional[np.ndarray] = None,
                   centers: Optional[np.ndarray] = None) -> "FiniteSumQuadratic":
        """One component per coordinate, each touching that coordinate only."""
        curvatures = np.ones(dim) if curvatures is None else np.asarray(curvatures, dtype=float)
        centers = np.zeros(dim) if centers is None else np.asarray(centers, dtype=float)
        return cls(
            [[j] for j in range(dim)],
            [np.array([[a]]) for a in curvatures],
            [np.array([c]) for c in centers],
            dim=dim,
        )

    @classmethod
    def hierarchical(cls, layout: BlockLayout, rng: np.random.Generator,
                     eigen_range: Tuple[float, float] = (0.5, 2.0)) -> "FiniteSumQuadratic":
        """Random instance on the global/local index sets of ``layout``."""
        k = layout.d_z + layout.d_y
        index_sets, matrices, centers = [], [], []
        for n in range(layout.n_blocks):
            q, _ = np.linalg.qr(rng.standard_normal((k, k)))
            index_sets.append(layout.component_indices(n))
            matrices.append((q * rng.uniform(*eigen_range, k)) @ q.T)
            centers.append(rng.normal(0.0, 1.0, k))
        return cls(index_sets, matrices, centers, dim=layout.dim, layout=layout)

    def stationary_points(self) -> List[np.ndarray]:
        return [c.copy() for c in self.centers]


class CorrelatedHierarchicalGaussian(QuadraticTarget):
    """
    Two-level Gaussian model with an exact posterior.

    ``z ~ N(mu0, sigma0^2 I)``, ``y_n | z ~ N(A z + b, Sigma_y)`` and
    ``x_n | y_n ~ N(y_n, sigma_x^2 I)``. Component n carries
    ``-log p(y_n | z) - log p(x_n | y_n)`` plus 1/N of the prior on z.
    """

    def __init__(self, observations: np.ndarray, d_z: int, coupling: Optional[np.ndarray] = None,
                 offset: Optional[np.ndarray] = None, local_covariance: Optional[np.ndarray] = None,
                 prior_mean: Optional[np.ndarray] = None, prior_scale: float = 1.0,
                 noise_scale: float = 0.5):
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        n_datapoints, d_y = observations.shape
        layout = BlockLayout(d_z, d_y, n_datapoints)
        self.coupling = default_coupling(d_y, d_z) if coupling is None else np.asarray(coupling, dtype=float)
        self.offset = np.zeros(d_y) if offset is None else np.asarray(offset, dtype=float)
        self.local_covariance = (default_local_covariance(d_y) if local_covariance is None
                                 else np.asarray(local_covariance, dtype=float))
        self.prior_mean = np.zeros(d_z) if prior_mean is None else np.asarray(prior_mean, dtype=float)
        self.prior_scale = float(prior_scale)
        self.noise_scale = float(noise_scale)
        self.observations = observations

        if self.coupling.shape != (d_y, d_z):
            raise InvalidArgumentError(f"coupling must have shape ({d_y}, {d_z}), got {self.coupling.shape}")
        if self.prior_scale <= 0 or self.noise_scale <= 0:
            raise InvalidArgumentError("prior and noise scales must be positive")
        try:
            local_chol = np.linalg.cholesky(self.local_covariance)
        except np.linalg.LinAlgError as e:
            raise InvalidArgumentError("local covariance is not positive definite") from e

        local_precision = np.linalg.inv(self.local_covariance)
        local_log_det = 2.0 * np.sum(np.log(np.diag(local_chol)))
        k = d_z + d_y
        select_z = np.eye(k)[:d_z]
        select_y = np.eye(k)[d_z:]
        residual = select_y - self.coupling @ select_z  # y - A z as a map of (z, y)

        prior_precision = 1.0 / (n_datapoints * self.prior_scale ** 2)
        noise_precision = 1.0 / self.noise_scale ** 2
        shared_hessian = (residual.T @ local_precision @ residual
                          + noise_precision * select_y.T @ select_y
                          + prior_precision * select_z.T @ select_z)
        shared_linear = residual.T @ local_precision @ self.offset + prior_precision * select_z.T @ self.prior_mean
        shared_constant = (0.5 * self.offset @ local_precision @ self.offset
                           + 0.5 * (d_y * np.log(2.0 * np.pi) + local_log_det)
                           + 0.5 * d_y * np.log(2.0 * np.pi * self.noise_scale ** 2)
                           + (0.5 * self.prior_mean @ self.prior_mean / self.prior_scale ** 2
                              + 0.5 * d_z * np.log(2.0 * np.pi * self.prior_scale ** 2)) / n_datapoints)

        linear_terms, constants = [], []
        for x in observations:
            linear_terms.append(shared_linear + noise_precision * select_y.T @ x)
            constants.append(shared_constant + 0.5 * noise_precision * x @ x)
        super().__init__(
            ComponentStructure.hierarchical(layout),
            [shared_hessian] * n_datapoints,
            linear_terms,
            constants,
            layout=layout,
        )

    @classmethod
    def simulate(cls, n_datapoints: int, d_z: int = 2, d_y: int = 2, seed: int = 0,
                 **model_kwargs) -> "CorrelatedHierarchicalGaussian":
        """Draw observations from the model itself and build the target."""
        rng = np.random.default_rng(seed)
        coupling = model_kwargs.get("coupling", default_coupling(d_y, d_z))
        offset = model_kwargs.get("offset", np.zeros(d_y))
        local_covariance = model_kwargs.get("local_covariance", default_local_covariance(d_y))
        prior_mean = model_kwargs.get("prior_mean", np.zeros(d_z))
        prior_scale = model_kwargs.get("prior_scale", 1.0)
        noise_scale = model_kwargs.get("noise_scale", 0.5)

        z = prior_mean + prior_scale * rng.standard_normal(d_z)
        y = rng.multivariate_normal(coupling @ z + offset, local_covariance, size=n_datapoints)
        x = y + noise_scale * rng.standard_normal((n_datapoints, d_y))
        logger.debug(f"Simulated {n_datapoints} observations (d_z={d_z}, d_y={d_y}, seed={seed})")
        return cls(x, d_z, coupling=coupling, offset=offset, local_covariance=local_covariance,
                   prior_mean=prior_mean, prior_scale=prior_scale, noise_scale=noise_scale)

    def posterior_oracle(self) -> PosteriorOracle:
        """Exact posterior mean, covariance and log evidence log p(x)."""
        return self.gaussian_oracle()


def default_coupling(d_y: int, d_z: int) -> np.ndarray:
    coupling = np.zeros((d_y, d_z))
    for i in range(d_y):
        for j in range(d_z):
            coupling[i, j] = 1.0 if i % max(d_z, 1) == j else 0.5
    return coupling


def default_local_covariance(d_y: int, scale: float = 0.7, correlation: float = 0.3) -> np.ndarray:
    return scale ** 2 * ((1.0 - correlation) * np.eye(d_y) + correlation * np.ones((d_y, d_y)))


def load_observations(path: Path) -> np.ndarray:
    """
    Load observations from CSV, one row per datapoint.

    Args:
        path: CSV file with one numeric column per local dimension

    Returns:
        Array of shape (N, d_y)
    """
    logger.info(f"Loading observations from {path}")
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        logger.error(f"Observation file not found: {path}")
        raise
    values = df.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if values.size == 0 or np.isnan(values).any():
        raise InvalidArgumentError(f"observation file {path} must contain plain decimal values only")
    logger.info(f"Loaded {values.shape[0]} observations with {values.shape[1]} columns")
    return values


def save_observations(observations: np.ndarray, path: Path) -> Path:
    observations = np.atleast_2d(observations)
    columns = [f"x{i}" for i in range(observations.shape[1])]
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(observations, columns=columns).to_csv(path, index=False)
    logger.info(f"Saved {observations.shape[0]} observations to {path}")
    return path
