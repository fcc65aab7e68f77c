"""
Scale-matrix storage and kernels for location-scale variational families.

Three structures are supported: diagonal (mean-field), dense lower-triangular
(full-rank) and bordered block-diagonal (structured). Every variant stores a
flat ``entries`` vector together with the (row, column) positions of those
entries, so the parameter-space operations (pullbacks, norms, the proximal
step) run in time proportional to the number of stored entries.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainViolationError, InvalidArgumentError
from .logger import get_logger


logger = get_logger("scale_matrix")


@dataclass(frozen=True)
class BlockLayout:
    """
    Global/local block layout of a two-level hierarchical model.

    Variables are ordered ``[z; y_1; ...; y_N]`` with ``z`` of size ``d_z`` and
    every local block ``y_n`` of size ``d_y``.
    """
    d_z: int
    d_y: int
    n_blocks: int

    def __post_init__(self):
        if self.d_z < 0:
            raise InvalidArgumentError(f"d_z must be non-negative, got {self.d_z}")
        if self.d_y < 1:
            raise InvalidArgumentError(f"d_y must be positive, got {self.d_y}")
        if self.n_blocks < 1:
            raise InvalidArgumentError(f"n_blocks must be positive, got {self.n_blocks}")

    @property
    def dim(self) -> int:
        return self.d_z + self.n_blocks * self.d_y

    def local_offset(self, n: int) -> int:
        return self.d_z + n * self.d_y

    def component_indices(self, n: int) -> np.ndarray:
        """Coordinates used by the n-th datapoint: the global block then ``y_n``."""
        if not 0 <= n < self.n_blocks:
            raise InvalidArgumentError(f"block index {n} out of range [0, {self.n_blocks})")
        offset = self.local_offset(n)
        return np.concatenate([np.arange(self.d_z), np.arange(offset, offset + self.d_y)])


def _readonly(*arrays: np.ndarray) -> Tuple[np.ndarray, ...]:
    for array in arrays:
        array.setflags(write=False)
    return arrays


@lru_cache(maxsize=64)
def _dense_positions(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(dim)
    return _readonly(rows, cols)


@lru_cache(maxsize=64)
def _bordered_positions(layout: BlockLayout) -> Tuple[np.ndarray, np.ndarray]:
    d_z, d_y, n_blocks = layout.d_z, layout.d_y, layout.n_blocks
    zz_rows, zz_cols = np.tril_indices(d_z)
    local_rows, local_cols = np.tril_indices(d_y)
    offsets = d_z + np.arange(n_blocks) * d_y

    # per block: border (d_y x d_z, row-major) followed by the packed local triangle
    border_rows = np.repeat(np.arange(d_y), d_z)
    border_cols = np.tile(np.arange(d_z), d_y)
    block_rows = offsets[:, None] + np.concatenate([border_rows, local_rows])[None, :]
    block_cols = np.concatenate([
        np.broadcast_to(border_cols, (n_blocks, border_cols.size)),
        offsets[:, None] + local_cols[None, :],
    ], axis=1)

    rows = np.concatenate([zz_rows, block_rows.ravel()])
    cols = np.concatenate([zz_cols, block_cols.ravel()])
    return _readonly(rows, cols)


class ScaleMatrix(ABC):
    """
    Lower-triangular scale matrix ``C`` in packed storage.

    Positivity of the diagonal is not enforced at construction: gradient
    accumulators share this type, and plain SGD iterates may overshoot. It is
    checked wherever membership in the domain is required
    (:meth:`log_det_diag`, :meth:`check_domain`).
    """

    variant: str = ""

    def __init__(self, entries: np.ndarray):
        entries = np.array(entries, dtype=float)
        if entries.ndim != 1 or entries.size != self.num_params:
            raise InvalidArgumentError(
                f"{self.variant} scale expects {self.num_params} entries, got shape {entries.shape}"
            )
        self.entries = entries

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------
    @property
    @abstractmethod
    def dim(self) -> int:
        """Dimension d of the square matrix."""

    @property
    @abstractmethod
    def positions(self) -> Tuple[np.ndarray, np.ndarray]:
        """(rows, cols) of every stored entry, aligned with ``entries``."""

    @property
    def num_params(self) -> int:
        return self.positions[0].size

    @property
    def diagonal_positions(self) -> np.ndarray:
        rows, cols = self.positions
        return np.flatnonzero(rows == cols)

    @abstractmethod
    def with_entries(self, entries: np.ndarray) -> "ScaleMatrix":
        """A matrix of the same variant and layout holding ``entries``."""

    def zeros_like(self) -> "ScaleMatrix":
        return self.with_entries(np.zeros(self.num_params))

    def copy(self) -> "ScaleMatrix":
        return self.with_entries(self.entries.copy())

    def same_structure(self, other: "ScaleMatrix") -> bool:
        return type(self) is type(other) and self._layout_key() == other._layout_key()

    @abstractmethod
    def _layout_key(self) -> tuple:
        ...

    def diagonal(self) -> np.ndarray:
        return self.entries[self.diagonal_positions]

    # ------------------------------------------------------------------
    # linear algebra
    # ------------------------------------------------------------------
    def matvec(self, u: np.ndarray) -> np.ndarray:
        """
        Compute ``C u``.

        Args:
            u: Vector of length d, or an (M, d) batch with one sample per row

        Returns:
            Array with the same shape as ``u``
        """
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (self.dim,) or u.ndim > 2:
            raise InvalidArgumentError(f"matvec expects trailing dimension {self.dim}, got shape {u.shape}")
        result = self._matvec_batch(np.atleast_2d(u))
        return result[0] if u.ndim == 1 else result

    @abstractmethod
    def _matvec_batch(self, u: np.ndarray) -> np.ndarray:
        ...

    def to_dense(self) -> np.ndarray:
        rows, cols = self.positions
        dense = np.zeros((self.dim, self.dim))
        dense[rows, cols] = self.entries
        return dense

    def check_domain(self) -> None:
        diagonal = self.diagonal()
        if not np.all(np.isfinite(diagonal)) or np.any(diagonal <= 0):
            worst = float(np.nanmin(diagonal)) if diagonal.size else float("nan")
            raise DomainViolationError(f"scale diagonal must be strictly positive (min entry {worst})")

    def log_det_diag(self) -> float:
        """Sum of log diagonal entries, i.e. log det C for a triangular C."""
        self.check_domain()
        return float(np.sum(np.log(self.diagonal())))

    def frobenius_norm_sq(self, component: Optional[int] = None,
                          descriptor: Optional["SparsityDescriptor"] = None) -> float:
        """
        Squared Frobenius norm over stored entries.

        Args:
            component: If given, only rows used by this component are summed
            descriptor: Sparsity descriptor holding the component index sets

        Returns:
            Sum of squared entries
        """
        if component is None:
            return float(np.dot(self.entries, self.entries))
        if descriptor is None:
            raise InvalidArgumentError("per-component Frobenius norm needs a SparsityDescriptor")
        rows, _ = self.positions
        mask = descriptor.row_mask(component)[rows]
        selected = self.entries[mask]
        return float(np.dot(selected, selected))

    def prox_diagonal(self, gamma: float) -> "ScaleMatrix":
        """
        Proximal step for the regularizer ``-log det C`` with stepsize ``gamma``.

        Each diagonal entry c becomes ``c + (sqrt(c^2 + 4 gamma) - c) / 2``,
        the positive root of ``c' (c' - c) = gamma``. Off-diagonal entries are
        left untouched; any real c (including c <= 0) maps to c' > 0.
        """
        if not gamma > 0:
            raise InvalidArgumentError(f"prox stepsize must be positive, got {gamma}")
        diag_idx = self.diagonal_positions
        c = self.entries[diag_idx]
        root = np.sqrt(c * c + 4.0 * gamma)
        # the two algebraically equal forms avoid cancellation on either sign of c
        with np.errstate(divide="ignore", invalid="ignore"):
            updated = np.where(c >= 0, 0.5 * (c + root), 2.0 * gamma / (root - c))
        entries = self.entries.copy()
        entries[diag_idx] = updated
        return self.with_entries(entries)

    def outer_accumulate(self, g: np.ndarray, u: np.ndarray) -> "ScaleMatrix":
        """
        Add ``g_i * u_j`` to every stored position (i, j), in place.

        Accepts single vectors or (M, d) batches (the batch is summed).

        Returns:
            self, for chaining
        """
        g = np.atleast_2d(np.asarray(g, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if g.shape != u.shape or g.shape[1] != self.dim:
            raise InvalidArgumentError(
                f"outer_accumulate expects matching (M, {self.dim}) inputs, got {g.shape} and {u.shape}"
            )
        self.entries += self._outer_batch(g, u)
        return self

    @abstractmethod
    def _outer_batch(self, g: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Sum over rows m of ``g[m, i] * u[m, j]`` at each stored (i, j)."""

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    @abstractmethod
    def _layout_fields(self) -> List[int]:
        ...

    def to_csv_row(self) -> str:
        """Flat CSV row: variant tag, layout integers, packed entries."""
        fields = [self.variant] + [str(v) for v in self._layout_fields()]
        fields += [repr(float(x)) for x in self.entries]
        return ",".join(fields)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim}, params={self.num_params})"


class DiagonalScale(ScaleMatrix):
    """Mean-field scale: d positive reals on the diagonal."""

    variant = "diagonal"

    def __init__(self, entries: np.ndarray):
        self._dim = int(np.size(entries))
        super().__init__(entries)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "DiagonalScale":
        return cls(np.full(dim, float(scale)))

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def positions(self) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self._dim)
        return idx, idx

    @property
    def num_params(self) -> int:
        return self._dim

    @property
    def diagonal_positions(self) -> np.ndarray:
        return np.arange(self._dim)

    def with_entries(self, entries: np.ndarray) -> "DiagonalScale":
        return DiagonalScale(entries)

    def _layout_key(self) -> tuple:
        return (self._dim,)

    def _layout_fields(self) -> List[int]:
        return [self._dim]

    def _matvec_batch(self, u: np.ndarray) -> np.ndarray:
        return u * self.entries

    def to_dense(self) -> np.ndarray:
        return np.diag(self.entries)

    def _outer_batch(self, g: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.einsum("mi,mi->i", g, u)


class DenseLowerTriangularScale(ScaleMatrix):
    """Full-rank scale: d(d+1)/2 entries, lower triangle packed row-major."""

    variant = "dense"

    def __init__(self, dim: int, entries: np.ndarray):
        if dim < 1:
            raise InvalidArgumentError(f"dimension must be positive, got {dim}")
        self._dim = int(dim)
        super().__init__(entries)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "DenseLowerTriangularScale":
        rows, cols = _dense_positions(dim)
        return cls(dim, np.where(rows == cols, float(scale), 0.0))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "DenseLowerTriangularScale":
        dense = np.asarray(dense, dtype=float)
        rows, cols = _dense_positions(dense.shape[0])
        return cls(dense.shape[0], dense[rows, cols])

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def positions(self) -> Tuple[np.ndarray, np.ndarray]:
        return _dense_positions(self._dim)

    def with_entries(self, entries: np.ndarray) -> "DenseLowerTriangularScale":
        return DenseLowerTriangularScale(self._dim, entries)

    def _layout_key(self) -> tuple:
        return (self._dim,)

    def _layout_fields(self) -> List[int]:
        return [self._dim]

    def _matvec_batch(self, u: np.ndarray) -> np.ndarray:
        return u @ self.to_dense().T

    def _outer_batch(self, g: np.ndarray, u: np.ndarray) -> np.ndarray:
        rows, cols = self.positions
        return (g.T @ u)[rows, cols]


class BorderedBlockDiagonalScale(ScaleMatrix):
    """
    Structured scale with a global block, per-datapoint borders and local blocks.

    Storage is ``[C_zz packed | (C_{y_1,z}, C_{y_1,y_1} packed) | ... ]`` so
    that everything belonging to datapoint n is contiguous.
    """

    variant = "bordered"

    def __init__(self, layout: BlockLayout, entries: np.ndarray):
        self.layout = layout
        super().__init__(entries)

    @classmethod
    def identity(cls, layout: BlockLayout, scale: float = 1.0) -> "BorderedBlockDiagonalScale":
        rows, cols = _bordered_positions(layout)
        return cls(layout, np.where(rows == cols, float(scale), 0.0))

    @classmethod
    def from_blocks(cls, layout: BlockLayout, c_zz: np.ndarray, borders: Sequence[np.ndarray],
                    local_blocks: Sequence[np.ndarray]) -> "BorderedBlockDiagonalScale":
        """Assemble from a dense C_zz, N border blocks and N dense local blocks."""
        d_z, d_y, n_blocks = layout.d_z, layout.d_y, layout.n_blocks
        c_zz = np.asarray(c_zz, dtype=float).reshape(d_z, d_z)
        borders = np.asarray(borders, dtype=float).reshape(n_blocks, d_y, d_z)
        local_blocks = np.asarray(local_blocks, dtype=float).reshape(n_blocks, d_y, d_y)
        zz_rows, zz_cols = np.tril_indices(d_z)
        local_rows, local_cols = np.tril_indices(d_y)
        per_block = np.concatenate([
            borders.reshape(n_blocks, d_y * d_z),
            local_blocks[:, local_rows, local_cols],
        ], axis=1)
        return cls(layout, np.concatenate([c_zz[zz_rows, zz_cols], per_block.ravel()]))

    @classmethod
    def from_dense(cls, layout: BlockLayout, dense: np.ndarray,
                   atol: float = 1e-10) -> "BorderedBlockDiagonalScale":
        """Gather the pattern entries of a dense factor; off-pattern mass must vanish."""
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (layout.dim, layout.dim):
            raise InvalidArgumentError(f"expected a {layout.dim}x{layout.dim} matrix, got {dense.shape}")
        rows, cols = _bordered_positions(layout)
        residual = dense.copy()
        residual[rows, cols] = 0.0
        if np.max(np.abs(residual), initial=0.0) > atol:
            raise InvalidArgumentError("dense matrix has non-zeros outside the bordered block-diagonal pattern")
        return cls(layout, dense[rows, cols])

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def positions(self) -> Tuple[np.ndarray, np.ndarray]:
        return _bordered_positions(self.layout)

    def with_entries(self, entries: np.ndarray) -> "BorderedBlockDiagonalScale":
        return BorderedBlockDiagonalScale(self.layout, entries)

    def _layout_key(self) -> tuple:
        return (self.layout,)

    def _layout_fields(self) -> List[int]:
        return [self.layout.d_z, self.layout.d_y, self.layout.n_blocks]

    def blocks(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Dense views of the three block families.

        Returns:
            (C_zz of shape (d_z, d_z), borders of shape (N, d_y, d_z),
            local blocks of shape (N, d_y, d_y))
        """
        d_z, d_y, n_blocks = self.layout.d_z, self.layout.d_y, self.layout.n_blocks
        n_zz = d_z * (d_z + 1) // 2
        zz_rows, zz_cols = np.tril_indices(d_z)
        c_zz = np.zeros((d_z, d_z))
        c_zz[zz_rows, zz_cols] = self.entries[:n_zz]

        per_block = self.entries[n_zz:].reshape(n_blocks, -1)
        borders = per_block[:, :d_y * d_z].reshape(n_blocks, d_y, d_z)
        local_rows, local_cols = np.tril_indices(d_y)
        local_blocks = np.zeros((n_blocks, d_y, d_y))
        local_blocks[:, local_rows, local_cols] = per_block[:, d_y * d_z:]
        return c_zz, borders, local_blocks

    def _matvec_batch(self, u: np.ndarray) -> np.ndarray:
        d_z, d_y, n_blocks = self.layout.d_z, self.layout.d_y, self.layout.n_blocks
        c_zz, borders, local_blocks = self.blocks()
        u_z = u[:, :d_z]
        u_y = u[:, d_z:].reshape(-1, n_blocks, d_y)
        out_z = u_z @ c_zz.T
        out_y = (np.einsum("nij,mj->mni", borders, u_z)
                 + np.einsum("nij,mnj->mni", local_blocks, u_y))
        return np.concatenate([out_z, out_y.reshape(u.shape[0], -1)], axis=1)

    def _outer_batch(self, g: np.ndarray, u: np.ndarray) -> np.ndarray:
        d_z, d_y, n_blocks = self.layout.d_z, self.layout.d_y, self.layout.n_blocks
        g_z, u_z = g[:, :d_z], u[:, :d_z]
        g_y = g[:, d_z:].reshape(-1, n_blocks, d_y)
        u_y = u[:, d_z:].reshape(-1, n_blocks, d_y)
        zz_rows, zz_cols = np.tril_indices(d_z)
        local_rows, local_cols = np.tril_indices(d_y)
        zz = (g_z.T @ u_z)[zz_rows, zz_cols]
        borders = np.einsum("mni,mj->nij", g_y, u_z).reshape(n_blocks, d_y * d_z)
        local_blocks = np.einsum("mni,mnj->nij", g_y, u_y)[:, local_rows, local_cols]
        return np.concatenate([zz, np.concatenate([borders, local_blocks], axis=1).ravel()])


def scale_from_csv_row(row: str) -> ScaleMatrix:
    """Inverse of :meth:`ScaleMatrix.to_csv_row`."""
    fields = [f.strip() for f in row.strip().split(",")]
    variant = fields[0]
    try:
        if variant == DiagonalScale.variant:
            dim = int(fields[1])
            if len(fields) - 2 != dim:
                raise ValueError(f"expected {dim} entries, got {len(fields) - 2}")
            return DiagonalScale(np.array(fields[2:], dtype=float))
        if variant == DenseLowerTriangularScale.variant:
            dim = int(fields[1])
            return DenseLowerTriangularScale(dim, np.array(fields[2:], dtype=float))
        if variant == BorderedBlockDiagonalScale.variant:
            layout = BlockLayout(int(fields[1]), int(fields[2]), int(fields[3]))
            return BorderedBlockDiagonalScale(layout, np.array(fields[4:], dtype=float))
    except (IndexError, ValueError) as e:
        raise InvalidArgumentError(f"malformed scale-matrix row: {e}") from e
    raise InvalidArgumentError(f"unknown scale-matrix variant '{variant}'")


@dataclass
class SparsityDescriptor:
    """
    Column indicators of the per-component row blocks of a scale matrix.

    ``delta[n, j]`` is True when column j of ``C_n`` (the rows of C used by
    component n) holds a stored, potentially non-zero entry.
    """
    delta: np.ndarray
    index_sets: List[np.ndarray] = field(repr=False)

    @classmethod
    def from_structure(cls, scale: ScaleMatrix, index_sets: Sequence[np.ndarray]) -> "SparsityDescriptor":
        """
        Derive the indicators from a scale pattern and component index sets.

        Args:
            scale: Scale matrix whose storage pattern is used
            index_sets: Coordinates used by each component

        Returns:
            SparsityDescriptor with one indicator row per component
        """
        dim = scale.dim
        rows, cols = scale.positions
        pattern = np.zeros((dim, dim), dtype=bool)
        pattern[rows, cols] = True
        index_sets = [np.asarray(idx, dtype=int) for idx in index_sets]
        delta = np.zeros((len(index_sets), dim), dtype=bool)
        for n, idx in enumerate(index_sets):
            if idx.size and (idx.min() < 0 or idx.max() >= dim):
                raise InvalidArgumentError(f"component {n} index set exceeds dimension {dim}")
            delta[n] = pattern[idx].any(axis=0)
        logger.debug(f"Sparsity descriptor for {scale.variant}: {len(index_sets)} components, d={dim}")
        return cls(delta=delta, index_sets=index_sets)

    @property
    def num_components(self) -> int:
        return self.delta.shape[0]

    def row_mask(self, n: int) -> np.ndarray:
        if not 0 <= n < self.num_components:
            raise InvalidArgumentError(f"component index {n} out of range [0, {self.num_components})")
        mask = np.zeros(self.delta.shape[1], dtype=bool)
        mask[self.index_sets[n]] = True
        return mask

    def effective_dimensionality(self) -> int:
        """d* = max over components of the number of marked columns."""
        return int(self.delta.sum(axis=1).max())
