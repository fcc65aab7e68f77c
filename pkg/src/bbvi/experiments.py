"""
Experiment orchestrator for BBVI.
Runs stepsize sweeps, scaling studies, variance audits, the non-convexity
grid and single traced runs, with seeded cells executed in parallel.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import Config, ExperimentConfig
from .diagnostics import nonconvexity_report, variance_report
from .errors import InvalidArgumentError
from .logger import get_logger, setup_logging
from .optimizer import OptimizerConfig, average_traces, first_hit_time, run, run_replicated
from .scale_matrix import BlockLayout
from .targets import (
    CorrelatedHierarchicalGaussian,
    GLOBAL_SHARED,
    FiniteSumQuadratic,
    QuadraticTarget,
    SyntheticIsotropicHierarchical,
    load_observations,
)
from .variational_family import VariationalParams, get_base_distribution, initial_params


logger = get_logger("experiments")

SWEEP_COLUMNS = ["family", "n", "stepsize", "T_hit", "hit"]
SCALING_COLUMNS = ["family", "n", "best_stepsize", "T_best"]
VARIANCE_COLUMNS = ["family", "n", "M", "d_star", "k_phi", "empirical", "stderr", "bound"]
NONCONVEX_COLUMNS = ["x", "y", "z", "energy", "det", "min_eig"]


@dataclass(frozen=True)
class TargetSpec:
    """Hashable description of a target, so worker processes can rebuild it."""
    kind: str
    n: int
    d_z: int
    d_y: int
    mean: float = 5.0
    variance: float = 0.1
    global_term: str = GLOBAL_SHARED
    seed: int = 0
    observations: Optional[str] = None


@lru_cache(maxsize=8)
def build_target(spec: TargetSpec) -> QuadraticTarget:
    """
    Instantiate the target described by ``spec``.

    Args:
        spec: Target description

    Returns:
        The target; cached per process
    """
    if spec.kind == "synthetic":
        return SyntheticIsotropicHierarchical(spec.n, spec.d_z, spec.d_y, spec.mean, spec.variance, spec.global_term)
    if spec.kind == "quadratic":
        layout = BlockLayout(spec.d_z, spec.d_y, spec.n)
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(spec.n,)))
        return FiniteSumQuadratic.hierarchical(layout, rng)
    if spec.kind == "correlated":
        if spec.observations is None:
            return CorrelatedHierarchicalGaussian.simulate(spec.n, spec.d_z, spec.d_y, seed=spec.seed)
        observations = load_observations(Path(spec.observations))
        if observations.shape[0] < spec.n or observations.shape[1] != spec.d_y:
            raise InvalidArgumentError(
                f"{spec.observations} holds {observations.shape} observations, need ({spec.n}+, {spec.d_y})"
            )
        return CorrelatedHierarchicalGaussian(observations[:spec.n], spec.d_z)
    raise InvalidArgumentError(f"unknown target kind '{spec.kind}'")


@lru_cache(maxsize=16)
def build_problem(spec: TargetSpec, family: str, init: str) -> Tuple[QuadraticTarget, VariationalParams, VariationalParams]:
    """Target, initial parameters and the family's optimum lambda*."""
    target = build_target(spec)
    params0 = initial_params(family, layout=target.layout, init=init)
    return target, params0, target.optimal_params(family)


def cell_rngs(seed: int, cell_index: int, replications: int) -> List[np.random.Generator]:
    """Independent streams keyed by (base seed, cell index, replication index)."""
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell_index, r)))
        for r in range(replications)
    ]


@dataclass(frozen=True)
class SweepCell:
    index: int
    family: str
    target: TargetSpec
    optimizer: OptimizerConfig
    eps: float
    replications: int
    seed: int
    init: str
    stop_when_unreachable: bool = True


def run_sweep_cell(cell: SweepCell) -> Dict[str, object]:
    """
    Iterations-to-eps of one (family, n, stepsize) cell.

    Failures are logged and reported as unhit rows.
    """
    row = {
        "family": cell.family,
        "n": cell.target.n,
        "stepsize": cell.optimizer.stepsize,
        "T_hit": cell.optimizer.max_iters,
        "hit": False,
    }
    try:
        target, params0, reference = build_problem(cell.target, cell.family, cell.init)
        traces = run_replicated(
            params0, target, cell.optimizer, reference,
            cell_rngs(cell.seed, cell.index, cell.replications),
            eps=cell.eps, stop_when_unreachable=cell.stop_when_unreachable,
        )
        hit = first_hit_time(average_traces(traces), cell.eps)
    except Exception as e:
        logger.warning(f"Cell {cell.index} ({cell.family}, n={cell.target.n}, "
                       f"stepsize={cell.optimizer.stepsize:g}) failed: {e}")
        return row
    if hit is not None:
        row["T_hit"] = hit
        row["hit"] = True
    return row


@dataclass(frozen=True)
class VarianceCell:
    index: int
    family: str
    target: TargetSpec
    num_samples: int
    num_outer: int
    point: int
    seed: int
    base: str


def component_center(target: QuadraticTarget) -> np.ndarray:
    """Average of the component stationary points, scattered into z-space."""
    total = np.zeros(target.dim)
    counts = np.zeros(target.dim)
    for idx, center in zip(target.structure.index_sets, target.stationary_points()):
        total[idx] += center
        counts[idx] += 1
    return total / np.maximum(counts, 1)


def random_feasible_params(target: QuadraticTarget, family: str, rng: np.random.Generator) -> VariationalParams:
    """A random point of the family's domain around the target's coordinates."""
    params = initial_params(family, layout=target.layout)
    entries = rng.normal(0.0, 0.2, params.C.num_params)
    entries[params.C.diagonal_positions] = rng.uniform(0.1, 1.5, params.dim)
    m = component_center(target) + rng.normal(0.0, 1.0, params.dim)
    return VariationalParams(m, params.C.with_entries(entries))


def run_variance_cell(cell: VarianceCell) -> Dict[str, object]:
    rng = np.random.default_rng(np.random.SeedSequence(cell.seed, spawn_key=(cell.index,)))
    target = build_target(cell.target)
    params = random_feasible_params(target, cell.family, rng)
    report = variance_report(params, target, cell.family, cell.num_samples, cell.num_outer, rng,
                             get_base_distribution(cell.base))
    return report.to_row()


@dataclass
class ResultSet:
    """Tables produced by one experiment, keyed by artifact name."""
    kind: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


class ExperimentRunner:
    """
    Orchestrates one experiment from a validated configuration.

    Supported kinds:
    1. sweep - iterations-to-eps over a stepsize grid per (family, n)
    2. scaling - the sweep plus the best stepsize per (family, n)
    3. variance - measured gradient variance against the analytic bound
    4. nonconvex - the non-convexity report over an (x, y) grid
    5. run - single traced runs per (family, n)
    """

    def __init__(self, config: ExperimentConfig, runtime: Optional[Config] = None):
        """
        Initialize the runner.

        Args:
            config: Validated experiment configuration
            runtime: Optional runtime settings, creates default if not provided
        """
        self.config = config
        self.runtime = runtime or Config()
        self.runtime.ensure_directories()

        self.logger = setup_logging(self.runtime.LOG_FILE, self.runtime.LOG_LEVEL)
        self.logger.info("=" * 80)
        self.logger.info(f"BBVI Experiment Initialized: {config.kind}")
        self.logger.info("=" * 80)
        self.logger.info(f"Configuration: {config.to_dict()}")
        self.logger.debug(f"Runtime: {self.runtime.to_dict()}")

    def run(self) -> ResultSet:
        """
        Run the configured experiment.

        Returns:
            ResultSet with one table per artifact
        """
        steps: Dict[str, Callable[[], ResultSet]] = {
            "sweep": self.run_sweep,
            "scaling": self.run_scaling,
            "variance": self.run_variance,
            "nonconvex": self.run_nonconvex,
            "run": self.run_single,
        }
        self.logger.info(f"Starting {self.config.kind} experiment")
        try:
            results = steps[self.config.kind]()
        except Exception as e:
            self.logger.error(f"Experiment execution failed: {str(e)}", exc_info=True)
            raise
        self.logger.info("=" * 80)
        self.logger.info("Experiment completed successfully")
        self.logger.info("=" * 80)
        return results

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def target_spec(self, n: int) -> TargetSpec:
        cfg = self.config
        return TargetSpec(
            kind=cfg.target_kind, n=n, d_z=cfg.d_z, d_y=cfg.d_y, mean=cfg.target_mean,
            variance=cfg.target_variance, global_term=cfg.target_global_term, seed=cfg.seed,
            observations=None if cfg.observations is None else str(cfg.observations),
        )

    def optimizer_config(self, stepsize: float, record_elbo: bool = False) -> OptimizerConfig:
        cfg = self.config
        return OptimizerConfig(
            method=cfg.method, stepsize=float(stepsize), num_samples=cfg.num_samples,
            max_iters=cfg.max_iters, eval_every=cfg.eval_every, eval_samples=cfg.eval_samples,
            record_elbo=record_elbo, base=cfg.base,
        )

    def _map(self, worker: Callable, cells: Sequence) -> List:
        """Apply ``worker`` to every cell; results keep the cell order."""
        workers = max(1, min(self.config.workers, len(cells)))
        if workers == 1:
            return [worker(cell) for cell in cells]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(worker, cells))

    # ------------------------------------------------------------------
    # experiments
    # ------------------------------------------------------------------
    def sweep_frame(self) -> pd.DataFrame:
        cfg = self.config
        grid = cfg.stepsize_grid()
        cells = []
        for family in cfg.families:
            for n in cfg.n_values:
                for stepsize in grid:
                    cells.append(SweepCell(
                        index=len(cells), family=family, target=self.target_spec(n),
                        optimizer=self.optimizer_config(stepsize), eps=cfg.eps,
                        replications=cfg.replications, seed=cfg.seed, init=cfg.init,
                        stop_when_unreachable=cfg.stop_when_unreachable,
                    ))
        self.logger.info(f"STEP 1: Stepsize sweep over {len(cells)} cells "
                         f"({len(cfg.families)} families, n={cfg.n_values}, {len(grid)} stepsizes)")
        rows = self._map(run_sweep_cell, cells)
        frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        frame["hit"] = frame["hit"].astype(bool)
        frame["T_hit"] = frame["T_hit"].astype(int)

        for (family, n), group in frame.groupby(["family", "n"], sort=True):
            hits = int(group["hit"].sum())
            if hits == 0:
                self.logger.warning(f"{family} n={n}: no stepsize reached eps={cfg.eps}")
            else:
                self.logger.info(f"{family} n={n}: {hits}/{len(group)} stepsizes reached eps")
        return frame

    def run_sweep(self) -> ResultSet:
        return ResultSet("sweep", {"sweep": self.sweep_frame()})

    def run_scaling(self) -> ResultSet:
        sweep = self.sweep_frame()
        self.logger.info("STEP 2: Best stepsize per family and n")
        scaling = best_stepsizes(sweep, self.config.max_iters)
        for row in scaling.itertuples(index=False):
            self.logger.info(f"{row.family} n={row.n}: T={row.T_best} at stepsize {row.best_stepsize:.3g}")
        return ResultSet("scaling", {"sweep": sweep, "scaling": scaling})

    def run_variance(self) -> ResultSet:
        cfg = self.config
        cells = []
        for family in cfg.families:
            for n in cfg.n_values:
                for num_samples in cfg.variance_samples:
                    for point in range(cfg.variance_points):
                        cells.append(VarianceCell(
                            index=len(cells), family=family, target=self.target_spec(n),
                            num_samples=num_samples, num_outer=cfg.variance_outer,
                            point=point, seed=cfg.seed, base=cfg.base,
                        ))
        self.logger.info(f"STEP 1: Gradient variance at {len(cells)} random points "
                         f"(S={cfg.variance_outer})")
        frame = pd.DataFrame(self._map(run_variance_cell, cells), columns=VARIANCE_COLUMNS)
        # empirical <= bound * (1 + 3 stderr / empirical), multiplied through by empirical
        emp, se, bound = frame["empirical"], frame["stderr"], frame["bound"]
        violations = int((emp * emp > bound * emp + 3.0 * se * bound).sum())
        if violations:
            self.logger.warning(f"{violations} points exceed the variance bound beyond 3 standard errors")
        return ResultSet("variance", {"variance": frame})

    def run_nonconvex(self) -> ResultSet:
        cfg = self.config
        self.logger.info(f"STEP 1: Non-convexity report on a {cfg.nonconvex_grid}x{cfg.nonconvex_grid} grid")
        rows = []
        for x in np.linspace(cfg.nonconvex_x_low, cfg.nonconvex_x_high, cfg.nonconvex_grid):
            for y in np.linspace(cfg.nonconvex_y_low, cfg.nonconvex_y_high, cfg.nonconvex_grid):
                report = nonconvexity_report(x, y, cfg.nonconvex_z)
                rows.append({"x": x, "y": y, "z": cfg.nonconvex_z, "energy": report.energy,
                             "det": report.det, "min_eig": report.min_eigenvalue})
        frame = pd.DataFrame(rows, columns=NONCONVEX_COLUMNS)
        self.logger.info(f"Negative curvature at {int((frame['min_eig'] < 0).sum())} of {len(frame)} grid points")
        return ResultSet("nonconvex", {"nonconvex": frame})

    def run_single(self) -> ResultSet:
        cfg = self.config
        results = ResultSet("run")
        index = 0
        for family in cfg.families:
            for n in cfg.n_values:
                self.logger.info(f"STEP {index + 1}: {cfg.method} run, {family}, n={n}, stepsize={cfg.stepsize:g}")
                target, params0, reference = build_problem(self.target_spec(n), family, cfg.init)
                rng = cell_rngs(cfg.seed, index, 1)[0]
                trace = run(params0, target, self.optimizer_config(cfg.stepsize, record_elbo=True), reference, rng)
                if trace.distances:
                    self.logger.info(f"{family} n={n}: r_0={trace.distances[0]:.4g}, "
                                     f"r_T={trace.distances[-1]:.4g}, diverged={trace.diverged}")
                results.tables[f"trace_{family}_n{n}"] = trace.to_frame()
                index += 1
        return results


def best_stepsizes(sweep: pd.DataFrame, max_iters: int) -> pd.DataFrame:
    """
    Lowest T_hit per (family, n); ties go to the smaller stepsize.

    Groups without any hit report ``T_best = max_iters`` and a NaN stepsize.
    """
    rows = []
    for (family, n), group in sweep.groupby(["family", "n"], sort=True):
        hits = group[group["hit"]].sort_values(["T_hit", "stepsize"])
        if hits.empty:
            rows.append({"family": family, "n": n, "best_stepsize": np.nan, "T_best": max_iters})
        else:
            best = hits.iloc[0]
            rows.append({"family": family, "n": n, "best_stepsize": best["stepsize"],
                         "T_best": int(best["T_hit"])})
    return pd.DataFrame(rows, columns=SCALING_COLUMNS)
