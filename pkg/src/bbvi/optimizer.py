"""
Optimization loops for BBVI.

Proximal SGD steps on the energy gradient and absorbs the entropy through
the closed-form proximal operator on the scale diagonal. Plain SGD and Adam
step on the full negative-ELBO gradient without any projection; a run that
leaves the domain is recorded as diverged rather than raised.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DomainViolationError, InvalidArgumentError
from .gradient_estimator import GradientEstimate, estimate_energy_gradient
from .logger import get_logger
from .variational_family import (
    BaseDistribution,
    VariationalParams,
    elbo_estimate,
    get_base_distribution,
    param_distance_sq,
)


logger = get_logger("optimizer")

PROXIMAL_SGD = "proximal_sgd"
SGD = "sgd"
ADAM = "adam"
METHODS = (PROXIMAL_SGD, SGD, ADAM)

STOP_COMPLETED = "completed"
STOP_HIT = "hit"
STOP_DIVERGED = "diverged"
STOP_UNREACHABLE = "unreachable"


@dataclass
class OptimizerConfig:
    """
    Settings of one optimization run.

    Attributes:
        method: ``proximal_sgd``, ``sgd`` or ``adam``
        stepsize: Fixed stepsize gamma
        num_samples: Monte Carlo samples per gradient (M)
        max_iters: Number of iterations T_max
        eval_every: ELBO cadence k (iterations)
        eval_samples: Monte Carlo samples per ELBO estimate
        record_elbo: Whether ELBO estimates are recorded at all
        base: Base distribution name
        divergence_factor: A run whose distance exceeds this multiple of
            max(r_0, 1) is declared diverged
    """
    method: str = PROXIMAL_SGD
    stepsize: float = 1e-3
    num_samples: int = 8
    max_iters: int = 1000
    eval_every: int = 100
    eval_samples: int = 1024
    record_elbo: bool = False
    base: str = "gaussian"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    divergence_factor: float = 1e8

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method '{self.method}', expected one of {METHODS}")
        if not self.stepsize > 0:
            raise InvalidArgumentError(f"stepsize must be positive, got {self.stepsize}")
        if self.num_samples < 1 or self.eval_samples < 1:
            raise InvalidArgumentError("sample counts must be at least 1")
        if self.max_iters < 0:
            raise InvalidArgumentError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.eval_every < 1:
            raise InvalidArgumentError(f"eval_every must be at least 1, got {self.eval_every}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise InvalidArgumentError("Adam betas must lie in [0, 1)")

    @property
    def base_distribution(self) -> BaseDistribution:
        return get_base_distribution(self.base)


@dataclass
class OptimizerState:
    """Adam moment estimates; unused by the SGD variants."""
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None
    iteration: int = 0


@dataclass
class RunTrace:
    """Per-iteration record of one seeded run."""
    distances: List[float] = field(default_factory=list)
    elbo_iterations: List[int] = field(default_factory=list)
    elbo_values: List[float] = field(default_factory=list)
    diverged: bool = False
    iterations: int = 0
    stop_reason: str = STOP_COMPLETED
    final_params: Optional[VariationalParams] = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        """One row per recorded iteration: ``iteration,r,elbo`` (elbo blank off-cadence)."""
        length = max(len(self.distances), self.iterations + 1)
        frame = pd.DataFrame({"iteration": np.arange(length)})
        r = np.full(length, np.nan)
        r[:len(self.distances)] = self.distances
        elbo = np.full(length, np.nan)
        elbo[np.asarray(self.elbo_iterations, dtype=int)] = self.elbo_values
        frame["r"] = r
        frame["elbo"] = elbo
        return frame

    def write_csv(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, na_rep="")
        logger.info(f"Saved trace: {path}")
        return path


def full_elbo_gradient(params: VariationalParams, target, num_samples: int,
                       rng: np.random.Generator,
                       base: Optional[BaseDistribution] = None) -> GradientEstimate:
    """
    Energy gradient estimate plus the exact gradient of -log det C.

    Raises:
        DomainViolationError: if some C_ii <= 0
    """
    params.C.check_domain()
    kwargs = {} if base is None else {"base": base}
    estimate = estimate_energy_gradient(params, target, num_samples, rng, **kwargs)
    diag_idx = params.C.diagonal_positions
    estimate.grad_C.entries[diag_idx] -= 1.0 / params.C.entries[diag_idx]
    return estimate


def step(state: OptimizerState, params: VariationalParams, gradient: GradientEstimate,
         config: OptimizerConfig) -> VariationalParams:
    """
    Apply one update of the configured method.

    Args:
        state: Optimizer state (Adam moments), updated in place
        params: Current parameters
        gradient: Energy gradient for proximal SGD, full gradient otherwise
        config: Optimizer settings

    Returns:
        Updated parameters
    """
    vector = params.to_vector()
    g = gradient.to_vector()
    if g.shape != vector.shape:
        raise InvalidArgumentError(f"gradient has {g.size} entries, parameters have {vector.size}")
    gamma = config.stepsize

    if config.method == PROXIMAL_SGD:
        moved = params.with_vector(vector - gamma * g)
        return VariationalParams(moved.m, moved.C.prox_diagonal(gamma))
    if config.method == SGD:
        return params.with_vector(vector - gamma * g)

    if state.first_moment is None:
        state.first_moment = np.zeros_like(vector)
        state.second_moment = np.zeros_like(vector)
    state.iteration += 1
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    state.first_moment = beta1 * state.first_moment + (1.0 - beta1) * g
    state.second_moment = beta2 * state.second_moment + (1.0 - beta2) * g * g
    first_hat = state.first_moment / (1.0 - beta1 ** state.iteration)
    second_hat = state.second_moment / (1.0 - beta2 ** state.iteration)
    return params.with_vector(vector - gamma * first_hat / (np.sqrt(second_hat) + config.adam_eps))


def _gradient(params: VariationalParams, target, config: OptimizerConfig,
              rng: np.random.Generator) -> GradientEstimate:
    base = config.base_distribution
    if config.method == PROXIMAL_SGD:
        return estimate_energy_gradient(params, target, config.num_samples, rng, base)
    return full_elbo_gradient(params, target, config.num_samples, rng, base)


class _Runner:
    """Mutable state of a single run, shared by :func:`run` and :func:`run_replicated`."""

    def __init__(self, params0: VariationalParams, target, config: OptimizerConfig,
                 reference: Optional[VariationalParams], rng: np.random.Generator):
        self.params = params0.copy()
        self.target = target
        self.config = config
        self.reference = reference
        self.rng = rng
        self.state = OptimizerState()
        self.trace = RunTrace()
        self.r0 = None
        if reference is not None:
            self.r0 = param_distance_sq(self.params, reference)
            self.trace.distances.append(self.r0)
        self._record_elbo(0)

    @property
    def active(self) -> bool:
        return not self.trace.diverged

    def _diverge(self, t: int, reason: str) -> None:
        self.trace.diverged = True
        self.trace.stop_reason = STOP_DIVERGED
        logger.debug(f"Run diverged at iteration {t} (stepsize {self.config.stepsize:g}): {reason}")

    def _record_elbo(self, t: int) -> None:
        if not self.config.record_elbo or t % self.config.eval_every != 0:
            return
        try:
            value = elbo_estimate(self.params, self.target, self.config.eval_samples, self.rng,
                                  self.config.base_distribution)
        except DomainViolationError as e:
            self._diverge(t, str(e))
            return
        self.trace.elbo_iterations.append(t)
        self.trace.elbo_values.append(value)

    def advance(self, t: int) -> None:
        """Perform iteration t (1-based) and record its outcome."""
        try:
            gradient = _gradient(self.params, self.target, self.config, self.rng)
        except DomainViolationError as e:
            self._diverge(t, str(e))
            return
        params = step(self.state, self.params, gradient, self.config)
        self.trace.iterations = t
        if not (np.all(np.isfinite(params.m)) and np.all(np.isfinite(params.C.entries))):
            self._diverge(t, "non-finite iterate")
            return
        self.params = params
        if self.reference is not None:
            r = param_distance_sq(params, self.reference)
            self.trace.distances.append(r)
            if r > self.config.divergence_factor * max(self.r0, 1.0):
                self._diverge(t, f"distance {r:.3e} exceeds the divergence threshold")
                return
        self._record_elbo(t)

    def finish(self) -> RunTrace:
        self.trace.final_params = self.params
        return self.trace


def run(params0: VariationalParams, target, config: OptimizerConfig,
        reference: Optional[VariationalParams] = None,
        rng: Optional[np.random.Generator] = None) -> RunTrace:
    """
    Run one optimization for ``config.max_iters`` iterations or until divergence.

    Args:
        params0: Initial parameters
        target: Finite-sum target
        config: Optimizer settings
        reference: Optimum lambda*; when given, r_t is recorded every iteration
        rng: Random stream (a fresh default stream when omitted)

    Returns:
        RunTrace of the run
    """
    rng = np.random.default_rng() if rng is None else rng
    runner = _Runner(params0, target, config, reference, rng)
    for t in range(1, config.max_iters + 1):
        if not runner.active:
            break
        runner.advance(t)
    trace = runner.finish()
    if trace.diverged:
        logger.warning(f"{config.method} run with stepsize {config.stepsize:g} diverged "
                       f"after {trace.iterations} iterations")
    return trace


def average_traces(traces: Sequence[RunTrace]) -> np.ndarray:
    """
    Replication-averaged distance sequence.

    A diverged replication contributes +inf from its last record onward, so
    the average of a sweep cell with any diverged replication never hits.
    """
    if not traces:
        raise InvalidArgumentError("need at least one trace to average")
    length = max(len(trace.distances) for trace in traces)
    if length == 0:
        raise InvalidArgumentError("traces carry no distance records")
    stacked = np.empty((len(traces), length))
    for row, trace in enumerate(traces):
        values = np.asarray(trace.distances, dtype=float)
        stacked[row, :values.size] = values
        stacked[row, values.size:] = np.inf if trace.diverged else values[-1]
        if trace.diverged and values.size:
            stacked[row, values.size - 1:] = np.inf
    return stacked.mean(axis=0)


def first_hit_time(mean_trace: Sequence[float], eps: float) -> Optional[int]:
    """
    Smallest T with ``r_{T-1} > eps`` and ``r_T <= eps``.

    Returns:
        The hit time, or None when the trace never crosses eps from above
    """
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    trace = np.asarray(mean_trace, dtype=float)
    if trace.size == 0:
        raise InvalidArgumentError("cannot search an empty trace")
    crossings = np.flatnonzero((trace[:-1] > eps) & (trace[1:] <= eps))
    return int(crossings[0] + 1) if crossings.size else None


def _unreachable(mean_trace: List[float], t: int, eps: float, max_iters: int, window: int) -> bool:
    """
    Whether even an optimistic geometric extrapolation misses eps by T_max.

    Uses the contraction rate over the last ``window`` iterations; only
    applied while the averaged distance is well above eps.
    """
    current = mean_trace[t]
    if not np.isfinite(current) or current <= 10.0 * eps or t < window:
        return False
    previous = mean_trace[t - window]
    if not np.isfinite(previous) or previous <= 0:
        return False
    rate = (current / previous) ** (1.0 / window)
    if rate >= 1.0:
        return True
    needed = np.log(eps / current) / np.log(rate)
    return t + needed > max_iters


def run_replicated(params0: VariationalParams, target, config: OptimizerConfig,
                   reference: VariationalParams, rngs: Sequence[np.random.Generator],
                   eps: Optional[float] = None, stop_when_unreachable: bool = True,
                   check_every: int = 200) -> List[RunTrace]:
    """
    Step R replications in lockstep on the averaged distance.

    Stops at the first iteration where the average crosses ``eps`` (when
    given), when every replication has diverged, or when the averaged
    distance cannot reach ``eps`` within ``config.max_iters``.

    Args:
        params0: Shared initial parameters
        target: Finite-sum target
        config: Optimizer settings
        reference: Optimum lambda*
        rngs: One random stream per replication
        eps: Accuracy threshold for early stopping
        stop_when_unreachable: Enable the extrapolation cut
        check_every: Iterations between extrapolation checks

    Returns:
        One RunTrace per replication; diverged replications stop recording early
    """
    runners = [_Runner(params0, target, config, reference, rng) for rng in rngs]
    mean_trace = [float(np.mean([runner.r0 for runner in runners]))]
    reason = STOP_COMPLETED
    for t in range(1, config.max_iters + 1):
        for runner in runners:
            if runner.active:
                runner.advance(t)
        if all(not runner.active for runner in runners):
            reason = STOP_DIVERGED
            break
        if any(not runner.active for runner in runners):
            mean_trace.append(np.inf)
        else:
            mean_trace.append(float(np.mean([runner.trace.distances[-1] for runner in runners])))
        if eps is None:
            continue
        if mean_trace[t - 1] > eps >= mean_trace[t]:
            reason = STOP_HIT
            break
        if stop_when_unreachable and t % check_every == 0 and \
                _unreachable(mean_trace, t, eps, config.max_iters, check_every):
            reason = STOP_UNREACHABLE
            break
        if np.isinf(mean_trace[t]):
            # a diverged replication makes the average infinite for good
            reason = STOP_DIVERGED
            break

    traces = [runner.finish() for runner in runners]
    for trace in traces:
        if not trace.diverged:
            trace.stop_reason = reason
    logger.debug(f"Replicated run (stepsize {config.stepsize:g}) stopped after "
                 f"{len(mean_trace) - 1} iterations: {reason}")
    return traces
