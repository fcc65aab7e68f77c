"""
Configuration management for BBVI experiments.
Handles runtime settings, paths, and experiment configuration files.
"""
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from .errors import ConfigurationError
from .optimizer import METHODS, PROXIMAL_SGD
from .targets import GLOBAL_SHARED, GLOBAL_TERMS
from .variational_family import BASE_DISTRIBUTIONS, FAMILIES, INIT_REALISTIC, INIT_STANDARD


EXPERIMENT_KINDS = ("sweep", "scaling", "variance", "nonconvex", "run")
TARGET_KINDS = ("synthetic", "quadratic", "correlated")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(name, f"expected an integer, got '{raw}'") from None


class Config:
    """Runtime settings of the experiment harness."""

    def __init__(self):
        """Initialize configuration from the environment (and an optional .env file)."""
        load_dotenv()

        # Base directories
        self.BASE_DIR = Path(__file__).parent.parent.parent
        self.OUTPUT_DIR = Path(os.getenv("BBVI_OUTPUT_DIR", str(self.BASE_DIR / "outputs")))
        self.LOGS_DIR = self.BASE_DIR / "logs"

        # Execution settings
        self.MAX_WORKERS = _env_int("BBVI_MAX_WORKERS", 1)
        self.DEFAULT_SEED = _env_int("BBVI_SEED", 0)

        # Logging settings
        self.LOG_LEVEL = os.getenv("BBVI_LOG_LEVEL", "INFO")
        self.LOG_FILE = self.LOGS_DIR / "experiments.log"

    def ensure_directories(self):
        """Create the output and log directories if they don't exist."""
        for directory in (self.OUTPUT_DIR, self.LOGS_DIR):
            directory.mkdir(parents=True, exist_ok=True)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base_dir": str(self.BASE_DIR),
            "output_dir": str(self.OUTPUT_DIR),
            "max_workers": self.MAX_WORKERS,
            "default_seed": self.DEFAULT_SEED,
            "log_level": self.LOG_LEVEL,
        }


@dataclass
class ExperimentConfig:
    """
    One experiment: what to run, on which target, with which families.

    Field names mirror the dotted keys of the configuration file
    (``stepsize.low`` is ``stepsize_low``); see ``CONFIG_KEYS``.
    """
    kind: str = "sweep"

    # target
    target_kind: str = "synthetic"
    d_z: int = 5
    d_y: int = 3
    n_values: List[int] = field(default_factory=lambda: [100])
    target_mean: float = 5.0
    target_variance: float = 0.1
    target_global_term: str = GLOBAL_SHARED
    observations: Optional[Path] = None

    # families and optimizer
    families: List[str] = field(default_factory=lambda: list(FAMILIES))
    method: str = PROXIMAL_SGD
    init: str = INIT_STANDARD
    base: str = "gaussian"
    stepsize: float = 1e-3
    stepsize_count: int = 50
    stepsize_low: float = 1e-6
    stepsize_high: float = 1.0
    eps: float = 1.0
    num_samples: int = 8
    max_iters: int = 60000
    replications: int = 3
    eval_every: int = 100
    eval_samples: int = 1024
    stop_when_unreachable: bool = True

    # variance experiment
    variance_samples: List[int] = field(default_factory=lambda: [8])
    variance_outer: int = 2000
    variance_points: int = 10

    # nonconvex grid
    nonconvex_grid: int = 20
    nonconvex_x_low: float = -2.0
    nonconvex_x_high: float = 2.0
    nonconvex_y_low: float = -1.5
    nonconvex_y_high: float = 1.5
    nonconvex_z: float = 1.0

    # execution
    seed: int = 0
    workers: int = 1
    output_dir: Path = Path("outputs")

    def validate(self) -> "ExperimentConfig":
        """
        Check ranges and choices.

        Raises:
            ConfigurationError: naming the first offending key
        """
        _choice("experiment", self.kind, EXPERIMENT_KINDS)
        _choice("target.kind", self.target_kind, TARGET_KINDS)
        _choice("target.global_term", self.target_global_term, GLOBAL_TERMS)
        _choice("method", self.method, METHODS)
        _choice("init", self.init, (INIT_STANDARD, INIT_REALISTIC))
        _choice("base", self.base, tuple(BASE_DISTRIBUTIONS))
        for family in self.families:
            _choice("families", family, FAMILIES)
        if not self.families:
            raise ConfigurationError("families", "at least one family is required")

        if self.d_z < 0:
            raise ConfigurationError("target.d_z", f"must be non-negative, got {self.d_z}")
        if self.d_y < 1:
            raise ConfigurationError("target.d_y", f"must be at least 1, got {self.d_y}")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigurationError("target.n", f"needs positive datapoint counts, got {self.n_values}")
        if self.target_variance <= 0:
            raise ConfigurationError("target.variance", f"must be positive, got {self.target_variance}")

        if self.stepsize_low <= 0:
            raise ConfigurationError("stepsize.low", f"must be positive, got {self.stepsize_low}")
        if self.stepsize_high <= 0:
            raise ConfigurationError("stepsize.high", f"must be positive, got {self.stepsize_high}")
        if self.stepsize_low >= self.stepsize_high:
            raise ConfigurationError(
                "stepsize.low", f"must be below stepsize.high ({self.stepsize_low} >= {self.stepsize_high})"
            )
        if self.stepsize_count < 1:
            raise ConfigurationError("stepsize.count", f"must be at least 1, got {self.stepsize_count}")
        if self.stepsize <= 0:
            raise ConfigurationError("stepsize.value", f"must be positive, got {self.stepsize}")

        if self.eps <= 0:
            raise ConfigurationError("eps", f"must be positive, got {self.eps}")
        for key, value in (("samples", self.num_samples), ("reps", self.replications),
                           ("eval.every", self.eval_every), ("eval.samples", self.eval_samples),
                           ("workers", self.workers), ("nonconvex.grid", self.nonconvex_grid),
                           ("variance.points", self.variance_points)):
            if value < 1:
                raise ConfigurationError(key, f"must be at least 1, got {value}")
        if self.max_iters < 1:
            raise ConfigurationError("tmax", f"must be at least 1, got {self.max_iters}")
        if self.variance_outer < 2:
            raise ConfigurationError("variance.outer", f"must be at least 2, got {self.variance_outer}")
        if not self.variance_samples or any(m < 1 for m in self.variance_samples):
            raise ConfigurationError("variance.samples", f"needs positive sample counts, got {self.variance_samples}")
        if self.nonconvex_x_low >= self.nonconvex_x_high:
            raise ConfigurationError("nonconvex.x_low", "must be below nonconvex.x_high")
        if self.nonconvex_y_low >= self.nonconvex_y_high:
            raise ConfigurationError("nonconvex.y_low", "must be below nonconvex.y_high")
        return self

    def stepsize_grid(self) -> np.ndarray:
        """Log-spaced stepsizes over [stepsize.low, stepsize.high]."""
        return np.logspace(np.log10(self.stepsize_low), np.log10(self.stepsize_high), self.stepsize_count)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["output_dir"] = str(self.output_dir)
        values["observations"] = None if self.observations is None else str(self.observations)
        return values


def _choice(key: str, value: str, allowed: Tuple[str, ...]) -> None:
    if value not in allowed:
        raise ConfigurationError(key, f"'{value}' is not one of {list(allowed)}")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _list_of(parse: Callable[[str], Any]) -> Callable[[Any], List[Any]]:
    def parse_list(value: Any) -> List[Any]:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            return [parse(item) for item in items]
        return [parse(item) if isinstance(item, str) else item for item in value]
    return parse_list


LIST_FIELDS = ("n_values", "families", "variance_samples")

# dotted configuration key -> (field name, parser)
CONFIG_KEYS: Dict[str, Tuple[str, Callable[[Any], Any]]] = {
    "experiment": ("kind", str),
    "target.kind": ("target_kind", str),
    "target.d_z": ("d_z", int),
    "target.d_y": ("d_y", int),
    "target.n": ("n_values", _list_of(int)),
    "target.mean": ("target_mean", float),
    "target.variance": ("target_variance", float),
    "target.global_term": ("target_global_term", str),
    "target.observations": ("observations", Path),
    "families": ("families", _list_of(str)),
    "method": ("method", str),
    "init": ("init", str),
    "base": ("base", str),
    "stepsize.value": ("stepsize", float),
    "stepsize.count": ("stepsize_count", int),
    "stepsize.low": ("stepsize_low", float),
    "stepsize.high": ("stepsize_high", float),
    "eps": ("eps", float),
    "samples": ("num_samples", int),
    "tmax": ("max_iters", int),
    "reps": ("replications", int),
    "eval.every": ("eval_every", int),
    "eval.samples": ("eval_samples", int),
    "stop_when_unreachable": ("stop_when_unreachable", _parse_bool),
    "variance.samples": ("variance_samples", _list_of(int)),
    "variance.outer": ("variance_outer", int),
    "variance.points": ("variance_points", int),
    "nonconvex.grid": ("nonconvex_grid", int),
    "nonconvex.x_low": ("nonconvex_x_low", float),
    "nonconvex.x_high": ("nonconvex_x_high", float),
    "nonconvex.y_low": ("nonconvex_y_low", float),
    "nonconvex.y_high": ("nonconvex_y_high", float),
    "nonconvex.z": ("nonconvex_z", float),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "output": ("output_dir", Path),
}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment.

    Returns:
        Raw string values keyed by dotted key
    """
    values: Dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{line_no}", f"expected 'key = value', got '{raw_line.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{line_no}", "missing key")
        values[key] = value
    return values


def _apply(config: ExperimentConfig, values: Mapping[str, Any]) -> ExperimentConfig:
    updates: Dict[str, Any] = {}
    for key, value in values.items():
        if value is None:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigurationError(key, "unknown configuration key")
        name, parse = CONFIG_KEYS[key]
        try:
            updates[name] = parse(value) if isinstance(value, str) or name in LIST_FIELDS else value
        except (TypeError, ValueError) as e:
            raise ConfigurationError(key, f"cannot parse '{value}': {e}") from None
    return replace(config, **updates)


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None,
                runtime: Optional[Config] = None) -> ExperimentConfig:
    """
    Build a validated experiment configuration.

    Precedence is defaults, then the runtime environment (seed, workers,
    output directory), then the file, then ``overrides``.

    Args:
        path: Optional configuration file
        overrides: Dotted keys set from command-line flags; None values are skipped
        runtime: Runtime settings supplying environment defaults

    Returns:
        ExperimentConfig

    Raises:
        ConfigurationError: naming the offending key
    """
    config = ExperimentConfig()
    if runtime is not None:
        config = replace(config, seed=runtime.DEFAULT_SEED, workers=max(1, runtime.MAX_WORKERS),
                         output_dir=runtime.OUTPUT_DIR)
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError("config", f"cannot read {path}: {e.strerror or e}") from None
        config = _apply(config, parse_config_text(text, source=str(path)))
    if overrides:
        config = _apply(config, overrides)
    return config.validate()

