"""
CSV artifacts of experiment results.
"""
from pathlib import Path
from typing import Dict, List

import pandas as pd

from .errors import ResultsWriteError
from .experiments import NONCONVEX_COLUMNS, SCALING_COLUMNS, SWEEP_COLUMNS, VARIANCE_COLUMNS, ResultSet
from .logger import get_logger


logger = get_logger("results")

SCHEMAS: Dict[str, List[str]] = {
    "sweep": SWEEP_COLUMNS,
    "scaling": SCALING_COLUMNS,
    "variance": VARIANCE_COLUMNS,
    "nonconvex": NONCONVEX_COLUMNS,
    "trace": ["iteration", "r", "elbo"],
}

SORT_KEYS: Dict[str, List[str]] = {
    "sweep": ["family", "n", "stepsize"],
    "scaling": ["family", "n"],
    "variance": ["family", "n", "M"],
    "nonconvex": ["x", "y"],
    "trace": ["iteration"],
}


def schema_for(name: str) -> str:
    """Schema key of an artifact name (``trace_structured_n100`` uses ``trace``)."""
    return "trace" if name.startswith("trace") else name


def format_table(name: str, table: pd.DataFrame) -> pd.DataFrame:
    """Select the schema columns of an artifact and sort its rows deterministically."""
    schema = schema_for(name)
    if schema not in SCHEMAS:
        raise KeyError(f"no CSV schema for artifact '{name}'")
    frame = table[SCHEMAS[schema]]
    # stable sort keeps replicate rows in cell order
    return frame.sort_values(SORT_KEYS[schema], kind="mergesort").reset_index(drop=True)


def write_results(results: ResultSet, out_dir: Path) -> List[Path]:
    """
    Write one CSV per artifact of a result set, overwriting earlier files.

    Args:
        results: Tables produced by an experiment
        out_dir: Output directory

    Returns:
        Paths of the written files

    Raises:
        ResultsWriteError: on any I/O failure, naming the path
    """
    out_dir = Path(out_dir)
    logger.info(f"Saving {len(results.tables)} result tables to {out_dir}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ResultsWriteError(out_dir, e.strerror or str(e)) from e

    paths = []
    for name, table in sorted(results.tables.items()):
        path = out_dir / f"{name}.csv"
        try:
            format_table(name, table).to_csv(path, index=False, na_rep="")
        except OSError as e:
            raise ResultsWriteError(path, e.strerror or str(e)) from e
        paths.append(path)
        logger.info(f"Saved table: {path}")

    logger.info(f"Saved {len(paths)} tables total")
    return paths
