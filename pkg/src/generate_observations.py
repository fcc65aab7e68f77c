"""
Generate observations from the correlated hierarchical Gaussian model.
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from bbvi.targets import CorrelatedHierarchicalGaussian, save_observations


def generate_observations(n_datapoints: int = 100, d_z: int = 2, d_y: int = 2, seed: int = 0,
                          output_path: Path = None) -> np.ndarray:
    """
    Simulate observations x_n from the two-level model.

    Args:
        n_datapoints: Number of datapoints N
        d_z: Global dimension
        d_y: Local dimension (one observed column per local coordinate)
        seed: Random seed
        output_path: Path to save the CSV file

    Returns:
        Array of shape (N, d_y)
    """
    target = CorrelatedHierarchicalGaussian.simulate(n_datapoints, d_z, d_y, seed=seed)

    # Save if output path provided
    if output_path:
        save_observations(target.observations, output_path)
        print(f"Observations saved to: {output_path}")
        print(f"Generated {n_datapoints} rows of data")

    return target.observations


if __name__ == "__main__":
    output_path = Path(__file__).resolve().parents[1] / "data" / "observations.csv"
    observations = generate_observations(100, output_path=output_path)

    print("\nData Summary:")
    print(f"Datapoints: {observations.shape[0]}")
    print(f"Column means: {np.round(observations.mean(axis=0), 3).tolist()}")
    print(f"Column std devs: {np.round(observations.std(axis=0), 3).tolist()}")
