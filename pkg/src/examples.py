"""
Example usage of the BBVI engine.

This script demonstrates various ways to use the library:
1. A single proximal SGD run on the synthetic hierarchical target
2. Gradient variance against the analytic bound
3. A small stepsize sweep through the experiment runner

Note: Run this script from the repository root or ensure the package
is installed properly via pip install -e .
"""
from pathlib import Path

import numpy as np

# Import from installed package or local module
try:
    import bbvi
except ImportError:
    # Fallback for development: adjust path if needed
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    import bbvi

from bbvi.diagnostics import complexity_constants, variance_report
from bbvi.scale_matrix import SparsityDescriptor
from bbvi.variational_family import STANDARD_GAUSSIAN


def example_single_run():
    """Example 1: Proximal SGD with the structured family."""
    print("=" * 80)
    print("EXAMPLE 1: Single Run")
    print("=" * 80)

    target = bbvi.SyntheticIsotropicHierarchical(n_datapoints=20)
    params0 = bbvi.initial_params("structured", layout=target.layout)
    optimum = target.optimal_params("structured")
    config = bbvi.OptimizerConfig(stepsize=0.02, max_iters=500, record_elbo=True, eval_every=100)

    trace = bbvi.run(params0, target, config, optimum, np.random.default_rng(0))

    print(f"\nInitial squared distance: {trace.distances[0]:.2f}")
    print(f"Final squared distance: {trace.distances[-1]:.4f}")
    print(f"Iterations to eps=1: {bbvi.first_hit_time(trace.distances, 1.0)}")
    print(trace.to_frame().dropna().to_string(index=False))


def example_variance():
    """Example 2: Measured gradient variance and the analytic bound."""
    print("\n" + "=" * 80)
    print("EXAMPLE 2: Gradient Variance")
    print("=" * 80)

    target = bbvi.SyntheticIsotropicHierarchical(n_datapoints=20)
    rng = np.random.default_rng(1)
    for family in ("mean_field", "structured", "full_rank"):
        params = bbvi.initial_params(family, layout=target.layout)
        report = variance_report(params, target, family, num_samples=8, num_outer=500, rng=rng)
        print(f"  {family:>10}: d*={report.d_star:3d}  empirical={report.empirical:10.1f} "
              f"+/- {report.stderr:7.1f}  bound={report.bound:10.1f}")

    optimum = target.optimal_params("structured")
    descriptor = SparsityDescriptor.from_structure(optimum.C, target.structure.index_sets)
    constants = complexity_constants(target, descriptor, 8, optimum, STANDARD_GAUSSIAN.kurtosis)
    print(f"\nLargest admissible stepsize (structured): {constants.max_stepsize:.3g}")


def example_sweep():
    """Example 3: Stepsize sweep through the experiment runner."""
    print("\n" + "=" * 80)
    print("EXAMPLE 3: Stepsize Sweep")
    print("=" * 80)

    config = bbvi.load_config(overrides={
        "experiment": "scaling",
        "families": "mean_field,structured",
        "target.n": "20",
        "stepsize.count": "8",
        "stepsize.low": "1e-3",
        "tmax": "3000",
        "output": "outputs/example_sweep",
    })
    results = bbvi.ExperimentRunner(config).run()
    print(results.tables["scaling"].to_string(index=False))
    paths = bbvi.write_results(results, config.output_dir)
    print(f"\nWrote {len(paths)} tables")


if __name__ == "__main__":
    # Run all examples
    example_single_run()
    example_variance()
    example_sweep()

    print("\n" + "=" * 80)
    print("All examples completed successfully!")
    print("=" * 80)
