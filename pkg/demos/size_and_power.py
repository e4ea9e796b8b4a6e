"""
Small Monte Carlo study: rejection rates under the null and a linear alternative.

Runs the conditional-mean example for a few sample sizes and prints the
rejection table with Monte Carlo standard errors. Pass a worker count to
spread replicates over processes; the table does not depend on it.

    python3 demos/size_and_power.py [reps] [workers]
"""

import sys

from fvtest.simlab import METHODS, PipelineSettings, build_grid, monte_carlo


def main(reps=200, workers=1):
    grid = build_grid([1], [1, 2], [125, 250, 500])
    table = monte_carlo(grid, METHODS, n_reps=reps, alpha=0.05, settings=PipelineSettings(B=300),
                        master_seed=2024, workers=workers)
    print(f"{'setting':>7} {'n':>5} " + " ".join(f"{m:>14}" for m in METHODS))
    for setting in (1, 2):
        for n in (125, 250, 500):
            cells = [table.row(m, 1, setting, n) for m in METHODS]
            print(f"{setting:>7} {n:>5} " + " ".join(f"{r.rejection_rate:>7.3f} ({r.mc_stderr:.3f})" for r in cells))


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
