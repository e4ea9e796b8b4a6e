"""
Is the treatment effect the same for everyone?

Simulates a randomized trial where the effect grows with a covariate W,
fits the outcome regressions and the propensity, and tests whether the
conditional average treatment effect is flat in W. The same data with a
constant effect is shown for contrast.

    python3 demos/cate_heterogeneity.py [n] [seed]
"""

import sys

import numpy as np

from fvtest import EstimandConfig, compute_scores
from fvtest.simlab import PipelineSettings, gen_example2, method_pvalues


def main(n=800, seed=0):
    rng = np.random.default_rng(seed)
    settings = PipelineSettings(B=500)
    for setting, label in ((1, "constant effect"), (2, "effect = 1 + W")):
        ds = gen_example2(setting, n, rng)
        # ignore the known design probability so the propensity is estimated
        scores = compute_scores(ds, EstimandConfig("cate", propensity="spline_logistic"))
        p = method_pvalues(scores, settings, seed=seed)
        print(f"{label:>16}: ATE estimate {scores.theta_hat:.3f}")
        for method, pv in p.items():
            print(f"{'':>18}{method:<14} p = {pv:.4f}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
