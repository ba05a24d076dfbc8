r"""
Conditional CDFs on a linear Gaussian model
===========================================

Train on ``Y = X + N(0, 0.1)`` and compare the estimated conditional CDF
with the exact one at a few conditioning points.
"""

import numpy as np
from dataclasses import replace

from ncp import datasets, evalbench, inference
from ncp.postprocess import whiten
from ncp.trainer import train

spec = datasets.GeneratorSpec("LinearGaussian", n=10_000, seed=0)
data = datasets.generate(spec)
val = datasets.generate(spec.with_(n=1000, seed=evalbench.validation_seed(0)))

config = replace(evalbench.PROFILES["benchmark"], epochs=50, patience=25)
model = whiten(train(data, val, config))
grid = inference.default_grid(model.y_train, 1000)

for x in (-0.5, 0.0, 0.5):
    est = inference.cond_cdf(model, [x], grid)
    exact = inference.CdfGrid(grid, datasets.true_cdf(spec, x, grid))
    mean = inference.cond_mean(model, [x])
    ci = inference.interval_search(est, 0.1)
    print(f"x={x:+.1f}  KS {evalbench.ks_distance(est, exact):.4f}  mean {mean:+.3f}  "
          f"90% interval ({ci.lower:+.3f}, {ci.upper:+.3f}]")

# the same model answers set-valued queries
event = inference.ConditioningEvent.box([0.25], [0.75])
print("P[Y > 0.5 | 0.25 <= X <= 0.75] =", round(float(inference.cond_probability(model, model.y_train[:, 0] > 0.5, event)), 4))
