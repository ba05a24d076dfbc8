r"""
Conditional intervals for a heteroscedastic Laplace model
=========================================================

``Y | X = x`` is Laplace with location ``x**2`` and scale ``x`` on
``X ~ U(0, 5)``.  We build 90% minimal-width intervals at fresh test
points and measure coverage.
"""

import numpy as np
from dataclasses import replace

from ncp import datasets, evalbench

spec = datasets.GeneratorSpec("LaplaceModel")
profile = replace(evalbench.PROFILES["coverage"], epochs=10, patience=10)
report = evalbench.run_coverage_benchmark(spec, alpha=0.1, n_train=20_000, n_test=200, profile=profile)

print(f"coverage {report.coverage:.3f} at nominal {report.nominal:.2f}")
print(f"mean width {report.mean_width:.2f}")
order = np.argsort(report.x_test)
for i in order[:: len(order) // 5]:
    print(f"x={report.x_test[i]:.2f}  ({report.lower[i]:.2f}, {report.upper[i]:.2f}]  y={report.y_test[i]:.2f}")
