"""Planar Brownian motion started at depth a leaves the upper half-plane at a Cauchy(a) point.

This is the synthetic oracle behind the Cauchy limits: once (M, N) is known to be a
time-changed planar Brownian motion started at (mu(X), 0), its exit ordinate is Cauchy.
"""

import numpy as np

from amshe.stats import CauchyLaw, brownian_halfplane_oracle, cauchy_report

rng = np.random.default_rng(1)

for a in (0.5, 1.0, 2.0):
    y = brownian_halfplane_oracle(a, 1e-3, rng, size=20_000)
    rep = cauchy_report(y, a)
    print(f"a={a:<4}  n={rep.n}  KS={rep.ks:.4f}  median={rep.median:+.3f}  "
          f"IQR={rep.iqr:.3f} (target {2 * a:.3f})  ECF scale={rep.ecf_scale_fit:.3f}")

# A point mass at zero is Cauchy(0): the exit happens immediately.
law = CauchyLaw(0.0)
print("\na=0 exits are all zero:", np.all(brownian_halfplane_oracle(0.0, 1e-3, rng, size=5) == 0))
print("CDF of Cauchy(0) just left and right of 0:", law.cdf_left([0.0])[0], law.cdf([0.0])[0])
