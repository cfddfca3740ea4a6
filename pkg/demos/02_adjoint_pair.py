"""The pair (M, N) from one adjoint run, its quadratic variations, and the time change.

The adjoint field starts from the atoms of mu and follows the multiplicative equation.
M is its total mass; N integrates it against the independent additive noise.  The
run checks the identity alpha^2 d[M] = beta^2 d[N] and the vanishing cross-variation,
then reads the pair on the clock [M].
"""

import numpy as np

from amshe import DomainSpec, KernelSpec, MeasureSpec, SchemeParams, build_kernel
from amshe.cli_io import path_rngs
from amshe.martingale import MartingalePath, binned_brownianity, normalized_cross, time_change
from amshe.solver import adjoint_batch

domain = DomainSpec(points=64)
kernel = build_kernel(KernelSpec(half_width=0.125), domain)
params = SchemeParams(dt=1e-3, alpha=2.0, beta=1.0)
mu = MeasureSpec([(1.0, 0.0)])

P = 400
rec = adjoint_batch(mu, params, domain, kernel, T_max=1.0, record_every=1,
                    rngs_U=path_rngs(7, range(P), "U"), rngs_V=path_rngs(7, range(P), "V"))
path = MartingalePath.from_record(rec)

ratio = path.qv_N_inc[:, -1] / path.qv_M_inc[:, -1]
print(f"median [N]/[M] = {np.median(ratio):.3f}   (alpha^2/beta^2 = {params.alpha**2 / params.beta**2:g})")
print(f"median |[M,N]| / sqrt([M][N]) = {np.median(np.abs(normalized_cross(path))):.4f}")
rel = np.median(np.abs(path.qv_M_formula[:, -1] / path.qv_M_inc[:, -1] - 1))
print(f"increment QV vs integral formula, median relative gap = {rel:.4f}")
print(f"mean M_T = {path.M[:, -1].mean():.3f} +- {path.M[:, -1].std() / np.sqrt(P):.3f}  (M_0 = 1)")

tc = time_change(path)
print("\nincrements of (W, X) on the clock [M]:")
for b in binned_brownianity(tc, [0.0, 0.05, 0.1, 0.2])["bins"]:
    print(f"  q in [{b['lo']:.2f}, {b['hi']:.2f}]  n={b['n']}  var W/width={b['var_W'] / b['width']:.3f}  "
          f"var X/width={b['var_X'] / b['width']:.3f}  corr={b['corr_WX']:+.3f}")
