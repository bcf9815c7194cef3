"""
Scaling schedule and the regularized optimal discriminator
==========================================================

Run with ``python3 demos/schedule_and_oracle.py``. Prints only, no plotting.
"""

import numpy as np

from scalegan import oracle
from scalegan.augmentation import Transform, apply, build_schedule
from scalegan.strategy import IntensityDistribution, sample_t

# the toy schedule shrinks samples from s_0 = 1 towards s_500 ~ 0.08
sched = build_schedule(1e-4, 0.02, 500)
for t in (0, 1, 100, 200, 300, 400, 500):
    print(f"s_{t:<3d} = {sched[t]:.6f}")

# half of the intensities are t = 0, the rest uniform on 1..T
rng = np.random.default_rng(0)
dist = IntensityDistribution("uniform", current_T=500, mix_weight=0.5)
t = sample_t(dist, rng, 8)
x = rng.normal(size=(8, 2))
y = apply(Transform("scale_only"), sched, x, t)
print("t          :", t)
print("|y| / |x|  :", np.round(np.linalg.norm(y, axis=1) / np.linalg.norm(x, axis=1), 4))

# the optimal discriminator on a 1-D grid: vanilla vs variance-regularized
p0 = oracle.DensityGrid.from_function(lambda z: np.exp(-4 * (z[..., 0] - 0.3) ** 2), -1, 1, (12,))
q = oracle.DensityGrid.from_function(lambda z: np.exp(-4 * (z[..., 0] + 0.2) ** 2), -1, 1, (12,))
van = p0.density / (p0.density + q.density)
for lam in (0.0, 0.01, 0.1, 1.0):
    sol = oracle.solve_optimal_discriminator(p0, q, lam)
    print(f"lambda={lam:<5g} c={sol.c:.4f}  max|D - vanilla|={np.max(np.abs(sol.D - van)):.4f}  "
          f"range of D=({sol.D.min():.3f}, {sol.D.max():.3f})")

# scaling both densities leaves the optimal discriminator unchanged
for t in (50, 200, 500):
    print(f"t={t}: scale-invariance error {oracle.verify_scale_invariance(p0, q, sched, 0.1, [t]):.1e}")
