"""
The random circle map and its critical set
==========================================

f_omega(x) = x + a + alpha * xi(x + omega) mod 1, with omega drawn uniformly
from [-eps, eps] at every step.  This script prints the critical points of the
two profiles, the admissible radius delta0 of the reference map and the measure
of the set where the derivative is small.
"""
import numpy as np

from circlelab.circle_map import (MapFamily, NoisePath, critical_set, delta0, deriv_f, eval_f,
                                  small_derivative_measure)

# reference map: sine profile, alpha = 400, rotation a = 0.3
sine = MapFamily("sine", 400, 0.3)
bump = MapFamily("two-bump", 400, 0.3)

for fam in (sine, bump):
    cs = critical_set(fam)
    print(f"{fam.xi_kind:9s} critical points {np.round(cs.points, 4)}  "
          f"min|xi''| = {cs.min_second_deriv:.3f}")

d = delta0(sine)
print(f"delta0(sine, 400) = {d.value:.7f}")

# one noisy step and its derivative
path = NoisePath(seed=1, epsilon=0.05, past_len=0, future_len=3)
x = 0.1
print(f"f(0.1) = {eval_f(sine, path[0], x):.12f}, f'(0.1) = {deriv_f(sine, path[0], x):.3f}")

# the small-derivative set shrinks like alpha^(gamma - 1)
for alpha in (1e3, 1e4):
    r = small_derivative_measure(MapFamily("sine", alpha, 0.3), 1.0, 0.5, grid=10**6)
    print(f"alpha={alpha:7.0f}: m{{|df| < alpha^0.5}} = {r.measured:.3e}, bound {r.bound:.3e}")
