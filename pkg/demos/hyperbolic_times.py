"""
Pliss times, hyperbolic times and sparse times
==============================================

A time n is (sigma^2, r)-hyperbolic if every backward block average of
log|f'| exceeds log(1/sigma^2) and the orbit keeps a growing distance from
the critical set.  The detector is exact: it agrees with the O(n^2) double
loop on every input.
"""
import numpy as np

from circlelab.config import reference_config
from circlelab.orbit import iterate
from circlelab.times import (hyperbolic_times, pliss_density_bound, pliss_times, sparse_times,
                             time_density)

# Pliss lemma on an i.i.d. sequence bounded by A
rng = np.random.default_rng(0)
seq = rng.uniform(-1.5, 2.0, 10**4)
c1, c2, A = 0.1, 0.2, 2.0
obs = time_density(pliss_times(seq, c1, c2, A), seq.size)
print(f"Pliss density {obs:.3f} >= guaranteed {pliss_density_bound(seq, c2, A):.3f}")

# hyperbolic times along a reference orbit
cfg = reference_config()
n = 5000
orb = iterate(cfg.family, cfg.path(0, 0, n + 1), 0.0, n, cfg.hp.r)
hyp = hyperbolic_times(orb, cfg.hp)
sp = sparse_times(hyp, cfg.hp.L)
print(f"{len(hyp)} hyperbolic times, density {time_density(hyp, n):.3f}")
print(f"{len(sp)} {cfg.hp.L}-sparse times, density {time_density(sp, n):.3f}")
print("first hyperbolic times:", list(hyp)[:12])
