"""
Young times and their density
=============================

A Young time is a sparse hyperbolic time n at which the expansion event fires
for the delta1-ball around x_n.  The density of Young times stabilizes; its
10th percentile over the ensemble estimates theta1.
"""
import numpy as np

from circlelab.config import reference_config
from circlelab.young import density_theta1, young_run

cfg = reference_config()
orb, path, rec = young_run(cfg.family, cfg.noise, 2000, cfg.seed, 0, cfg.hp, cfg.ep, cfg.delta1)
print(f"hyperbolic {len(rec.hyperbolic)}, sparse {len(rec.sparse)}, young {len(rec.young)}")

est = density_theta1(cfg.family, cfg.noise, 3000, 16, cfg.seed, cfg.hp, cfg.ep, cfg.delta1)
print(f"theta1_hat = {est.theta1_hat:.4f}, median final density "
      f"{np.median(est.final_density):.4f}")
