"""
Branch tracking and the expansion event
=======================================

An interval of length delta1 is pushed forward along monotone branches.
The event fires when, within L steps, some branch maps a subinterval J onto
the target ball B(x0, 2 delta0) while staying epsilon0 away from the critical
set.  Every witness is replayed on a dense sample.
"""
import numpy as np

from circlelab.branches import event_E, identity_branch, push_forward, verify_witness
from circlelab.config import reference_config

cfg = reference_config()
ep, d1 = cfg.ep, cfg.delta1
print(f"delta0 = {ep.delta0:.5f}, delta1 = {d1:.5f}, epsilon0 = {ep.epsilon0:.5f}, L = {ep.L}")

# a short interval splits into many branches within two steps
path = cfg.path(0, 0, 3)
brs = [identity_branch((0.3, 0.3 + d1))]
for i in range(2):
    brs = push_forward(cfg.family, brs, path, i)
    print(f"step {i + 1}: {len(brs)} branches, longest image {max(b.image_length for b in brs):.2f}")

hits, depth = 0, []
centers = np.random.default_rng(3).uniform(size=500)
for t, y in enumerate(centers):
    p = cfg.path(t, 0, ep.L + 1)
    w = event_E(cfg.family, p, (y - d1 / 2, y + d1 / 2), ep)
    if w.hit:
        assert verify_witness(cfg.family, p, w, ep)
        hits += 1
        depth.append(w.ell)
print(f"hit rate {hits / len(centers):.3f}, mean depth {np.mean(depth):.2f}")
