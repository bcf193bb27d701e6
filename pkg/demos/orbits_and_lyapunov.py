"""
Orbits, Lyapunov exponents and the large-deviation probe
========================================================

Iterates the reference map along noise paths and estimates the Lyapunov
exponent as the ensemble mean of S_n / n, with S_n = sum log|f'(x_i)|.
"""
from circlelab.circle_map import NoisePath
from circlelab.config import reference_config
from circlelab.orbit import iterate, large_dev_probe, lyapunov_estimate

cfg = reference_config()
path = NoisePath(seed=1, epsilon=cfg.epsilon, past_len=0, future_len=1001)
orb = iterate(cfg.family, path, 0.0, 1000, r=cfg.hp.r)
print("first positions:", orb.x[:5].round(6))
print("S_1000 / 1000 =", orb.logd.sum() / 1000)

est = lyapunov_estimate(cfg.family, cfg.noise, 2000, 16, cfg.seed)
print(f"lambda_hat = {est.lambda_hat:.4f} +- {est.stderr:.4f}  (log(2 pi alpha) - log 2 = 7.14)")

l = cfg.ldp
pr = large_dev_probe(cfg.family, cfg.noise, l["R"], l["h"], l["ell"], l["beta2"], grid=10**6)
print(f"large deviations: G measure {pr.G_measure:.3e}, Z = {pr.Z:.3e}")
