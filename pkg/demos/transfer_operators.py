"""
Ulam operators, sample measures and correlations
================================================

The transfer operator of f_omega is discretized on N bins.  Pulling the
uniform density through the last n_back operators gives the sample measure
mu_omega; averaging over the noise gives the annealed operator and its
stationary density.  Quenched correlations are estimated by Monte Carlo.
"""
import numpy as np

from circlelab.config import reference_config
from circlelab.measure import (Observable, correlation_curve, pullback_densities,
                               stationary_density, ulam_matrix)

cfg = reference_config()
N = 256
P = ulam_matrix(cfg.family, 0.01, N).P
print(f"Ulam matrix rows sum to 1 within {np.abs(P.sum(axis=1) - 1).max():.1e}")

hs = pullback_densities(cfg.family, cfg.path(0, 30, 0), N, range(0, 31, 5))
for n in range(5, 31, 5):
    print(f"|h_{n} - h_{n - 5}|_1 = {np.abs(hs[n] - hs[n - 5]).sum():.2e}")

st = stationary_density(cfg.family, cfg.noise, N)
print(f"annealed stationary density: {st.iterations} iterations, residual {st.residual:.1e}")

cos = Observable.cos(N)
nb = 20
curve = correlation_curve(cfg.family, cfg.path(0, nb + 6, 6), cos, cos, 5, "backward", N,
                          10**4, nb)
for n, C, s in curve:
    print(f"C_{n} = {C:.2e} (MC sigma {s:.1e})")
