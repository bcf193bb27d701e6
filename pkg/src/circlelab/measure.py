"""Ulam transfer operators, sample measures and quenched correlations.

Densities are stored as bin masses (a probability vector over N equal bins)
and transported by right multiplication with a row-stochastic matrix.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .branches import _bisect_inverse
from .circle_map import TWO_PI, NoisePath, _wrap, lift_f, noise_uniforms
from .errors import AllBelowFloor, NoConvergence, WindowTooShort
from .fitting import log_linear_fit

MC_STREAM = 3  # Philox stream for Monte-Carlo nodes
SAMPLE_CHUNK = 1 << 21


@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Row-stochastic N x N matrix; row i is the distribution of f(bin_i)."""
    P: np.ndarray
    omega0: float = None   # None for a noise-averaged operator
    mode: str = "branch-exact"
    samples: int = None

    @property
    def N(self):
        return self.P.shape[0]

    def push(self, h):
        return h @ self.P


def _inverse_closed(family, omega, lo, hi, t):
    """Preimage of t in the monotone piece [lo, hi] (closed form for sine / linear)."""
    if family.xi_kind == "test-linear":
        return (t - family.a) / family.alpha - omega
    s = np.clip((t - family.a) / family.alpha, -1.0, 1.0)
    u0 = np.arcsin(s) / TWO_PI           # in [-1/4, 1/4]
    mid = 0.5 * (lo + hi) + omega
    # increasing laps are [-1/4, 1/4] + k, decreasing ones [1/4, 3/4] + k
    inc = np.cos(TWO_PI * mid) > 0
    k_inc = np.round(mid - u0)
    k_dec = np.round(mid - (0.5 - u0))
    u = np.where(inc, u0 + k_inc, 0.5 - u0 + k_dec)
    return np.clip(u - omega, lo, hi)


def _pieces(family, omega, N):
    """Monotone pieces [lo, hi] of f_omega, each inside a single bin, with bin index."""
    edges = np.arange(N + 1) / N
    crit = np.mod(family.critical_points - omega, 1.0) if family.physical else np.empty(0)
    pts = np.unique(np.concatenate([edges, crit]))
    lo, hi = pts[:-1], pts[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    rows = np.minimum((0.5 * (lo + hi) * N).astype(np.int64), N - 1)
    return lo, hi, rows


def _ulam_exact(family, omega, N):
    lo, hi, rows = _pieces(family, omega, N)
    F0, F1 = lift_f(family, omega, lo), lift_f(family, omega, hi)
    ylo, yhi = np.minimum(F0, F1), np.maximum(F0, F1)
    k0 = np.floor(ylo * N).astype(np.int64) + 1
    k1 = np.ceil(yhi * N).astype(np.int64) - 1
    cnt = np.maximum(k1 - k0 + 1, 0)
    piece = np.repeat(np.arange(lo.size), cnt)
    first = np.repeat(np.cumsum(cnt) - cnt, cnt)
    t = (np.repeat(k0, cnt) + np.arange(piece.size) - first) / N
    if family.xi_kind == "two-bump":
        u = _bisect_inverse(family, omega, lo[piece], hi[piece], t, iters=60)
    else:
        u = _inverse_closed(family, omega, lo[piece], hi[piece], t)
    # breakpoints of each piece in domain order: ends plus preimages of bin edges
    allp = np.concatenate([piece, np.arange(lo.size), np.arange(lo.size)])
    allx = np.concatenate([u, lo, hi])
    order = np.lexsort((allx, allp))
    allp, allx = allp[order], allx[order]
    same = allp[1:] == allp[:-1]
    seg_lo, seg_hi, seg_p = allx[:-1][same], allx[1:][same], allp[:-1][same]
    length = seg_hi - seg_lo
    ok = length > 0
    seg_lo, seg_hi, seg_p, length = seg_lo[ok], seg_hi[ok], seg_p[ok], length[ok]
    ymid = lift_f(family, omega, 0.5 * (seg_lo + seg_hi))
    cols = np.floor(ymid * N).astype(np.int64) % N
    P = np.bincount(rows[seg_p] * N + cols, weights=length * N, minlength=N * N).reshape(N, N)
    return P / P.sum(axis=1, keepdims=True)


def _ulam_sampled(family, omega, N, k):
    P = np.zeros(N * N)
    rows_per = max(1, SAMPLE_CHUNK // k)
    sub = (np.arange(k) + 0.5) / k
    for r0 in range(0, N, rows_per):
        r = np.arange(r0, min(N, r0 + rows_per))
        x = ((r[:, None] + sub[None, :]) / N).ravel()
        cols = np.floor(_wrap(lift_f(family, omega, x)) * N).astype(np.int64) % N
        P += np.bincount(np.repeat(r, k) * N + cols, minlength=N * N)
    P = P.reshape(N, N)
    return P / P.sum(axis=1, keepdims=True)


def ulam_matrix(family, omega0, N, mode="branch-exact", k=None):
    """Ulam matrix of f_omega0 on N bins.

    mode "branch-exact" integrates the preimages of the bin edges on every
    monotone piece; mode "sampled" uses k >= 1000 stratified points per bin.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if mode == "branch-exact":
        return UlamOperator(_ulam_exact(family, float(omega0), N), float(omega0), mode)
    if mode == "sampled":
        k = 1000 if k is None else int(k)
        if k < 1000:
            raise ValueError("sampled mode needs k >= 1000")
        return UlamOperator(_ulam_sampled(family, float(omega0), N, k), float(omega0), mode, k)
    raise ValueError(f"unknown mode {mode!r}")


def uniform(N):
    return np.full(N, 1.0 / N)


def pullback_density(family, path, N, n_back, mode="branch-exact"):
    """h = L_{omega_-1} ... L_{omega_-n_back} applied to the uniform density."""
    return pullback_densities(family, path, N, [n_back], mode)[n_back]


def pullback_densities(family, path, N, n_backs, mode="branch-exact"):
    """pullback_density for several n_back values, each operator built once.

    Every chain is applied vector by vector in the same order as a single
    call, so results are bitwise identical to pullback_density.
    """
    n_backs = sorted(set(int(n) for n in n_backs))
    top = n_backs[-1] if n_backs else 0
    if top > path.past_len:
        raise WindowTooShort(f"n_back={top} exceeds the past window {path.past_len}")
    hs = {n: uniform(N) for n in n_backs}
    for k in range(top, 0, -1):
        P = ulam_matrix(family, path[-k], N, mode).P
        for n in n_backs:
            if n >= k:
                hs[n] = hs[n] @ P
    return hs


def annealed_operator(family, noise, N, k_noise=16, mode="branch-exact"):
    """Average of the Ulam matrices over Gauss-Legendre nodes on [-eps, eps]."""
    if k_noise < 16:
        raise ValueError("need at least 16 quadrature nodes")
    nodes, weights = np.polynomial.legendre.leggauss(k_noise)
    Q = np.zeros((N, N))
    for x, w in zip(nodes, weights):
        Q += 0.5 * w * ulam_matrix(family, noise.epsilon * x, N, mode).P
    Q /= Q.sum(axis=1, keepdims=True)
    return UlamOperator(Q, None, mode)


@dataclass(frozen=True)
class StationaryDensity:
    h: np.ndarray
    residual: float
    iterations: int


def stationary_density(family, noise, N, k_noise=16, tol=1e-10, max_iter=10**5,
                       mode="branch-exact", operator=None):
    """Fixed point of the annealed operator by power iteration from uniform."""
    Q = (operator or annealed_operator(family, noise, N, k_noise, mode)).P
    h = uniform(N)
    for it in range(1, max_iter + 1):
        g = h @ Q
        res = float(np.abs(g - h).sum())
        if res <= tol:
            # the start itself when it is already fixed
            return StationaryDensity(h if res == 0.0 else g, res, it)
        h = g
    raise NoConvergence(f"residual {res:.3g} after {max_iter} iterations")


# -- observables and correlations -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Observable:
    """Bounded observable with values on bin centres.

    ``fn`` evaluates it pointwise (grid observables fall back to bin lookup);
    ``lip`` is the Lipschitz seminorm, recorded for lipschitz observables.
    """
    kind: str
    values: np.ndarray
    lip: float = None
    fn: object = field(default=None, repr=False)

    @property
    def N(self):
        return self.values.size

    @property
    def sup(self):
        return float(np.max(np.abs(self.values)))

    @property
    def lip_norm(self):
        return None if self.lip is None else self.sup + self.lip

    def __call__(self, x):
        if self.fn is not None:
            return self.fn(x)
        idx = np.minimum((np.asarray(x) * self.N).astype(np.int64), self.N - 1)
        return self.values[idx]

    @classmethod
    def grid(cls, values):
        return cls("grid", np.asarray(values, dtype=float))

    @classmethod
    def constant(cls, N, c=1.0):
        return cls("lipschitz", np.full(N, float(c)), 0.0, lambda x: np.full(np.shape(x), float(c)))

    @classmethod
    def cos(cls, N, k=1):
        f = lambda x: np.cos(TWO_PI * k * np.asarray(x))
        c = (np.arange(N) + 0.5) / N
        return cls("lipschitz", f(c), TWO_PI * k, f)


def sampled_lip(obs, points=4096):
    """Largest difference quotient of obs on a uniform grid (a lower bound for Lip)."""
    x = np.arange(points) / points
    v = obs(x)
    d = np.abs(np.diff(np.append(v, v[0]))) * points
    return float(d.max())


@dataclass(frozen=True)
class Correlation:
    C: float
    sigma: float
    first: float
    second: float


def quenched_correlation(family, path, phi, psi, n, direction="backward", N=1024, mc=10**5,
                         n_back=60, seed=0, mode="branch-exact", density=None):
    """|int phi(f^n x) psi(x) dx - int phi dmu int psi dx| with its MC standard error.

    forward: f^n = f^n_omega and mu = mu_{theta^n omega};
    backward: f^n = f^n_{theta^-n omega} and mu = mu_omega.
    Both Lebesgue integrals use the same mc uniform nodes, so phi = const gives
    exactly zero up to the normalisation of the density.
    """
    if direction == "forward":
        start, dens_path = 0, path.shift(n) if n else path
    elif direction == "backward":
        start, dens_path = -n, path
    else:
        raise ValueError("direction must be forward or backward")
    x = noise_uniforms(seed, path.path_index, 0, mc, stream=MC_STREAM)
    y = x.copy()
    for k in range(start, start + n):
        y = _wrap(lift_f(family, path[k], y))
    h = pullback_density(family, dens_path, N, n_back, mode) if density is None else density
    c = (np.arange(N) + 0.5) / N
    phi_mu = float(h @ phi(c))
    ps = psi(x)
    terms = (phi(y) - phi_mu) * ps
    first = float(np.mean(phi(y) * ps))
    second = phi_mu * float(np.mean(ps))
    C = abs(float(np.mean(terms)))
    sigma = float(np.std(terms, ddof=1) / math.sqrt(mc)) if mc > 1 else float("inf")
    return Correlation(C, sigma, first, second)


def correlation_curve(family, path, phi, psi, n_max, direction="backward", N=1024, mc=10**5,
                      n_back=60, seed=0, mode="branch-exact"):
    """C_n and its MC sigma for n = 0..n_max.

    Forward densities are pushed along the path (mu_{theta^n omega} = f^n_omega* mu_omega),
    so the density at step n uses a window of n_back + n steps and each operator is
    built once.
    """
    out = []
    dens = pullback_density(family, path, N, n_back, mode)
    for n in range(n_max + 1):
        r = quenched_correlation(family, path, phi, psi, n, direction, N, mc, n_back, seed,
                                 mode, density=dens)
        out.append((n, r.C, r.sigma))
        if direction == "forward" and n < n_max:
            dens = dens @ ulam_matrix(family, path[n], N, mode).P
    return out


@dataclass(frozen=True)
class DecayFit:
    gamma_hat: float
    C_omega_hat: float
    r2: float
    points: int
    degenerate: bool = False


def decay_fit(curve, floor_sigmas=3.0):
    """Log-linear fit of C_n over the points above floor_sigmas MC standard errors.

    ``curve`` holds (n, C_n) or (n, C_n, sigma) tuples.
    """
    rows = [tuple(r) + (0.0,) * (3 - len(r)) for r in curve]
    keep = [(n, c) for n, c, s in rows if c > 0 and c > floor_sigmas * s]
    if len(keep) < 5:
        raise AllBelowFloor(f"only {len(keep)} points above the Monte-Carlo floor")
    n, c = np.array(keep, dtype=float).T
    fit = log_linear_fit(n, np.log(c))
    return DecayFit(-fit.slope, math.exp(fit.intercept), fit.r2, len(keep), fit.degenerate)
