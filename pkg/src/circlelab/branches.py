"""Monotone-branch bookkeeping for interval images and the expansion event E(I).

Everything here works on the real-line lift: an interval is a pair lo < hi of
reals (length at most 1 for domains), and a branch remembers, step by step,
the lifted segment on which each map was applied.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .circle_map import _dxi_scalar, _xi_scalar, circle_dist, lift_f
from .errors import BranchExplosion, EmptyInterval, TargetNotCovered

ROOT_XTOL = 1e-18
ROOT_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class MonotoneBranch:
    domain: tuple
    image: tuple
    orientation: int
    chain: tuple  # ((omega, seg_lo, seg_hi), ...) one lifted monotone segment per step
    min_abs_deriv: float = 1.0
    min_crit_dist: float = math.inf

    @property
    def depth(self):
        return len(self.chain)

    @property
    def image_length(self):
        return self.image[1] - self.image[0]

    def forward(self, family, x):
        """Composition applied to a lifted point of the domain."""
        for om, _, _ in self.chain:
            x = lift_f(family, om, x)
        return x


def identity_branch(interval):
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise EmptyInterval(f"[{lo}, {hi}]")
    return MonotoneBranch((lo, hi), (lo, hi), 1, ())


def _shifted_points(family, omega):
    return np.sort(np.mod(family.critical_points - omega, 1.0))


def _cuts(pts, lo, hi):
    """Lifted copies of the points that fall strictly inside (lo, hi)."""
    if len(pts) == 0:
        return []
    out = []
    for k in range(math.floor(lo) - 1, math.ceil(hi) + 1):
        for p in pts:
            c = p + k
            if lo < c < hi:
                out.append(c)
    out.sort()
    return out


def _good_components(pts, lo, hi, eps0):
    """[lo,hi] minus the closed eps0-neighbourhoods of the lifted points."""
    if eps0 is None or eps0 <= 0:
        cuts = _cuts(pts, lo, hi)
        edges = [lo] + cuts + [hi]
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)
                if edges[i + 1] > edges[i]]
    bad = []
    for k in range(math.floor(lo) - 1, math.ceil(hi) + 2):
        for p in pts:
            bad.append((p + k - eps0, p + k + eps0))
    bad.sort()
    comps = []
    cur = lo
    for b0, b1 in bad:
        if b1 <= cur:
            continue
        if b0 >= hi:
            break
        if b0 > cur:
            comps.append((cur, min(b0, hi)))
        cur = max(cur, b1)
        if cur >= hi:
            break
    if cur < hi:
        comps.append((cur, hi))
    return [c for c in comps if c[1] > c[0]]


def _segment_min_deriv(family, omega, lo, hi, samples=9):
    u = np.linspace(lo, hi, samples)
    return float(np.min(np.abs(family.alpha * family.dxi(u + omega))))


def _extend(family, br, omega, seg, pts):
    p, q = float(seg[0]), float(seg[1])
    Fp, Fq = lift_f(family, omega, p), lift_f(family, omega, q)
    step_or = 1 if Fq >= Fp else -1
    img = (Fp, Fq) if step_or > 0 else (Fq, Fp)
    chain = br.chain + ((omega, p, q),)
    if br.chain:
        a, b = invert_on_branch(family, br, (p, q))
        domain = (a, b)
    else:
        domain = (p, q)
    if len(pts):
        inside = any(p <= c <= q for c in _cuts(pts, p - 1.0, q + 1.0))
        cd = 0.0 if inside else float(np.min(circle_dist(np.array([p, q])[:, None],
                                                        pts[None, :])))
    else:
        cd = math.inf
    return MonotoneBranch(domain, img, br.orientation * step_or, chain,
                          br.min_abs_deriv * _segment_min_deriv(family, omega, p, q),
                          min(br.min_crit_dist, cd))


def decompose(family, omega0, interval):
    """Split an interval at C - omega0 into monotone branches of f_{omega0}.

    A full circle is started at the first shifted critical point, so it splits
    into exactly #C branches.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise EmptyInterval(f"[{lo}, {hi}]")
    if hi - lo > 1.0 + 1e-12:
        raise ValueError("interval longer than the circle")
    pts = _shifted_points(family, omega0)
    if hi - lo >= 1.0 and len(pts):
        start = float(min(p + math.ceil(lo - p) for p in pts))
        lo, hi = start, start + 1.0
    base = identity_branch((lo, hi))
    return [_extend(family, base, omega0, seg, pts)
            for seg in _good_components(pts, lo, hi, None)]


def push_forward(family, branches, path, step_index, epsilon0=None, max_branches=10**6):
    """Apply f_{omega_step} to every branch image.

    With epsilon0 set, each image is first trimmed to the points farther than
    epsilon0 from C - omega_step; without it images are only split at the
    critical points.  Output keeps the order of the domains.
    """
    omega = path[step_index]
    pts = _shifted_points(family, omega)
    out = []
    for br in branches:
        segs = _good_components(pts, br.image[0], br.image[1], epsilon0)
        if br.orientation < 0:
            segs = segs[::-1]
        for seg in segs:
            out.append(_extend(family, br, omega, seg, pts))
            if len(out) > max_branches:
                raise BranchExplosion(f"more than {max_branches} live branches")
    return out


def _solve(family, omega, lo, hi, t):
    Flo, Fhi = lift_f(family, omega, lo), lift_f(family, omega, hi)
    if t == Flo:
        return lo
    if t == Fhi:
        return hi
    glo, ghi = Flo - t, Fhi - t
    if glo * ghi > 0:
        return lo if abs(glo) < abs(ghi) else hi
    return brentq(lambda y: lift_f(family, omega, y) - t, lo, hi,
                  xtol=ROOT_XTOL, rtol=ROOT_RTOL, maxiter=400)


def invert_on_branch(family, branch, target):
    """Preimage of a lifted target interval under the branch's composition."""
    t0, t1 = float(target[0]), float(target[1])
    slack = 1e-12 * max(1.0, abs(branch.image[0]), abs(branch.image[1]))
    if t0 < branch.image[0] - slack or t1 > branch.image[1] + slack or t1 < t0:
        raise TargetNotCovered(f"[{t0}, {t1}] not inside image {branch.image}")
    lo, hi = t0, t1
    for om, s0, s1 in reversed(branch.chain):
        a = _solve(family, om, s0, s1, lo)
        b = _solve(family, om, s0, s1, hi)
        lo, hi = (a, b) if a <= b else (b, a)
    return lo, hi


# -- the expansion event ------------------------------------------------------------

@dataclass(frozen=True)
class EventParams:
    L: int
    delta0: float
    x0: float
    epsilon0: float
    max_branches: int = 10**6

    @property
    def target(self):
        return (self.x0 - 2 * self.delta0, self.x0 + 2 * self.delta0)


class EventWitness(NamedTuple):
    ell: int
    J: tuple
    hit: bool
    offset: int = 0
    branch: object = None


MISS = EventWitness(0, None, False)


def _copies(image, target):
    """Integers m with target + m inside the lifted image."""
    lo = math.ceil(image[0] - target[0])
    hi = math.floor(image[1] - target[1])
    return lo, hi


def event_E(family, path, interval, params):
    """Decide whether the path lies in E(I), returning the leftmost shallowest witness.

    A witness is 0 < ell <= L and J inside I with f^ell(J) = B_{2 delta0}(x0)
    and f^i(J) farther than epsilon0 from C - omega_i for 0 < i < ell.
    """
    if params.L <= 0:
        return MISS
    tgt = params.target
    branches = [identity_branch(interval)]
    for ell in range(1, params.L + 1):
        eps0 = params.epsilon0 if ell > 1 else None
        branches = push_forward(family, branches, path, ell - 1, eps0, params.max_branches)
        for br in branches:
            m0, m1 = _copies(br.image, tgt)
            if m0 > m1:
                continue
            m = m0 if br.orientation > 0 else m1
            J = invert_on_branch(family, br, (tgt[0] + m, tgt[1] + m))
            return EventWitness(ell, J, True, m, br)
    return MISS


def verify_witness(family, path, w, params, samples=1000, tol=1e-8):
    """Dense-sample replay: step-ell images land in the target, earlier ones stay clear."""
    if not w.hit:
        return True
    xs = np.linspace(w.J[0], w.J[1], samples)
    tgt = params.target
    pts = family.critical_points
    y = xs
    for i in range(w.ell):
        if 0 < i and len(pts):
            d = circle_dist(y[:, None], (pts - path[i])[None, :]).min(axis=1)
            if np.any(d <= params.epsilon0):
                return False
        y = lift_f(family, path[i], y)
    y0, y1 = y[0], y[-1]
    lo, hi = min(y0, y1), max(y0, y1)
    end_ok = abs(lo - (tgt[0] + w.offset)) <= tol and abs(hi - (tgt[1] + w.offset)) <= tol
    inside = np.all((y >= tgt[0] + w.offset - tol) & (y <= tgt[1] + w.offset + tol))
    return bool(end_ok and inside)


# -- vectorized event for L <= 2 ------------------------------------------------------

def _bisect_inverse(family, omega, lo, hi, t, iters=64):
    """Vectorized inverse of the lift on monotone segments [lo, hi]."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    inc = lift_f(family, omega, hi) >= lift_f(family, omega, lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = lift_f(family, omega, mid) > t
        go_left = above == inc
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
    return 0.5 * (lo + hi)


def depth2_targets(family, omega, params):
    """Sorted components K (over [0, 3)) that f_omega maps onto a target copy
    while staying farther than epsilon0 from C - omega."""
    pts = _shifted_points(family, omega)
    tgt = params.target
    klo, khi = [], []
    for g0, g1 in _good_components(pts, 0.0, 1.0, params.epsilon0) or [(0.0, 1.0)]:
        F0, F1 = lift_f(family, omega, g0), lift_f(family, omega, g1)
        A, B = min(F0, F1), max(F0, F1)
        m0, m1 = _copies((A, B), tgt)
        if m0 > m1:
            continue
        ms = np.arange(m0, m1 + 1)
        a = _bisect_inverse(family, omega, np.full(ms.size, g0), np.full(ms.size, g1), tgt[0] + ms)
        b = _bisect_inverse(family, omega, np.full(ms.size, g0), np.full(ms.size, g1), tgt[1] + ms)
        klo.append(np.minimum(a, b))
        khi.append(np.maximum(a, b))
    if not klo:
        return np.empty(0), np.empty(0)
    klo = np.concatenate(klo)
    khi = np.concatenate(khi)
    # components that straddle 0 are kept as is; extend by whole turns
    order = np.argsort(klo)
    klo, khi = klo[order], khi[order]
    base = klo - np.floor(klo)
    shift = klo - base
    klo, khi = base, khi - shift
    order = np.argsort(klo)
    klo, khi = klo[order], khi[order]
    return (np.concatenate([klo - 1, klo, klo + 1, klo + 2]),
            np.concatenate([khi - 1, khi, khi + 1, khi + 2]))


def event_batch(family, path, centers, half_width, params):
    """Event depth (0 when missed) for the intervals B_{half_width}(y), y in centers.

    Agrees with event_E point by point for L <= 2 (checked in the tests);
    deeper searches fall back to the scalar tracker.
    """
    centers = np.asarray(centers, dtype=float)
    depth = np.zeros(centers.size, dtype=np.int64)
    if params.L <= 0 or centers.size == 0:
        return depth
    if params.L > 2 or not family.physical:
        for i, y in enumerate(centers):
            w = event_E(family, path, (y - half_width, y + half_width), params)
            depth[i] = w.ell if w.hit else 0
        return depth
    pts = np.sort(family.critical_points)
    gaps = np.diff(np.concatenate([pts, [pts[0] + 1]]))
    if 2 * half_width >= gaps.min():
        raise ValueError("interval too wide for the vectorized event")
    tgt = params.target
    om0 = path[0]
    spts = _shifted_points(family, om0)
    lo = centers - half_width
    hi = centers + half_width
    # at most one critical cut per interval
    cut = np.full(centers.size, np.nan)
    for p in spts:
        k = np.ceil(lo - p)
        c = p + k
        inside = c < hi
        cut = np.where(inside & np.isnan(cut), c, cut)
    has_cut = ~np.isnan(cut)
    seg_a = [(lo, np.where(has_cut, cut, hi)), (np.where(has_cut, cut, lo), hi)]
    live = [np.ones(centers.size, dtype=bool), has_cut]
    images = []
    for (a, b), ok in zip(seg_a, live):
        Fa, Fb = lift_f(family, om0, a), lift_f(family, om0, b)
        A, B = np.minimum(Fa, Fb), np.maximum(Fa, Fb)
        hit1 = ok & (np.floor(B - tgt[1]) >= np.ceil(A - tgt[0]))
        depth[hit1] = 1
        images.append((A, B, ok))
    if params.L < 2:
        return depth
    todo = depth == 0
    if not np.any(todo):
        return depth
    klo, khi = depth2_targets(family, path[1], params)
    if klo.size == 0:
        return depth
    for A, B, ok in images:
        sel = todo & ok & (depth == 0)
        if not np.any(sel):
            continue
        a, b = A[sel], B[sel]
        base = np.floor(a)
        a0, b0 = a - base, b - base
        j = np.searchsorted(klo, a0, side="left")
        j = np.minimum(j, klo.size - 1)
        hit2 = (klo[j] >= a0) & (khi[j] <= b0)
        idx = np.nonzero(sel)[0]
        depth[idx[hit2]] = 2
    return depth
