"""Independent reference computations used by the tests.

Nothing here calls into the package's solvers; closed forms and brute-force
searches only.
"""
import math

import numpy as np
import scipy.integrate
import scipy.optimize
from scipy.special import lambertw


def ell_ref(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe) - x + 1.0, 1.0)


def ell_roots(r):
    """(lower, upper) solutions of ell(h) = r; lower is 0 when r >= 1."""
    upper = math.exp(lambertw((r - 1.0) / math.e, 0).real + 1.0)
    lower = 0.0 if r >= 1.0 else math.exp(lambertw((r - 1.0) / math.e, -1).real + 1.0)
    return lower, upper


def _gain(a, h, mode):
    return a * (h + 1.0) if mode == "weighted_l2" else a * np.abs(h - 1.0)


def _w(z, branch):
    # clip round-off below the branch point -1/e
    z = np.asarray(z, dtype=float)
    near = z <= -1.0 / math.e + 1e-15
    return np.where(near, -1.0, lambertw(np.where(near, 0.0, z), branch).real)


def _best_last(a, w, r, mode):
    """Best gain of the last cell with remaining entropy budget r (vectorized over r)."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, -np.inf)
    ok = r >= 0
    rr = r[ok] / w
    up = np.exp(_w((rr - 1.0) / math.e, 0) + 1.0)
    if mode == "weighted_l2":
        best = w * _gain(a, up, mode)
    else:
        low = np.where(rr >= 1.0, 0.0, np.exp(_w((np.minimum(rr, 1.0) - 1.0) / math.e, -1) + 1.0))
        best = w * np.maximum(_gain(a, up, mode), _gain(a, low, mode))
        best = np.maximum(best, 0.0) if a < 0 else best
    out[ok] = best
    return out


def entropy_sup_bruteforce(w, a, N, mode, coarse=1200, fine=300, rounds=3):
    """Grid search over all but the last cell, exact last cell; up to 3 cells."""
    w = np.ravel(np.asarray(w, dtype=float))
    a = np.ravel(np.asarray(a, dtype=float))
    n = len(w)
    if n == 1:
        return float(_best_last(a[0], w[0], np.array([N]), mode)[0])
    hmax = [ell_roots(N / wi)[1] for wi in w[:-1]]
    lo = np.zeros(n - 1)
    hi = np.array(hmax)
    pts = coarse
    best_val, best_h = -np.inf, None
    for _ in range(rounds + 1):
        axes = [np.linspace(lo[i], hi[i], pts) for i in range(n - 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        spent = sum(w[i] * ell_ref(mesh[i]) for i in range(n - 1))
        gain = sum(w[i] * _gain(a[i], mesh[i], mode) for i in range(n - 1))
        total = gain + _best_last(a[-1], w[-1], N - spent, mode)
        k = np.unravel_index(np.argmax(total), total.shape)
        if total[k] > best_val:
            best_val = float(total[k])
            best_h = np.array([mesh[i][k] for i in range(n - 1)])
        step = (hi - lo) / (pts - 1)
        lo = np.maximum(best_h - 2 * step, 0.0)
        hi = np.minimum(best_h + 2 * step, hmax)
        pts = fine
    return best_val


def scan_max_1d(f, feasible, lo, hi, points=100_001, levels=6):
    """Zooming grid scan for the max of f over the feasible part of [lo, hi]."""
    best = -np.inf
    for _ in range(levels):
        x = np.linspace(lo, hi, points)
        ok = feasible(x)
        if not np.any(ok):
            break
        vals = np.where(ok, f(x), -np.inf)
        k = int(np.argmax(vals))
        best = max(best, float(vals[k]))
        step = (hi - lo) / (points - 1)
        lo, hi = max(lo, x[k] - step), min(hi, x[k] + step)
    return best


def scalar_path(t, x0, a, push):
    """Solution of y' = -a y + push, y(0) = x0."""
    t = np.asarray(t, dtype=float)
    return x0 * np.exp(-a * t) + push * (1.0 - np.exp(-a * t)) / a


def constant_control_for_endpoint(x0, a, sigma, nu, T, b):
    """Constant c with Y_T = b for y' = -a y + σ ν (c - 1)."""
    decay = math.exp(-a * T)
    return 1.0 + (b - x0 * decay) * a / (sigma * nu * (1.0 - decay))


def constant_rate_oracle(x0, a, sigma, nu, T, b):
    c = constant_control_for_endpoint(x0, a, sigma, nu, T, b)
    if x0 * math.exp(-a * T) >= b:
        return 0.0
    if c < 0:
        return math.inf
    return T * nu * float(ell_ref(c))


def free_rate_oracle(x0, a, sigma, nu, T, b):
    """min ∫ ν ell(g) subject to Y_T = b over measurable g (Lagrange: log g = λ σ e^{-a(T-s)})."""
    target = b - x0 * math.exp(-a * T)
    if target <= 0:
        return 0.0

    def reach(lam):
        return scipy.integrate.quad(
            lambda s: math.exp(-a * (T - s)) * sigma * nu * (math.exp(lam * sigma * math.exp(-a * (T - s))) - 1.0), 0, T
        )[0]

    lam = scipy.optimize.brentq(lambda L: reach(L) - target, 0.0, 50.0)
    return scipy.integrate.quad(lambda s: nu * float(ell_ref(math.exp(lam * sigma * math.exp(-a * (T - s))))), 0, T)[0]
