"""Randomized audits of the standing hypotheses on drift and jump coefficient.

Each checker evaluates both sides of one inequality on a batch of samples and
returns an :class:`AuditReport` with the worst normalized margin
``(rhs + tol - lhs) / scale`` and the sample that attains it.  A negative
margin means the inequality failed.  These are statistical audits: passing
them is evidence, not proof.

Audits covered:

* hemicontinuity:       s -> <A(v1 + s v2), v> continuous
* local_monotonicity:   2<A v1 - A v2, v1 - v2> <= (F + rho(v2)) |v1 - v2|_H^2
* coercivity:           2<A v, v> + theta |v|_V^alpha <= F (1 + |v|_H^2)
* growth:               |A v|_{V*}^{alpha/(alpha-1)} <= (F + C |v|_V^alpha)(1 + |v|_H^beta)
* rho_growth:           rho(v) <= C (1 + |v|_V^alpha)(1 + |v|_H^beta)
* noise_growth:         |f(v, z)|_H <= L_f (1 + |v|_H)
* noise_lipschitz:      |f(v1, z) - f(v2, z)|_H <= G_f |v1 - v2|_H
* f_integrable:         int_0^T F dt finite
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "AuditReport",
    "random_states",
    "check_hemicontinuity",
    "check_local_monotonicity",
    "check_coercivity",
    "check_growth",
    "check_rho_growth",
    "check_noise_growth",
    "check_noise_lipschitz",
    "check_f_integrable",
    "audit_all",
]

REL_TOL = 1e-9


@dataclass
class AuditReport:
    name: str
    passed: bool
    worst_margin: float
    witness: dict = None
    n_samples: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "n_samples": int(self.n_samples),
            "witness": self.witness,
            "details": self.details,
        }

    def line(self):
        return f"{self.name:20s} {'PASS' if self.passed else 'FAIL'}  worst margin {self.worst_margin:+.3e}  ({self.n_samples} samples)"


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def random_states(space, n, rng=None, *, log_scale=(-3.0, 2.0)):
    """Random states mixing white noise and smooth low-mode fields.

    Amplitudes are log-uniform over ``10**log_scale`` in H-norm so that both
    small and large states are probed.
    """
    rng = _rng(rng)
    d = space.dim
    white = rng.standard_normal((n, d))
    if d > 2:
        x = np.arange(d) / d
        modes = rng.integers(1, min(4, d // 2) + 1, size=(n, 3))
        phases = rng.uniform(0, 2 * np.pi, size=(n, 3))
        amps = rng.standard_normal((n, 3))
        smooth = np.sum(amps[:, :, None] * np.sin(2 * np.pi * modes[:, :, None] * x + phases[:, :, None]), axis=1)
        smooth += rng.standard_normal((n, 1))
        pick = rng.random(n) < 0.5
        raw = np.where(pick[:, None], white, smooth)
    else:
        raw = white
    norms = space.h_norm(raw)
    norms = np.where(norms > 0, norms, 1.0)
    mags = 10.0 ** rng.uniform(log_scale[0], log_scale[1], size=n)
    return raw / norms[:, None] * mags[:, None]


def _report(name, lhs, rhs, witness_fn, n, details=None):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    margin = (rhs + REL_TOL * scale - lhs) / scale
    bad = ~np.isfinite(margin)
    margin = np.where(bad, -np.inf, margin)
    k = int(np.argmin(margin))
    worst = float(margin[k])
    passed = bool(worst >= 0)
    witness = witness_fn(k)
    witness.update({"lhs": float(lhs[k]), "rhs": float(rhs[k])})
    return AuditReport(name, passed, worst, witness, n, details or {})


def _times(rng, n, T):
    return rng.uniform(0.0, T, size=n)


def _pair(drift, t, v, w):
    """<A(t_i, v_i), w_i> row by row."""
    return drift.space.dual_pairing(_dual_at(drift, np.atleast_1d(t), v), w)


def _time_independent(drift):
    return getattr(drift, "name", "") in ("scalar_linear", "p_laplace", "burgers")


def _dual_at(drift, t, v):
    if _time_independent(drift) or np.all(t == t[0]):
        return drift._dual(float(t[0]), v)
    return np.stack([drift._dual(float(ti), vi[None])[0] for ti, vi in zip(t, v)])


def _noise_at(noise, t, v, j):
    if getattr(noise, "name", "") in ("affine", "sine"):
        return noise.eval(float(t[0]), v, j)
    return np.stack([noise.eval(ti, vi, j) for ti, vi in zip(t, v)])


def _F(drift, t):
    return np.asarray(drift.F(t), dtype=float) * np.ones_like(t)


def check_hemicontinuity(drift, t, v1, v2, v, s_grid=None, *, levels=6, abs_tol=1e-10):
    """Midpoint oscillation of s -> <A(t, v1 + s v2), v> under dyadic refinement.

    Oscillation at a level is ``max |phi(mid) - (phi(a) + phi(b)) / 2|`` over
    consecutive grid points.  It is 0 for affine maps, shrinks for continuous
    ones, and stays at half the jump size across a discontinuity.  The
    sample is flagged when the finest level is above ``abs_tol`` (scaled)
    and did not shrink below half the coarsest level.

    ``v1, v2, v`` may be batches; the report covers all rows.
    """
    v1, v2, v = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (v1, v2, v))
    if s_grid is None:
        s_lo, s_hi = -1.0, 1.0
    else:
        s_lo, s_hi = float(np.min(s_grid)), float(np.max(s_grid))
    osc = []
    scale = None
    for lev in range(1, levels + 1):
        s = np.linspace(s_lo, s_hi, 2 ** lev + 1)
        mids = 0.5 * (s[1:] + s[:-1])
        pts = np.concatenate([s, mids])
        states = v1[:, None, :] + pts[None, :, None] * v2[:, None, :]
        phi = np.stack([_pair(drift, t, states[:, i], v) for i in range(len(pts))], axis=1)
        ends, mid = phi[:, : len(s)], phi[:, len(s):]
        o = np.max(np.abs(mid - 0.5 * (ends[:, 1:] + ends[:, :-1])), axis=1)
        osc.append(o)
        if scale is None:
            scale = np.maximum(1.0, np.max(np.abs(phi), axis=1))
    osc = np.array(osc)  # levels × samples
    tol = abs_tol + REL_TOL * scale
    ok = (osc[-1] <= tol) | (osc[-1] <= 0.5 * osc[0])
    # margin: positive when fine oscillation is below max(tol, half the coarse one)
    bound = np.maximum(tol, 0.5 * osc[0])
    margin = (bound - osc[-1]) / scale
    k = int(np.argmin(margin))
    return AuditReport(
        "hemicontinuity",
        bool(np.all(ok)),
        float(margin[k]),
        {"index": k, "oscillation_by_level": osc[:, k].tolist()},
        v1.shape[0],
        {"levels": levels, "max_final_oscillation": float(np.max(osc[-1]))},
    )


def check_local_monotonicity(drift, t, v1, v2):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v1 = np.atleast_2d(v1)
    v2 = np.atleast_2d(v2)
    diff = v1 - v2
    lhs = 2.0 * drift.space.dual_pairing(_dual_at(drift, t, v1) - _dual_at(drift, t, v2), diff)
    rhs = (_F(drift, t) + drift.rho(v2)) * drift.space.h_norm(diff) ** 2
    return _report("local_monotonicity", lhs, rhs, lambda k: {"index": k, "t": float(t[k])}, len(lhs))


def check_coercivity(drift, t, v):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v = np.atleast_2d(v)
    sp = drift.space
    lhs = 2.0 * sp.dual_pairing(_dual_at(drift, t, v), v) + drift.theta * sp.v_norm(v) ** drift.alpha
    rhs = _F(drift, t) * (1.0 + sp.h_norm(v) ** 2)
    return _report("coercivity", lhs, rhs, lambda k: {"index": k, "t": float(t[k])}, len(lhs))


def check_growth(drift, t, v):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v = np.atleast_2d(v)
    sp = drift.space
    a = drift.alpha
    lhs = sp.dual_norm(_dual_at(drift, t, v)) ** (a / (a - 1.0))
    rhs = (_F(drift, t) + drift.c_growth * sp.v_norm(v) ** a) * (1.0 + sp.h_norm(v) ** drift.beta)
    return _report("growth", lhs, rhs, lambda k: {"index": k, "t": float(t[k])}, len(lhs))


def check_rho_growth(drift, v):
    v = np.atleast_2d(v)
    sp = drift.space
    lhs = drift.rho(v)
    rhs = drift.c_growth * (1.0 + sp.v_norm(v) ** drift.alpha) * (1.0 + sp.h_norm(v) ** drift.beta)
    neg = np.min(lhs) < 0
    rep = _report("rho_growth", lhs, rhs, lambda k: {"index": k}, len(lhs))
    if neg:
        rep.passed = False
        rep.details["negative_rho"] = True
    return rep


def check_noise_growth(noise, t, v, marks):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v = np.atleast_2d(v)
    sp = noise.space
    lhs = np.empty(len(t))
    rhs = np.empty(len(t))
    for j in range(noise.n_marks):
        sel = marks == j
        if not np.any(sel):
            continue
        vals = _noise_at(noise, t[sel], v[sel], j)
        lhs[sel] = sp.h_norm(vals)
        rhs[sel] = np.array([noise.l_f(ti, j) for ti in t[sel]]) * (1.0 + sp.h_norm(v[sel]))
    return _report(
        "noise_growth", lhs, rhs, lambda k: {"index": k, "t": float(t[k]), "mark": int(marks[k])}, len(lhs)
    )


def check_noise_lipschitz(noise, t, v1, v2, marks):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v1 = np.atleast_2d(v1)
    v2 = np.atleast_2d(v2)
    sp = noise.space
    lhs = np.empty(len(t))
    rhs = np.empty(len(t))
    for j in range(noise.n_marks):
        sel = marks == j
        if not np.any(sel):
            continue
        f1 = _noise_at(noise, t[sel], v1[sel], j)
        f2 = _noise_at(noise, t[sel], v2[sel], j)
        lhs[sel] = sp.h_norm(f1 - f2)
        rhs[sel] = np.array([noise.g_f(ti, j) for ti in t[sel]]) * sp.h_norm(v1[sel] - v2[sel])

    def witness(k):
        return {
            "index": k,
            "t": float(t[k]),
            "mark": int(marks[k]),
            "v1": v1[k].tolist(),
            "v2": v2[k].tolist(),
        }

    return _report("noise_lipschitz", lhs, rhs, witness, len(lhs))


def check_f_integrable(drift, T):
    value = drift.integral_F(0.0, T)
    ok = bool(np.isfinite(value)) and value >= 0
    return AuditReport("f_integrable", ok, 1.0 if ok else -np.inf, {"integral": float(value)}, 1)


def audit_all(drift, noise=None, *, T=1.0, n_samples=10_000, seed=0, hemi_samples=64):
    """Run every audit; returns the list of reports in a fixed order."""
    if n_samples < 1:
        raise ConfigurationError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    sp = drift.space
    n = int(n_samples)
    t = _times(rng, n, T)
    v = random_states(sp, n, rng)
    v2 = random_states(sp, n, rng)
    # mix far pairs with near pairs so small differences are probed too
    near = rng.random(n) < 0.5
    pert = random_states(sp, n, rng, log_scale=(-6.0, -1.0))
    v1 = np.where(near[:, None], v2 + pert, v)
    reports = []
    nh = min(hemi_samples, n)
    th = np.full(nh, t[0]) if _time_independent(drift) else t[:nh]
    reports.append(
        check_hemicontinuity(drift, th, v[:nh], random_states(sp, nh, rng, log_scale=(-1, 0)), v2[:nh])
    )
    reports.append(check_local_monotonicity(drift, t, v1, v2))
    reports.append(check_coercivity(drift, t, v))
    reports.append(check_growth(drift, t, v))
    reports.append(check_rho_growth(drift, v))
    reports.append(check_f_integrable(drift, T))
    if noise is not None:
        marks = rng.integers(0, noise.n_marks, size=n)
        reports.append(check_noise_growth(noise, t, v, marks))
        reports.append(check_noise_lipschitz(noise, t, v1, v2, marks))
    return reports
