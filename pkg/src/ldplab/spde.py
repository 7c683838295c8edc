"""Pathwise simulation of the jump SPDE and its controlled version.

With jump intensity ε⁻¹ψ ν(dz) dt the controlled equation reads

    dX = A(X) dt - Σ_j ν_j f(t, X, z_j) dt + ε f(t, X_{t-}, z) N^{ε⁻¹ψ}(dz, dt),

so the continuous part does not depend on ψ; ψ only changes the jump rate
(ψ ≡ 1 gives the uncontrolled equation).  The scheme is jump-adapted: the
base grid is merged with the realized jump times, each sub-step is
implicit in A and explicit in the compensator, and a jump adds
ε f(t_i, X_{t_i-}, z_i).
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .control import Control, NoiseScale
from .errors import ConfigurationError
from .prm import DEFAULT_JUMP_CAP, RngStream, sample_controlled_prm
from .skeleton import SkeletonProblem, Trajectory, solve_skeleton

__all__ = [
    "SimConfig",
    "BatchResult",
    "simulate",
    "simulate_batch",
    "coupled_simulate",
]


@dataclass(frozen=True, eq=False)
class SimConfig:
    problem: SkeletonProblem
    eps: float
    psi: Control = None
    dt: float = None
    seed: int = 0
    stream_id: int = 0
    cap: float = DEFAULT_JUMP_CAP
    blowup: float = 1e6

    def __post_init__(self):
        eps = self.eps.epsilon if isinstance(self.eps, NoiseScale) else NoiseScale(float(self.eps)).epsilon
        object.__setattr__(self, "eps", eps)
        dt = self.dt if self.dt is not None else self.problem.T * 1e-3
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        object.__setattr__(self, "dt", float(dt))
        if self.psi is not None:
            if self.psi.values.shape[1] != self.problem.ms.m:
                raise ConfigurationError("psi and mark space disagree on the number of marks")
            if abs(self.psi.T - self.problem.T) > 1e-12 * self.problem.T:
                raise ConfigurationError("psi horizon differs from problem horizon")

    @property
    def control(self):
        if self.psi is not None:
            return self.psi
        return Control.constant(1.0, self.problem.T, self.problem.ms.m)

    def jumps(self, stream_id=None):
        sid = self.stream_id if stream_id is None else stream_id
        return sample_controlled_prm(
            self.problem.ms, self.control, self.eps, RngStream(self.seed, sid), cap=self.cap
        )

    def guard(self):
        return self.blowup * max(1.0, float(self.problem.space.h_norm(self.problem.x0)))


def _step(problem, s, x, t_new, h):
    """One jump-free sub-step from time s to t_new = s + h."""
    comp = problem.noise.mix(s, x, problem.ms.nu_weights)
    return problem.drift.implicit_solve(t_new, h, x - h * comp if np.ndim(h) == 0 else x - h[..., None] * comp)


def simulate(cfg: SimConfig):
    """One path; returns a Trajectory on the merged grid with left limits.

    A path that leaves the blow-up ball is returned truncated at the exit
    time with ``trajectory.censored = True``.
    """
    pb = cfg.problem
    base = pb.grid(cfg.dt)
    jumps = cfg.jumps()
    events = [(float(t), 0, -1) for t in base[1:]] + [(float(t), -1, int(j)) for t, j in zip(jumps.times, jumps.marks)]
    # jumps precede a grid point at the same time
    events.sort(key=lambda e: (e[0], e[1]))
    times = [0.0]
    states = [pb.x0.copy()]
    lefts = [pb.x0.copy()]
    x = pb.x0.copy()
    s = 0.0
    limit = cfg.guard()
    censored = False
    for t, kind, j in events:
        if kind == 0 and t == s and times[-1] == t:
            continue
        x = _step(pb, s, x, t, t - s)
        left = x
        if j >= 0:
            x = left + cfg.eps * pb.noise.eval(t, left, j)
        s = t
        times.append(t)
        lefts.append(left)
        states.append(x)
        if not np.all(np.isfinite(x)) or pb.space.h_norm(x) > limit:
            censored = True
            break
    traj = Trajectory(np.array(times), np.array(states), np.array(lefts))
    traj.censored = censored
    traj.jump_count = len(jumps)
    return traj


@dataclass
class BatchResult:
    time_grid: np.ndarray
    final_states: np.ndarray
    jump_counts: np.ndarray
    censored: np.ndarray
    sup_errors: np.ndarray = None
    grid_states: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return len(self.jump_counts)

    @property
    def censored_fraction(self):
        return float(np.mean(self.censored)) if self.n_paths else 0.0

    def summary(self):
        ok = ~self.censored
        out = {
            "n_paths": int(self.n_paths),
            "censored": int(np.sum(self.censored)),
            "mean_jump_count": float(np.mean(self.jump_counts)),
            "final_mean": np.mean(self.final_states[ok], axis=0).tolist(),
            "final_var": np.var(self.final_states[ok], axis=0, ddof=1).tolist() if ok.sum() > 1 else None,
        }
        if self.sup_errors is not None and ok.any():
            e2 = self.sup_errors[ok] ** 2
            out["mean_sup_error_sq"] = float(np.mean(e2))
            out["stderr_sup_error_sq"] = float(np.std(e2, ddof=1) / np.sqrt(len(e2))) if len(e2) > 1 else None
        out.update(self.meta)
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "sup_error", "jump_count", "censored_flag"])
            for p in range(self.n_paths):
                err = "" if self.sup_errors is None else repr(float(self.sup_errors[p]))
                w.writerow([p, err, int(self.jump_counts[p]), int(self.censored[p])])

    def to_json(self, path=None):
        text = json.dumps(self.summary(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def simulate_batch(cfg: SimConfig, n_paths, *, skeleton=None, keep_grid=False, stream_offset=0):
    """Simulate ``n_paths`` independent paths (stream ids offset+0..offset+P-1),
    vectorized across paths.

    Within each base interval, the paths that still have jumps are advanced
    jump by jump in rounds.  If ``skeleton`` (a Trajectory on the same base
    grid) is given, sup_t ||X_t - Y_t||_H is tracked at every grid point,
    left limit and post-jump state, with Y linearly interpolated.
    """
    pb = cfg.problem
    sp = pb.space
    base = pb.grid(cfg.dt)
    M = len(base) - 1
    P = int(n_paths)
    d = sp.dim
    jl = [cfg.jumps(stream_offset + p) for p in range(P)]
    counts = np.array([len(j) for j in jl], dtype=np.int64)
    width = max(1, int(counts.max()) if P else 1) + 1
    jt = np.full((P, width), np.inf)
    jm = np.zeros((P, width), dtype=np.int64)
    for p, j in enumerate(jl):
        jt[p, : len(j)] = j.times
        jm[p, : len(j)] = j.marks
    if skeleton is not None:
        if len(skeleton.time_grid) != M + 1 or not np.allclose(skeleton.time_grid, base):
            raise ConfigurationError("skeleton trajectory must live on the simulation base grid")
        Ys = skeleton.states
    X = np.tile(pb.x0, (P, 1))
    s = np.zeros(P)
    ptr = np.zeros(P, dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    limit = cfg.guard()
    sup = np.zeros(P) if skeleton is not None else None
    grid_states = np.empty((M + 1, P, d)) if keep_grid else None
    if keep_grid:
        grid_states[0] = X
    rows = np.arange(P)

    def track(idx, t, k):
        if sup is None:
            return
        lam = ((t - base[k]) / (base[k + 1] - base[k]))[:, None]
        y = Ys[k] + lam * (Ys[k + 1] - Ys[k])
        sup[idx] = np.maximum(sup[idx], sp.h_norm(X[idx] - y))

    def guard(idx):
        bad = ~np.isfinite(X[idx]).all(axis=1) | (sp.h_norm(np.nan_to_num(X[idx])) > limit)
        if np.any(bad):
            hit = idx[bad]
            alive[hit] = False
            X[hit] = pb.x0

    for k in range(M):
        t_next = base[k + 1]
        while True:
            nxt = jt[rows, ptr]
            idx = np.nonzero(alive & (nxt <= t_next))[0]
            if len(idx) == 0:
                break
            tj = nxt[idx]
            X[idx] = _step(pb, s[idx], X[idx], tj, tj - s[idx])
            track(idx, tj, k)
            marks = jm[idx, ptr[idx]]
            for j in np.unique(marks):
                sel = idx[marks == j]
                X[sel] = X[sel] + cfg.eps * pb.noise.eval(jt[sel, ptr[sel]], X[sel], int(j))
            track(idx, tj, k)
            s[idx] = tj
            ptr[idx] += 1
            guard(idx)
        idx = np.nonzero(alive)[0]
        X[idx] = _step(pb, s[idx], X[idx], np.full(len(idx), t_next), t_next - s[idx])
        s[idx] = t_next
        track(idx, np.full(len(idx), t_next), k)
        guard(idx)
        if keep_grid:
            grid_states[k + 1] = X
    censored = ~alive
    if sup is not None:
        sup = np.where(censored, np.nan, sup)
    return BatchResult(base, X.copy(), counts, censored, sup, grid_states, {"eps": cfg.eps, "dt": cfg.dt})


def coupled_simulate(cfg: SimConfig, g: Control = None, *, fp_tol=None):
    """Simulate X^ψ for one path and solve the skeleton Y^ψ on the same grid.

    Returns ``(X, Y, sup_error)`` with sup_t ||X_t - Y_t||_H over grid points,
    left limits and post-jump states.
    """
    g = cfg.control if g is None else g
    Y = solve_skeleton(cfg.problem, g, cfg.dt, fp_tol).trajectory
    X = simulate(cfg)
    sp = cfg.problem.space
    y = Y.interpolate(X.time_grid)
    err = max(float(np.max(sp.h_norm(X.states - y))), float(np.max(sp.h_norm(X.left_limits - y))))
    return X, Y, err
