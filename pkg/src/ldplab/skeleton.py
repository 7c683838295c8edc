"""Skeleton equation solver.

Solves

    Y_t = x + ∫_0^t A(s, Y_s) ds + ∫_0^t Σ_j ν_j f(s, Y_s, z_j) (g(s, z_j) - 1) ds

by the constructive route: for a frozen input path J the inner problem
``dZ = A(Z) dt + Σ_j ν_j f(J, z_j)(g - 1) dt`` is a plain monotone evolution
(solved semi-implicitly); the map J -> Z^J is a contraction on short
windows, which are chained to cover [0, T].
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .control import Control, MarkSpace, entropy_ball_sup
from .errors import ConfigurationError, NumericalError
from .operators import DriftOperator, NoiseCoefficient
from .spaces import GalerkinSpace

__all__ = [
    "SkeletonProblem",
    "Trajectory",
    "SkeletonResult",
    "control_drift",
    "solve_inner",
    "contraction_window",
    "solve_skeleton",
    "drift_only",
    "apriori_bound",
    "energy",
]

RATIO_LIMIT = 0.55


@dataclass(frozen=True, eq=False)
class SkeletonProblem:
    space: GalerkinSpace
    drift: DriftOperator
    noise: NoiseCoefficient
    ms: MarkSpace
    x0: np.ndarray
    T: float

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1) if np.ndim(self.x0) else np.full(self.space.dim, float(self.x0))
        if x0.shape != (self.space.dim,):
            raise ConfigurationError(f"x0 must have length {self.space.dim}")
        if not np.all(np.isfinite(x0)):
            raise ConfigurationError("x0 must be finite")
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if self.noise.n_marks != self.ms.m:
            raise ConfigurationError(f"noise has {self.noise.n_marks} marks, mark space has {self.ms.m}")
        if self.drift.space is not self.space or self.noise.space is not self.space:
            if self.drift.space.dim != self.space.dim or self.noise.space.dim != self.space.dim:
                raise ConfigurationError("drift, noise and problem must share the Galerkin space")
        object.__setattr__(self, "x0", x0)

    def grid(self, dt):
        n = max(1, int(round(self.T / dt)))
        return np.linspace(0.0, self.T, n + 1)


@dataclass(eq=False)
class Trajectory:
    time_grid: np.ndarray
    states: np.ndarray
    left_limits: np.ndarray = None

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[0] != len(self.time_grid):
            raise ConfigurationError("states and time_grid lengths differ")

    def __len__(self):
        return len(self.time_grid)

    @property
    def final(self):
        return self.states[-1]

    def interpolate(self, t):
        """Piecewise-linear interpolation in time (use for continuous paths)."""
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.interp(t, self.time_grid, self.states[:, i]) for i in range(self.states.shape[1])], axis=-1
        )

    def sup_distance(self, other, space):
        """sup_t ||self - other||_H on the union of both grids (linear interpolation)."""
        ts = np.union1d(self.time_grid, other.time_grid)
        return float(np.max(space.h_norm(self.interpolate(ts) - other.interpolate(ts))))

    def to_csv(self, path):
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(d)])
            for t, row in zip(self.time_grid, self.states):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])

    def to_dict(self):
        out = {"time_grid": self.time_grid.tolist(), "states": self.states.tolist()}
        if self.left_limits is not None:
            out["left_limits"] = self.left_limits.tolist()
        return out

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class SkeletonResult:
    trajectory: Trajectory
    windows: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    energy: float = 0.0
    residual: float = 0.0

    @property
    def max_ratio(self):
        flat = [r for rs in self.ratios for r in rs]
        return max(flat) if flat else 0.0

    @property
    def max_iterations(self):
        return max(self.iterations) if self.iterations else 0

    def diagnostics(self):
        return {
            "windows": [list(map(float, w)) for w in self.windows],
            "iterations": list(self.iterations),
            "contraction_ratios": [list(map(float, r)) for r in self.ratios],
            "max_ratio": float(self.max_ratio),
            "energy": float(self.energy),
            "residual": float(self.residual),
        }


def _mix_weights(problem, g, times):
    """ν_j (g(t, z_j) - 1) for each time, shape (len(times), m)."""
    return problem.ms.nu_weights * (g.at(times) - 1.0)


def control_drift(problem, g: Control, t, v):
    """Σ_j ν_j f(t, v, z_j)(g(t, z_j) - 1)."""
    w = problem.ms.nu_weights * (g.at(t) - 1.0)
    return problem.noise.mix(t, v, w)


def _weighted_table(problem, g, times, table_fn):
    tab = table_fn(times)
    return np.sum(problem.ms.nu_weights * tab * np.abs(g.at(times) - 1.0), axis=-1)


def _march(drift, times, z0, forcing):
    """Z_{n+1} = Z_n + dt A(t_{n+1}, Z_{n+1}) + dt forcing_n, n = 0..len(times)-2.

    ``z0`` has shape (..., d) and ``forcing`` (len(times)-1, ..., d).
    """
    dts = np.diff(times)
    n = len(dts)
    out = np.empty((n + 1,) + np.shape(z0))
    out[0] = z0
    if n == 0:
        return out
    L = drift.linear_matrix
    uniform = np.allclose(dts, dts[0], rtol=1e-12, atol=0)
    if L is not None and uniform:
        dt = dts[0]
        d = L.shape[0]
        if d == 1 or np.count_nonzero(L - np.diag(np.diag(L))) == 0:
            r = 1.0 / (1.0 - dt * np.diag(L))
            out[1:] = _diag_recurrence(r, r * dt * forcing, np.asarray(z0, dtype=float))
            return out
        M = np.linalg.inv(np.eye(d) - dt * L)
        z = np.asarray(z0, dtype=float)
        for k in range(n):
            z = (z + dt * forcing[k]) @ M.T
            out[k + 1] = z
        return out
    z = np.asarray(z0, dtype=float)
    for k in range(n):
        z = drift.implicit_solve(times[k + 1], dts[k], z + dts[k] * forcing[k])
        out[k + 1] = z
    return out


def _diag_recurrence(r, u, z0):
    """y_{n+1} = r * y_n + u_n with y_0 = z0, returns y_1..y_n (componentwise r)."""
    r = np.broadcast_to(r, z0.shape).reshape(-1)
    flat_u = u.reshape(u.shape[0], -1)
    flat_z = z0.reshape(-1)
    if np.all(r == r[0]):
        res, _ = scipy.signal.lfilter([1.0], [1.0, -r[0]], flat_u, axis=0, zi=(r[0] * flat_z)[None])
        return res.reshape(u.shape)
    res = np.empty_like(flat_u)
    for c in range(flat_u.shape[1]):
        res[:, c], _ = scipy.signal.lfilter([1.0], [1.0, -r[c]], flat_u[:, c], zi=[r[c] * flat_z[c]])
    return res.reshape(u.shape)


def solve_inner(problem, J: Trajectory, g: Control, window=None, dt=None, *, z0=None):
    """The map J -> Z^J on a window [a, b] of J's time grid.

    The control term is evaluated with the frozen path J at the left end of
    each step; the drift is implicit.  ``z0`` defaults to J(a).
    """
    times = J.time_grid
    if window is not None:
        a, b = window
        sel = (times >= a - 1e-12) & (times <= b + 1e-12)
        times = times[sel]
        jstates = J.states[sel]
    else:
        jstates = J.states
    if dt is not None and not np.allclose(np.diff(times), dt, rtol=1e-9):
        raise ConfigurationError("dt must match the spacing of J's time grid on the window")
    start = jstates[0] if z0 is None else np.asarray(z0, dtype=float)
    forcing = problem.noise.mix(times[:-1], jstates[:-1], _mix_weights(problem, g, times[:-1]))
    return Trajectory(times, _march(problem.drift, times, start, forcing))


def drift_only(problem, dt, x0=None):
    times = problem.grid(dt)
    x0 = problem.x0 if x0 is None else x0
    forcing = np.zeros((len(times) - 1,) + np.shape(x0))
    return Trajectory(times, _march(problem.drift, times, x0, forcing))


def contraction_window(problem, g, start, *, times, provisional=None, M_bound=None, limit=0.5):
    """End index of the window starting at grid index ``start``.

    Largest grid index b with ∫_a^b G_f · exp(∫_a^b F + ρ(Y) + G_f) <= 1/2,
    where G_f(s) = Σ_j ν_j G_f(s, z_j)|g(s, z_j) - 1| and ρ is evaluated on
    the ``provisional`` states (rows aligned with ``times``).  If ``M_bound``
    is given the window must also keep Picard iterates in the ball of
    radius M = max(M_bound, 4(1 + ||Y_a||²)).

    When G_f vanishes on the rest of the horizon the map J -> Z^J is
    constant and the whole remainder is returned.
    """
    n = len(times) - 1
    if start >= n:
        raise ConfigurationError("window start at or beyond the horizon")
    ts = times[start:-1]
    dts = np.diff(times[start:])
    G = _weighted_table(problem, g, ts, problem.noise.g_f_table)
    if not np.any(G > 0):
        return n
    F = np.asarray(problem.drift.F(ts), dtype=float) * np.ones_like(ts)
    rho = problem.drift.rho(provisional[start:-1]) if provisional is not None else 0.0
    IG = np.cumsum(G * dts)
    IFr = np.cumsum((F + rho) * dts)
    ok = IG * np.exp(np.minimum(IFr + IG, 700.0)) <= limit
    if M_bound is not None:
        x2 = float(problem.space.h_norm(provisional[start]) ** 2) if provisional is not None else 0.0
        M = max(M_bound, 4.0 * (1.0 + x2))
        Lw = _weighted_table(problem, g, ts, problem.noise.l_f_table)
        IL = 2.0 * (1.0 + M) * np.cumsum(Lw * dts)
        IF = np.cumsum(F * dts)
        ok &= (x2 + IF + IL) * np.exp(np.minimum(IF + IL, 700.0)) <= M
    # the window is the leading run of satisfied indices
    bad = np.nonzero(~ok)[0]
    steps = len(ok) if len(bad) == 0 else int(bad[0])
    if steps < 1:
        raise ConfigurationError(
            f"contraction window at t={times[start]:.6g} is shorter than one step; "
            "use a finer time grid or a control with smaller cost"
        )
    return start + steps


def energy(space, drift, traj: Trajectory):
    """sup_t ||Y_t||_H² + θ Σ dt ||Y_t||_V^α (right-endpoint sum)."""
    dts = np.diff(traj.time_grid)
    vn = space.v_norm(traj.states[1:]) ** drift.alpha
    return float(np.max(space.h_norm(traj.states) ** 2) + drift.theta * np.sum(dts * vn))


def _residual(problem, g, traj):
    """max_n ||Y_n - x - ∫_0^{t_n} (A(Y) + control term)|| with trapezoid quadrature; O(dt)."""
    t = traj.time_grid
    Y = traj.states
    rhs = problem.drift.vector_field(t, Y) + problem.noise.mix(t, Y, _mix_weights(problem, g, t))
    dts = np.diff(t)
    integral = np.concatenate([np.zeros((1, Y.shape[1])), np.cumsum(0.5 * dts[:, None] * (rhs[1:] + rhs[:-1]), axis=0)])
    return float(np.max(problem.space.h_norm(Y - problem.x0 - integral)))


def solve_skeleton(problem, g: Control, dt=None, fp_tol=None, max_iters=40, *, initial_guess=None, M_bound=None):
    """Solve the skeleton equation for control g on a uniform grid of step dt.

    Picard iteration on each contraction window starts from the window's
    initial state held constant (or from ``initial_guess`` restricted to the
    window).  A window whose measured contraction ratio exceeds 0.55 is
    halved and redone.
    """
    if g.values.shape[1] != problem.ms.m:
        raise ConfigurationError("control and mark space disagree on the number of marks")
    if abs(g.T - problem.T) > 1e-12 * problem.T:
        raise ConfigurationError(f"control horizon {g.T} differs from problem horizon {problem.T}")
    dt = dt or problem.T * 1e-3
    if fp_tol is None:
        fp_tol = 1e-10 if problem.space.dim == 1 else 1e-8
    if not dt > 0 or not fp_tol > 0:
        raise ConfigurationError("dt and fp_tol must be positive")
    times = problem.grid(dt)
    n = len(times) - 1
    d = problem.space.dim
    states = np.empty((n + 1, d))
    states[0] = problem.x0
    sp = problem.space
    guess = None
    if initial_guess is not None:
        guess = initial_guess.interpolate(times) if isinstance(initial_guess, Trajectory) else np.asarray(initial_guess)
    # provisional path for the ρ factor of the window rule: one inner solve from J ≡ x
    if problem.drift.rho(problem.x0[None]).any() or problem.drift._rho is not None:
        J0 = Trajectory(times, np.broadcast_to(problem.x0, (n + 1, d)))
        provisional = solve_inner(problem, J0, g).states
    else:
        provisional = None
    G_all = _weighted_table(problem, g, times[:-1], problem.noise.g_f_table)
    res = SkeletonResult(Trajectory(times, states))
    start = 0
    while start < n:
        end = contraction_window(problem, g, start, times=times, provisional=provisional, M_bound=M_bound)
        while True:
            wt = times[start : end + 1]
            y0 = states[start]
            passive = not np.any(G_all[start:end] > 0)
            J = np.broadcast_to(y0, (len(wt), d)).copy() if guess is None else guess[start : end + 1].copy()
            J[0] = y0
            weights = _mix_weights(problem, g, wt[:-1])
            ratios = []
            prev = None
            it = 0
            converged = False
            while it < max_iters:
                it += 1
                forcing = problem.noise.mix(wt[:-1], J[:-1], weights)
                Z = _march(problem.drift, wt, y0, forcing)
                if not np.all(np.isfinite(Z)):
                    raise NumericalError("non-finite state in skeleton solve", {"t": float(wt[0]), "iteration": it})
                diff = float(np.max(sp.h_norm(Z - J)))
                J = Z
                if passive:
                    converged = True
                    break
                floor = 1e-13 * (1.0 + float(np.max(sp.h_norm(Z))))
                if prev is not None and prev > floor:
                    ratios.append(diff / prev)
                prev = diff
                if diff <= fp_tol:
                    converged = True
                    break
            bad_ratio = any(r > RATIO_LIMIT for r in ratios)
            if converged and not bad_ratio:
                break
            if end - start <= 1:
                if not converged:
                    raise NumericalError(
                        "Picard iteration did not converge",
                        {"t": float(wt[0]), "iterations": it, "last_change": prev, "ratios": ratios},
                    )
                break
            end = start + (end - start) // 2
        states[start : end + 1] = J
        res.windows.append((float(times[start]), float(times[end])))
        res.iterations.append(it)
        res.ratios.append(ratios)
        start = end
    res.trajectory = Trajectory(times, states)
    res.energy = energy(sp, problem.drift, res.trajectory)
    res.residual = _residual(problem, g, res.trajectory)
    return res


def apriori_bound(problem, N, *, cells=256):
    """C_N = (||x||² + ∫F + 4S) exp(∫F + 4S), with S the largest value of
    ∫∫ L_f(s, z)|g - 1| ν(dz) ds over piecewise-constant g with Q(g) <= N."""
    grid = np.linspace(0.0, problem.T, cells + 1)
    mids = 0.5 * (grid[1:] + grid[:-1])
    chi = problem.noise.l_f_table(mids)
    if np.any(chi > 0):
        S = entropy_ball_sup(problem.ms, chi, N, "abs_dev", time_grid=grid).value
    else:
        S = 0.0
    IF = problem.drift.integral_F(0.0, problem.T)
    x2 = float(problem.space.h_norm(problem.x0) ** 2)
    return (x2 + IF + 4.0 * S) * np.exp(IF + 4.0 * S)
