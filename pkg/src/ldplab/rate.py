"""Rate function evaluation by entropy-cost minimization.

I(A) = inf { Q(g) : Y^g in A }, with inf over the empty set = +inf.  Controls
are piecewise constant on a coarse time grid; the constraint Y^g in A is
enforced by a quadratic penalty whose weight climbs a fixed ladder, and a
run is declared infeasible when the constraint residual at the top rung is
still above tolerance.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .control import Control, ell, q_cost
from .errors import ConfigurationError
from .skeleton import solve_skeleton

__all__ = [
    "EventSpec",
    "RateOptions",
    "RateEstimate",
    "q_gradient",
    "event_residual",
    "minimize_rate",
    "rate_of_set",
]


def q_gradient(ms, g: Control, *, allow_boundary=False):
    """dQ/dvalues[k, j] = Δτ_k ν_j log(values[k, j])."""
    vals = g.values
    if np.any(vals == 0) and not allow_boundary:
        raise ConfigurationError("q_gradient: zero control entry, derivative of ell is -inf there")
    with np.errstate(divide="ignore"):
        return np.outer(g.durations, ms.nu_weights) * np.log(vals)


_KINDS = ("terminal_threshold", "terminal_point", "trajectory_functional")


@dataclass(frozen=True)
class EventSpec:
    """Target set for the skeleton path.

    * ``terminal_threshold``: payload ``(component, b)``; the event is
      Y_T[component] >= b (``direction="above"``) or <= b (``"below"``).
    * ``terminal_point``: payload is the target vector; the event is Y_T = target.
    * ``trajectory_functional``: payload ``{"functional": "sup"|"mean",
      "component": i, "threshold": b}``; the event is sup_t Y_t[i] >= b or
      the time average of Y_t[i] >= b (``direction`` as above).
    """

    kind: str
    payload: object
    penalty_weight: float = 10.0
    direction: str = "above"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown event kind {self.kind!r}; expected one of {_KINDS}")
        if not self.penalty_weight > 0:
            raise ConfigurationError("penalty_weight must be positive")
        if self.direction not in ("above", "below"):
            raise ConfigurationError("direction must be 'above' or 'below'")
        if self.kind == "terminal_threshold":
            comp, b = self.payload
            if int(comp) != comp or not np.isfinite(b):
                raise ConfigurationError("terminal_threshold payload must be (component index, finite b)")
        elif self.kind == "terminal_point":
            if not np.all(np.isfinite(np.asarray(self.payload, dtype=float))):
                raise ConfigurationError("terminal_point target must be finite")
        else:
            p = dict(self.payload)
            if p.get("functional") not in ("sup", "mean") or "threshold" not in p:
                raise ConfigurationError("trajectory_functional payload needs functional in {sup, mean} and threshold")

    def relaxed(self, b):
        """Same threshold event with a different level b."""
        if self.kind == "terminal_threshold":
            return EventSpec(self.kind, (self.payload[0], b), self.penalty_weight, self.direction)
        if self.kind == "trajectory_functional":
            p = dict(self.payload)
            p["threshold"] = b
            return EventSpec(self.kind, p, self.penalty_weight, self.direction)
        raise ConfigurationError("only threshold-type events have a level")

    def to_dict(self):
        payload = self.payload
        if self.kind == "terminal_point":
            payload = np.asarray(payload, dtype=float).tolist()
        elif self.kind == "terminal_threshold":
            payload = [int(payload[0]), float(payload[1])]
        return {"kind": self.kind, "payload": payload, "penalty_weight": self.penalty_weight, "direction": self.direction}


def _one_sided(value, b, direction):
    return max(0.0, b - value) if direction == "above" else max(0.0, value - b)


def event_residual(event: EventSpec, traj, space):
    """Distance of the path from the event set (0 when the event holds)."""
    if event.kind == "terminal_point":
        return float(space.h_norm(traj.states[-1] - np.asarray(event.payload, dtype=float)))
    if event.kind == "terminal_threshold":
        comp, b = event.payload
        return _one_sided(float(traj.states[-1][int(comp)]), float(b), event.direction)
    p = dict(event.payload)
    comp = int(p.get("component", 0))
    path = traj.states[:, comp]
    if p["functional"] == "sup":
        value = float(np.max(path)) if event.direction == "above" else float(np.min(path))
    else:
        t = traj.time_grid
        value = float(np.sum(0.5 * np.diff(t) * (path[1:] + path[:-1])) / (t[-1] - t[0]))
    return _one_sided(value, float(p["threshold"]), event.direction)


@dataclass
class RateOptions:
    cells: int = 8
    dt: float = None
    ladder: tuple = (10.0, 1e2, 1e3, 1e4)
    tol: float = 1e-3
    floor: float = 1e-8
    max_iter: int = 200
    fp_tol: float = None
    fd_step: float = 1e-6
    round_below: float = 1e-6
    time_grid: np.ndarray = None


@dataclass
class RateEstimate:
    value: float
    minimizer: Control
    constraint_residual: float
    iterations: int
    feasible: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, ms=None):
        return {
            "value": self.value if math.isfinite(self.value) else "inf",
            "feasible": bool(self.feasible),
            "constraint_residual": float(self.constraint_residual),
            "iterations": int(self.iterations),
            "minimizer": self.minimizer.to_dict(ms) if self.minimizer is not None else None,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, ms=None, path=None):
        text = json.dumps(self.to_dict(ms), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def minimize_rate(problem, event: EventSpec, opts: RateOptions = None, *, N_cap=None):
    """Minimize Q(g) + w * residual(Y^g)² over positive piecewise-constant g.

    Uses bounded quasi-Newton (L-BFGS-B, lower bound ``opts.floor``), with the
    gradient of Q exact and the gradient of the penalty by forward
    differences through the skeleton solver.  The weight w runs through
    ``opts.ladder`` starting from ``event.penalty_weight``'s rung, warm
    starting each rung.  Infeasible (residual above ``opts.tol`` at the top
    rung, or value above ``N_cap``) gives value +inf.
    """
    opts = opts or RateOptions()
    ms = problem.ms
    grid = opts.time_grid if opts.time_grid is not None else np.linspace(0.0, problem.T, opts.cells + 1)
    grid = np.asarray(grid, dtype=float)
    shape = (len(grid) - 1, ms.m)
    dt = opts.dt or problem.T * 1e-3
    weights = np.outer(np.diff(grid), ms.nu_weights)
    n_solves = [0]

    def residual_of(x):
        g = Control(grid, x.reshape(shape))
        n_solves[0] += 1
        traj = solve_skeleton(problem, g, dt, opts.fp_tol).trajectory
        return event_residual(event, traj, problem.space)

    def objective(x, w):
        x = np.maximum(x, opts.floor)
        r0 = residual_of(x)
        q = float(np.sum(weights * ell(x)))
        grad_q = weights * np.log(x.reshape(shape))
        grad_p = np.zeros(x.size)
        for i in range(x.size):
            h = opts.fd_step * max(1.0, abs(x[i]))
            xp = x.copy()
            xp[i] += h
            grad_p[i] = (residual_of(xp) ** 2 - r0 ** 2) / h
        return q + w * r0 ** 2, grad_q.reshape(-1) + w * grad_p

    x = np.ones(int(np.prod(shape)))
    ladder = [w for w in opts.ladder if w >= event.penalty_weight] or [opts.ladder[-1]]
    iters = 0
    history = []
    for w in ladder:
        out = scipy.optimize.minimize(
            objective,
            x,
            args=(w,),
            jac=True,
            method="L-BFGS-B",
            bounds=[(opts.floor, None)] * x.size,
            options={"maxiter": opts.max_iter, "ftol": 1e-15, "gtol": 1e-10},
        )
        x = out.x
        iters += int(out.nit)
        r = residual_of(x)
        history.append({"weight": w, "residual": r, "cost": float(np.sum(weights * ell(x))), "nit": int(out.nit)})
    vals = x.reshape(shape).copy()
    resid = residual_of(vals.reshape(-1))
    # entries pinned at the barrier are rounded to 0 if the event still holds
    small = vals <= opts.round_below
    if np.any(small):
        trial = np.where(small, 0.0, vals)
        r_trial = residual_of(trial.reshape(-1))
        if r_trial <= max(resid, opts.tol):
            vals, resid = trial, r_trial
    g = Control(grid, vals)
    value = q_cost(ms, g)
    feasible = resid <= opts.tol
    diag = {"ladder": history, "skeleton_solves": n_solves[0]}
    if N_cap is not None and value > N_cap:
        feasible = False
        diag["exceeds_N_cap"] = float(N_cap)
    if not feasible:
        diag["best_cost"] = value
        value = math.inf
    return RateEstimate(value, g, resid, iters, feasible, diag)


def rate_of_set(problem, event: EventSpec, N_cap=None, opts: RateOptions = None):
    """I(A) for a threshold-type set A (one-sided penalty), searched within
    S^{N_cap} when N_cap is given."""
    if event.kind == "terminal_point":
        raise ConfigurationError("rate_of_set needs a threshold or functional event")
    return minimize_rate(problem, event, opts, N_cap=N_cap)
