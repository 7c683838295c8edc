"""Mark space, piecewise-constant controls and the entropy cost.

The mark space is a finite atomic measure ν = Σ_j ν_j δ_{z_j}; a control is
a nonnegative K×m table of values that are constant on
``[τ_k, τ_{k+1}) × {z_j}``.  All integrals against ν_T = Leb ⊗ ν are then
finite sums and are computed exactly.
"""
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import ConfigurationError, NumericalError

__all__ = [
    "MarkSpace",
    "Control",
    "NoiseScale",
    "ell",
    "q_cost",
    "in_level_set",
    "entropy_ball_sup",
    "EntropyBallResult",
    "product_entropy_bound_check",
    "embedding_witness",
    "weak_test_integrals",
]


@dataclass(frozen=True, eq=False)
class MarkSpace:
    marks: np.ndarray
    nu_weights: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        weights = np.atleast_1d(np.asarray(self.nu_weights, dtype=float))
        if marks.shape[0] != weights.shape[0]:
            raise ConfigurationError("marks and nu_weights must have the same length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ConfigurationError("nu_weights must be finite and nonnegative")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "nu_weights", weights)

    @property
    def m(self):
        return len(self.nu_weights)

    @property
    def total_mass(self):
        return float(self.nu_weights.sum())

    def to_dict(self):
        return {"marks": self.marks.tolist(), "nu_weights": self.nu_weights.tolist()}


@dataclass(frozen=True)
class NoiseScale:
    epsilon: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant g(t, z_j) = values[k, j] on [τ_k, τ_{k+1})."""

    time_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ConfigurationError("time_grid must start at 0 and increase strictly")
        if values.shape[0] != len(grid) - 1:
            raise ConfigurationError(f"values need {len(grid) - 1} rows, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("control values must be finite")
        if np.any(values < 0):
            raise ConfigurationError("control values must be nonnegative")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, c, T, m=1, cells=1):
        return cls(np.linspace(0.0, T, cells + 1), np.full((cells, m), float(c)))

    @classmethod
    def from_function(cls, fn, T, m=1, cells=64):
        """Cell averages of ``fn(t, j)`` by 8-point Gauss-Legendre quadrature per cell."""
        grid = np.linspace(0.0, T, cells + 1)
        nodes, wts = np.polynomial.legendre.leggauss(8)
        values = np.empty((cells, m))
        for k in range(cells):
            a, b = grid[k], grid[k + 1]
            ts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            for j in range(m):
                values[k, j] = 0.5 * np.sum(wts * np.asarray(fn(ts, j), dtype=float))
        return cls(grid, values)

    @property
    def T(self):
        return float(self.time_grid[-1])

    @property
    def shape(self):
        return self.values.shape

    @property
    def durations(self):
        return np.diff(self.time_grid)

    def cell_index(self, t):
        k = np.searchsorted(self.time_grid, t, side="right") - 1
        return np.clip(k, 0, len(self.time_grid) - 2)

    def at(self, t):
        """Row g(t, ·); for an array of times returns one row per time."""
        return self.values[self.cell_index(t)]

    def with_values(self, values):
        return Control(self.time_grid, values)

    def to_dict(self, ms=None):
        out = {"time_grid": self.time_grid.tolist(), "values": self.values.tolist()}
        if ms is not None:
            out.update(ms.to_dict())
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(data["time_grid"], data["values"])

    def to_json(self, ms, path=None):
        text = json.dumps(self.to_dict(ms), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path):
        try:
            data = json.loads(text_or_path)
        except json.JSONDecodeError:
            with open(text_or_path) as fh:
                data = json.load(fh)
        ms = None
        if "nu_weights" in data:
            ms = MarkSpace(data.get("marks", list(range(len(data["nu_weights"])))), data["nu_weights"])
        return cls.from_dict(data), ms


def ell(x):
    """Entropy integrand x log x - x + 1 with ell(0) = 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ConfigurationError("ell is defined on [0, inf) only")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)) - x + 1.0, 1.0)
    return out if out.ndim else float(out)


def _cell_weights(ms, g):
    if g.values.shape[1] != ms.m:
        raise ConfigurationError(f"control has {g.values.shape[1]} mark columns, mark space has {ms.m}")
    return np.outer(g.durations, ms.nu_weights)


def q_cost(ms, g):
    """Q(g) = Σ_{k,j} (τ_{k+1} - τ_k) ν_j ell(g_kj); exact for piecewise-constant g."""
    return float(np.sum(_cell_weights(ms, g) * ell(g.values)))


def in_level_set(ms, g, N):
    return q_cost(ms, g) <= N


@dataclass
class EntropyBallResult:
    value: float
    maximizer: np.ndarray
    multiplier: float
    constraint: float
    iterations: int

    def __float__(self):
        return self.value


def _dual_maximizer(a, lam, mode):
    """Pointwise argmax over h >= 0 of a-weighted gain minus lam * ell(h)."""
    y = np.clip(a / lam, -700.0, 700.0)
    if mode == "weighted_l2":
        return np.exp(y)
    up = np.exp(y)
    down = np.exp(-y)
    # gain branches: a(h-1) for h >= 1 and a(1-h) for h <= 1
    up_val = lam * (up - 1.0) - a
    down_val = lam * (down - 1.0) + a
    return np.where(up_val >= down_val, up, down)


def entropy_ball_sup(ms, chi, N, mode="weighted_l2", *, time_grid=None, max_iter=200):
    """Supremum over piecewise-constant h with Q(h) <= N of

    * ``weighted_l2``: Σ w χ² (h + 1)
    * ``abs_dev``:     Σ w χ |h - 1|

    with cell weights w = Δτ ν_j.  ``chi`` is a K×m table, a callable
    ``chi(t, j)`` evaluated at cell midpoints of ``time_grid``, or a
    :class:`Control` (its table and grid are used).

    The maximizer has the form h = exp(a / λ) (``abs_dev`` also checks the
    branch h = exp(-a / λ)), with a = χ² or χ; λ is located by bisection in
    log scale so that the entropy constraint binds.
    """
    if isinstance(chi, Control):
        time_grid, table = chi.time_grid, chi.values
    elif callable(chi):
        if time_grid is None:
            raise ConfigurationError("time_grid is required when chi is a callable")
        time_grid = np.asarray(time_grid, dtype=float)
        mids = 0.5 * (time_grid[1:] + time_grid[:-1])
        table = np.array([[float(chi(t, j)) for j in range(ms.m)] for t in mids])
    else:
        table = np.asarray(chi, dtype=float)
        if time_grid is None:
            raise ConfigurationError("time_grid is required with a tabulated chi")
        time_grid = np.asarray(time_grid, dtype=float)
    if mode not in ("weighted_l2", "abs_dev"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if N <= 0:
        raise ConfigurationError("entropy budget N must be positive")
    w = np.outer(np.diff(time_grid), ms.nu_weights)
    if table.shape != w.shape:
        raise ConfigurationError(f"chi table shape {table.shape} does not match grid {w.shape}")
    a = table ** 2 if mode == "weighted_l2" else table
    active = (w > 0) & (a != 0)
    if not np.any(active):
        h = np.ones_like(w)
        value = float(np.sum(w * a * 2.0)) if mode == "weighted_l2" else 0.0
        return EntropyBallResult(value, h, 0.0, 0.0, 0)

    def spent(lam):
        return float(np.sum(w * ell(_dual_maximizer(a, lam, mode))))

    scale = float(np.max(np.abs(a[active])))
    lo, hi = math.log(1e-8 * scale), math.log(1e8 * scale)
    if spent(math.exp(hi)) > N:
        raise NumericalError("entropy_ball_sup: multiplier bracket too small", {"scale": scale, "N": N})
    if spent(math.exp(lo)) < N:
        raise NumericalError("entropy_ball_sup: constraint cannot bind in bracket", {"scale": scale, "N": N})
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if spent(math.exp(mid)) > N:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    lam = math.exp(hi)
    h = _dual_maximizer(a, lam, mode)
    h = np.where(active, h, 1.0)
    if mode == "weighted_l2":
        value = float(np.sum(w * a * (h + 1.0)))
    else:
        value = float(np.sum(w * a * np.abs(h - 1.0)))
    return EntropyBallResult(value, h, lam, float(np.sum(w * ell(h))), it)


def product_entropy_bound_check(a, b, sigma):
    """Both sides of ab <= exp(σa) + ell(b)/σ for a, b > 0, σ >= 1."""
    if not (a > 0 and b > 0 and sigma >= 1):
        raise ConfigurationError("need a > 0, b > 0, sigma >= 1")
    return a * b, math.exp(sigma * a) + ell(b) / sigma


@dataclass
class EmbeddingWitness:
    M: float
    lhs: float
    rhs: float
    holds: bool


def embedding_witness(h_values, weights, delta, beta, *, step=1e-3, y_max=None):
    """Smallest grid point M >= 1 with exp(δy²) >= y^{β+2} for all y >= M,
    and the split-integral check Σ w h^{β+2} <= Σ_{h>=M} w exp(δh²) + M^β Σ w h².

    The log-gap δy² - (β+2) log y increases for y > sqrt((β+2)/(2δ)), so a scan
    up to past that point (and past the last failure) certifies all larger y.
    """
    if not delta > 0 or beta < 0:
        raise ConfigurationError("need delta > 0 and beta >= 0")
    turn = math.sqrt((beta + 2.0) / (2.0 * delta))
    y_max = y_max or max(2.0, 2.0 * turn + 1.0)
    while delta * y_max ** 2 - (beta + 2.0) * math.log(y_max) < 0:
        y_max *= 2.0
    ys = 1.0 + step * np.arange(int(math.ceil((y_max - 1.0) / step)) + 1)
    gap = delta * ys ** 2 - (beta + 2.0) * np.log(ys)
    bad = np.nonzero(gap < 0)[0]
    M = float(ys[bad[-1] + 1]) if len(bad) else 1.0
    h = np.asarray(h_values, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), h.shape)
    E = h >= M
    lhs = float(np.sum(w * h ** (beta + 2.0)))
    with np.errstate(over="ignore"):
        rhs = float(np.sum(w[E] * np.exp(delta * h[E] ** 2)) + M ** beta * np.sum(w * h ** 2))
    return EmbeddingWitness(M, lhs, rhs, lhs <= rhs * (1 + 1e-12))


def _time_basis(T, kmax=2):
    """Trigonometric test functions in t with exact antiderivatives."""
    funcs = [(lambda t: t, "1")]
    for k in range(1, kmax + 1):
        w = 2 * math.pi * k / T
        funcs.append(((lambda t, w=w: np.sin(w * t) / w), f"cos{k}"))
        funcs.append(((lambda t, w=w: -np.cos(w * t) / w), f"sin{k}"))
    return funcs


def weak_test_integrals(ms, g, *, kmax=2, bumps=2):
    """∫ φ g dν_T for a fixed dictionary φ(t, z) = trig_k(t) · bump_b(z).

    Convergence of all entries is the operational form of weak convergence
    of the measures g dν_T.  Bumps are Gaussian in the mark coordinate
    centred on evenly spaced points of the mark range.
    """
    marks = ms.marks.reshape(ms.m, -1)[:, 0]
    lo, hi = float(marks.min()), float(marks.max())
    width = max(hi - lo, 1.0) / max(bumps, 1)
    centres = np.linspace(lo, hi, bumps) if bumps > 1 else np.array([0.5 * (lo + hi)])
    zfun = np.exp(-0.5 * ((marks[None, :] - centres[:, None]) / width) ** 2)  # bumps × m
    grid = g.time_grid
    out = []
    for anti, _ in _time_basis(g.T, kmax):
        tint = anti(grid[1:]) - anti(grid[:-1])  # K
        cell = tint[:, None] * g.values * ms.nu_weights[None, :]  # K × m
        out.extend((cell.sum(axis=0) @ zfun.T).tolist())
    return np.array(out)


def lambertw_level(r, branch):
    """Solutions x of ell(x) = r: branch 0 gives x >= 1, branch -1 gives x <= 1 (r < 1)."""
    from scipy.special import lambertw

    r = np.asarray(r, dtype=float)
    u = lambertw((r - 1.0) / math.e, branch).real
    return np.exp(u + 1.0)


def level_constant(N, T, total_mass, upper=True):
    """Constant c with T ν(Z) ell(c) = N on the chosen side of 1 (root-finding)."""
    target = N / (T * total_mass)
    if upper:
        return scipy.optimize.brentq(lambda c: ell(c) - target, 1.0, 1.0 + 10 * (1 + target))
    if target >= 1.0:
        return 0.0
    return scipy.optimize.brentq(lambda c: ell(c) - target, 0.0, 1.0)
