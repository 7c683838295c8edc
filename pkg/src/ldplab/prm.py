"""Poisson random measures on [0, T] × Z for an atomic mark measure.

Randomness is drawn from counter-based streams: the generator for mark cell
``j`` of path ``stream_id`` is ``Philox`` keyed by ``(seed, stream_id, j)``,
so a path reproduces bit-exactly regardless of how many other paths were
drawn, or in which order.
"""
import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .control import Control, MarkSpace, NoiseScale
from .errors import ConfigurationError, ResourceError

__all__ = [
    "RngStream",
    "JumpRecord",
    "JumpList",
    "sample_prm",
    "sample_controlled_prm",
    "compensated_sum",
    "cell_counts",
    "dump_jumps_csv",
    "DEFAULT_JUMP_CAP",
]

DEFAULT_JUMP_CAP = 10_000_000


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self, *key):
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),) + tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id):
        return RngStream(self.seed, stream_id)


class JumpRecord(NamedTuple):
    time: float
    mark_index: int


@dataclass(frozen=True, eq=False)
class JumpList:
    """Jumps of one path, sorted by time."""

    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return (JumpRecord(float(t), int(j)) for t, j in zip(self.times, self.marks))

    def __getitem__(self, i):
        return JumpRecord(float(self.times[i]), int(self.marks[i]))

    def __eq__(self, other):
        return np.array_equal(self.times, other.times) and np.array_equal(self.marks, other.marks)

    def records(self):
        return list(self)


def _check_cap(expected, cap):
    if expected > cap:
        raise ResourceError(f"expected jump count {expected:.3g} exceeds cap {cap:.3g}")


def _merge(times_per_cell):
    if not times_per_cell:
        return JumpList(np.empty(0), np.empty(0, dtype=np.int64))
    times = np.concatenate([t for t, _ in times_per_cell])
    marks = np.concatenate([np.full(len(t), j, dtype=np.int64) for t, j in times_per_cell])
    order = np.lexsort((marks, times))
    return JumpList(times[order], marks[order])


def sample_prm(ms: MarkSpace, T, rate_scale, rng: RngStream, *, cap=DEFAULT_JUMP_CAP):
    """Jumps of a PRM with intensity rate_scale · Leb ⊗ ν on (0, T] × Z."""
    if rate_scale < 0:
        raise ConfigurationError("rate_scale must be nonnegative")
    expected = rate_scale * T * ms.total_mass
    _check_cap(expected, cap)
    cells = []
    for j, w in enumerate(ms.nu_weights):
        lam = rate_scale * T * w
        if lam <= 0:
            continue
        gen = rng.generator(j)
        n = gen.poisson(lam)
        # T(1 - U) lies in (0, T]
        cells.append((T * (1.0 - gen.random(n)), j))
    return _merge(cells)


def validate_bounded_control(psi: Control, n_bound=None):
    """Bounded-control check: values finite, nonnegative, and (if ``n_bound``
    is given) each entry either 1 or in [1/n, n]."""
    vals = psi.values
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ConfigurationError("controlled intensity must be finite and nonnegative")
    if n_bound is not None:
        ok = (vals == 1.0) | ((vals >= 1.0 / n_bound) & (vals <= n_bound))
        if not np.all(ok):
            k, j = np.argwhere(~ok)[0]
            raise ConfigurationError(
                f"control value {vals[k, j]:g} at cell ({k}, {j}) outside [1/{n_bound}, {n_bound}]",
                f"/values/{k}/{j}",
            )


def sample_controlled_prm(ms: MarkSpace, psi: Control, eps, rng: RngStream, *, n_bound=None, cap=DEFAULT_JUMP_CAP):
    """Jumps of the PRM with intensity ε⁻¹ψ(t, z) ν(dz) dt, by thinning.

    Candidates in mark cell j come from a homogeneous PRM with rate
    ε⁻¹ max_k ψ_kj; a candidate at time s is kept with probability
    ψ(s, z_j) / max_k ψ_kj.
    """
    eps = eps.epsilon if isinstance(eps, NoiseScale) else NoiseScale(float(eps)).epsilon
    validate_bounded_control(psi, n_bound)
    if psi.values.shape[1] != ms.m:
        raise ConfigurationError("control and mark space disagree on the number of marks")
    T = psi.T
    peak = psi.values.max(axis=0)
    _check_cap(float(np.sum(peak * ms.nu_weights)) * T / eps, cap)
    cells = []
    for j, w in enumerate(ms.nu_weights):
        lam = peak[j] * T * w / eps
        if lam <= 0:
            continue
        gen = rng.generator(j)
        n = gen.poisson(lam)
        times = T * (1.0 - gen.random(n))
        u = gen.random(n)
        keep = u * peak[j] < psi.at(times)[:, j]
        cells.append((times[keep], j))
    return _merge(cells)


def cell_counts(jumps: JumpList, psi_or_grid, m):
    """Jump counts per (time cell, mark) on the grid of a Control (or a bare grid)."""
    grid = psi_or_grid.time_grid if isinstance(psi_or_grid, Control) else np.asarray(psi_or_grid)
    k = np.clip(np.searchsorted(grid, jumps.times, side="right") - 1, 0, len(grid) - 2)
    counts = np.zeros((len(grid) - 1, m), dtype=np.int64)
    np.add.at(counts, (k, jumps.marks), 1)
    return counts


def compensated_sum(jumps: JumpList, integrand, ms: MarkSpace, intensity: Control, eps):
    """ε Σ_i c(t_i, z_i) − ∫∫ c ψ dν dt.

    ``integrand(t, j)`` may return a scalar or a vector.  The compensator is
    evaluated per cell at the midpoint, which is exact when the integrand
    is constant on cells (the case used by the simulators).
    """
    eps = eps.epsilon if isinstance(eps, NoiseScale) else float(eps)
    grid = intensity.time_grid
    mids = 0.5 * (grid[1:] + grid[:-1])
    dur = np.diff(grid)
    total = 0.0
    for rec in jumps:
        total = total + np.asarray(integrand(rec.time, rec.mark_index), dtype=float)
    comp = 0.0
    for k in range(len(mids)):
        for j in range(ms.m):
            wt = dur[k] * ms.nu_weights[j] * intensity.values[k, j]
            if wt == 0:
                continue
            comp = comp + wt * np.asarray(integrand(mids[k], j), dtype=float)
    return eps * total - comp


def dump_jumps_csv(path, jump_lists):
    """Write ``path_id,time,mark_index`` rows for a sequence of jump lists."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "time", "mark_index"])
        for pid, jl in enumerate(jump_lists):
            for rec in jl:
                w.writerow([pid, repr(rec.time), rec.mark_index])
