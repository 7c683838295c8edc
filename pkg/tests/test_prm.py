import csv

import numpy as np
import pytest
import scipy.stats

from ldplab.control import Control, MarkSpace
from ldplab.errors import ConfigurationError, ResourceError
from ldplab.prm import (
    JumpRecord,
    RngStream,
    cell_counts,
    compensated_sum,
    dump_jumps_csv,
    sample_controlled_prm,
    sample_prm,
    validate_bounded_control,
)

MS = MarkSpace([0.0, 1.0], [0.6, 1.4])
PSI = Control(np.array([0.0, 0.25, 0.5, 0.75, 1.0]), np.array([[2.0, 0.5], [1.0, 1.5], [0.0, 3.0], [1.0, 1.0]]))


def test_zero_rate_is_empty():
    assert len(sample_prm(MS, 1.0, 0.0, RngStream(1))) == 0


def test_negative_rate_rejected():
    with pytest.raises(ConfigurationError):
        sample_prm(MS, 1.0, -1.0, RngStream(1))


def test_counts_mean_and_variance():
    ms = MarkSpace([0.0], [1.0])
    counts = np.array([len(sample_prm(ms, 1.0, 100.0, RngStream(7, i))) for i in range(10_000)])
    se = np.sqrt(100.0 / len(counts))
    assert abs(counts.mean() - 100.0) < 4 * se
    # sd of the sample variance of a Poisson(100) count is about 100 sqrt(2 / n)
    assert abs(counts.var(ddof=1) - 100.0) < 4 * 100.0 * np.sqrt(2.0 / len(counts))


def test_times_sorted_in_horizon():
    jl = sample_prm(MS, 2.0, 50.0, RngStream(3))
    assert np.all(np.diff(jl.times) >= 0)
    assert np.all((jl.times > 0) & (jl.times <= 2.0))
    assert set(np.unique(jl.marks)) <= {0, 1}
    assert isinstance(jl[0], JumpRecord)
    assert len(jl.records()) == len(jl)


def test_reproducible_and_stream_separated():
    a = sample_controlled_prm(MS, PSI, 0.05, RngStream(11, 4))
    b = sample_controlled_prm(MS, PSI, 0.05, RngStream(11, 4))
    c = sample_controlled_prm(MS, PSI, 0.05, RngStream(11, 5))
    assert a == b
    assert np.array_equal(a.times, b.times)
    assert not (a == c)


def test_zero_control_cell_has_no_jumps():
    counts = np.zeros((4, 2), dtype=int)
    for i in range(300):
        counts += cell_counts(sample_controlled_prm(MS, PSI, 0.1, RngStream(2, i)), PSI, 2)
    assert counts[2, 0] == 0
    assert np.all(counts[PSI.values > 0] > 0)


def test_thinning_matches_direct_poisson():
    # two-sample chi-square: per-cell counts from thinning vs direct Poisson draws
    eps = 0.1
    lam = PSI.values * np.outer(PSI.durations, MS.nu_weights) / eps
    n = 4000
    thin = np.array([cell_counts(sample_controlled_prm(MS, PSI, eps, RngStream(5, i)), PSI, 2) for i in range(n)])
    direct = np.random.default_rng(99).poisson(lam, size=(n,) + lam.shape)
    for k, j in [(0, 0), (1, 1), (2, 1), (3, 0)]:
        hi = int(lam[k, j] + 4 * np.sqrt(lam[k, j])) + 1
        lo = max(int(lam[k, j] - 4 * np.sqrt(lam[k, j])), 0)
        bins = np.arange(lo, hi + 1)
        a = np.histogram(np.clip(thin[:, k, j], lo, hi), bins)[0]
        b = np.histogram(np.clip(direct[:, k, j], lo, hi), bins)[0]
        keep = (a + b) >= 10
        table = np.vstack([a[keep], b[keep]])
        assert scipy.stats.chi2_contingency(table)[1] > 0.001


def test_cap_raises_resource_error():
    with pytest.raises(ResourceError):
        sample_prm(MS, 1.0, 1e6, RngStream(0), cap=1e5)
    with pytest.raises(ResourceError):
        sample_controlled_prm(MS, PSI, 1e-6, RngStream(0), cap=1e5)


def test_bounded_control_validation():
    ok = Control([0.0, 1.0], [[1.0, 0.5]])
    validate_bounded_control(ok, n_bound=2)
    with pytest.raises(ConfigurationError) as exc:
        validate_bounded_control(Control([0.0, 1.0], [[1.0, 0.1]]), n_bound=2)
    assert "/values/0/1" in str(exc.value)


def test_cell_counts_boundaries():
    from ldplab.prm import JumpList

    jl = JumpList(np.array([0.25, 0.5, 1.0]), np.array([0, 1, 1]))
    counts = cell_counts(jl, PSI, 2)
    assert counts[1, 0] == 1  # a jump at a cell edge belongs to the cell starting there
    assert counts[2, 1] == 1
    assert counts[3, 1] == 1  # T belongs to the last cell
    assert counts.sum() == 3


def test_compensated_sum_zero_integrand():
    jl = sample_controlled_prm(MS, PSI, 0.1, RngStream(1))
    assert compensated_sum(jl, lambda t, j: 0.0, MS, PSI, 0.1) == 0.0


def test_compensated_sum_mean_and_isometry():
    eps = 0.1
    table = np.array([[1.0, -2.0], [0.5, 1.0], [3.0, 0.2], [-1.0, 1.0]])
    c = lambda t, j: table[PSI.cell_index(t), j]
    vals = np.array([compensated_sum(sample_controlled_prm(MS, PSI, eps, RngStream(8, i)), c, MS, PSI, eps) for i in range(4000)])
    var = eps * float(np.sum(table ** 2 * PSI.values * np.outer(PSI.durations, MS.nu_weights)))
    assert abs(vals.mean()) < 3 * np.sqrt(var / len(vals))
    assert vals.var(ddof=1) == pytest.approx(var, rel=0.1)


def test_dump_csv(tmp_path):
    jls = [sample_prm(MS, 1.0, 5.0, RngStream(1, i)) for i in range(3)]
    path = tmp_path / "jumps.csv"
    dump_jumps_csv(path, jls)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path_id", "time", "mark_index"]
    assert len(rows) == 1 + sum(len(j) for j in jls)
    assert float(rows[1][1]) == jls[0][0].time if len(jls[0]) else True
