import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from oracles import exhaustive_ranks, pearson, t_cdf_df3
from stiffsense.exceptions import (
    DegenerateTestError,
    DomainError,
    InsufficientDataError,
    UndefinedCorrelationError,
)
from stiffsense.lpc import DampingEstimate
from stiffsense.msd import MsdCanonicalParams, MsdFit
from stiffsense.stats import (
    DEFAULT_THRESHOLDS,
    PairedRow,
    condition_summary,
    ks_normality,
    pair_estimates,
    paired_t_test,
    rank_average,
    spearman,
    threshold_sweep,
)


def lpc(omega, zeta=0.5):
    return DampingEstimate(omega=omega, zeta=zeta, method="LPC")


def msd(omega, zeta=0.9, g=90.0):
    return MsdFit(MsdCanonicalParams(1.0, omega, zeta), g, 1.0, True, 10)


# -- Spearman --------------------------------------------------------------------


def test_spearman_identical_and_reversed():
    assert spearman([1, 2, 3, 4], [1, 2, 3, 4]).rho == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]).rho == -1.0


def test_spearman_ties_hand_example():
    x, y = (1, 2, 2, 4), (3, 1, 2, 4)
    assert list(rank_average(x)) == [1.0, 2.5, 2.5, 4.0]
    expected = pearson(exhaustive_ranks(x), exhaustive_ranks(y))
    assert spearman(x, y).rho == pytest.approx(expected, abs=1e-12)


def all_small_vectors():
    for n in range(3, 7):
        yield from itertools.product((1, 2, 3), repeat=n)


def test_ranks_match_exhaustive_oracle_all_small_vectors():
    for v in all_small_vectors():
        np.testing.assert_allclose(rank_average(v), exhaustive_ranks(v), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 6).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([1, 2, 3]), min_size=n, max_size=n),
    st.lists(st.sampled_from([1, 2, 3]), min_size=n, max_size=n),
)))
def test_spearman_matches_rank_oracle(xy):
    x, y = xy
    rx, ry = exhaustive_ranks(x), exhaustive_ranks(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        with pytest.raises(UndefinedCorrelationError):
            spearman(x, y)
        return
    assert spearman(x, y).rho == pytest.approx(pearson(rx, ry), abs=1e-12)


def test_spearman_p_value_t_approximation():
    x = np.arange(10.0)
    y = np.array([2, 1, 4, 3, 6, 5, 8, 7, 10, 9.0])
    r = spearman(x, y)
    t = r.rho * math.sqrt(8 / (1 - r.rho**2))
    assert r.p == pytest.approx(2 * sps.t.sf(t, 8), rel=1e-12)


def test_spearman_exact_p_by_enumeration():
    x = [1, 2, 3, 4, 5, 6]
    y = [2, 1, 4, 3, 6, 5]
    r = spearman(x, y, method="exact")
    hits = sum(
        abs(pearson(x, [y[i] for i in perm])) >= abs(r.rho) - 1e-12
        for perm in itertools.permutations(range(6))
    )
    assert r.p == pytest.approx(hits / 720)
    with pytest.raises(DomainError):
        spearman(range(11), range(11), method="exact")


def test_spearman_errors():
    with pytest.raises(DomainError):
        spearman([1, 2], [1, 2])
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=4, max_size=30, unique=True))
def test_spearman_invariant_under_monotone_transform(x):
    y = list(range(len(x)))
    a = spearman(x, y).rho
    b = spearman(np.exp(np.asarray(x) / 200.0), y).rho
    assert a == pytest.approx(b, abs=1e-12)


# -- pairing and sweep -----------------------------------------------------------


def test_pair_estimates_drops_failures_and_outliers():
    rows = [("a", lpc(1), msd(1)), ("b", None, msd(2)), ("c", lpc(3), None), ("d", lpc(4), msd(4, 150))]
    assert [p.key for p in pair_estimates(rows)] == ["a"]


def test_sweep_perfect_gof_full_retention():
    pairs = [PairedRow(str(i), lpc(i), msd(i, g=100.0)) for i in range(1, 6)]
    curve = threshold_sweep(pairs, thresholds=(0, 50))
    assert curve.retention_percent == [100.0, 100.0]
    assert curve.rho_omega == [1.0, 1.0]


def test_sweep_uniform_gof_retention():
    g = np.random.default_rng(0).uniform(0, 100, 2000)
    pairs = [PairedRow(str(i), lpc(i + 1.0), msd(i + 1.0, g=gi)) for i, gi in enumerate(g)]
    curve = threshold_sweep(pairs, thresholds=(80,))
    # Binomial sd at p=0.2, n=2000 is ~0.9 percentage points.
    assert abs(curve.retention_percent[0] - 20.0) < 3 * 0.9


def test_sweep_sparse_thresholds_are_nan():
    pairs = [PairedRow(str(i), lpc(i), msd(i, g=10.0 * i)) for i in range(1, 6)]
    curve = threshold_sweep(pairs, thresholds=(0, 35, 45))
    assert not math.isnan(curve.rho_omega[0])
    assert curve.n_rows == [5, 2, 1]
    assert math.isnan(curve.rho_omega[1]) and math.isnan(curve.rho_omega[2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 100), min_size=1, max_size=60), st.integers(0, 1000))
def test_sweep_retention_non_increasing(gofs, seed):
    rng = np.random.default_rng(seed)
    pairs = [
        PairedRow(str(i), lpc(rng.uniform(0.1, 1)), msd(rng.uniform(5, 20), g=g))
        for i, g in enumerate(gofs)
    ]
    curve = threshold_sweep(pairs)
    assert len(curve.thresholds) == len(DEFAULT_THRESHOLDS) == 20
    assert all(a >= b for a, b in zip(curve.retention_percent, curve.retention_percent[1:]))
    assert len({len(v) for v in (curve.rho_omega, curve.p_zeta, curve.n_rows)}) == 1


def test_sweep_empty():
    with pytest.raises(InsufficientDataError):
        threshold_sweep([])


# -- paired t and KS ---------------------------------------------------------------


def test_paired_t_hand_example():
    r = paired_t_test([2, 4, 6, 8], [1, 3, 5, 9])
    assert r.t == pytest.approx(1.0, abs=1e-12)
    assert r.df == 3
    assert r.p == pytest.approx(2 * (1 - t_cdf_df3(1.0)), abs=1e-10)
    assert r.p == pytest.approx(0.39100, abs=1e-5)


def test_paired_t_degenerate():
    with pytest.raises(DegenerateTestError):
        paired_t_test([2, 3, 4], [1, 2, 3])
    with pytest.raises(DegenerateTestError):
        paired_t_test([1, 2, 3], [1, 2, 3])


def test_ks_normal_accepted_uniform_rejected():
    rng = np.random.default_rng(2024)
    assert ks_normality(rng.normal(size=10_000)).p > 0.05
    assert ks_normality(rng.uniform(size=10_000)).p < 0.01


def test_ks_statistic_matches_scipy():
    x = np.random.default_rng(7).gamma(2.0, size=300)
    ours = ks_normality(x)
    ref = sps.kstest(x, "norm", args=(x.mean(), x.std(ddof=1)))
    assert ours.d == pytest.approx(ref.statistic, abs=1e-12)


def test_ks_constant():
    with pytest.raises(DegenerateTestError):
        ks_normality(np.ones(20))


# -- condition summary -------------------------------------------------------------


def records(n_participants=6, shift=1.0, skip=()):
    rng = np.random.default_rng(11)
    out = []
    for p in range(n_participants):
        base = rng.normal(13, 2)
        for cond, s in (("calm", 0.0), ("stressed", shift)):
            if (p, cond) in skip:
                continue
            for _ in range(3):
                w = base + s + rng.normal(0, 0.1)
                out.append((f"P{p}", cond, DampingEstimate(w, 0.9, "MSD", kp=1.0, gof_percent=90)))
                out.append((f"P{p}", cond, DampingEstimate(w / 50, 0.5, "LPC")))
    return out


def test_condition_summary_direction_and_shape():
    table = condition_summary(records())
    assert len(table.rows) == 8 and len(table.tests) == 4
    for m in ("LPC", "MSD"):
        calm = table.lookup(m, "omega", "calm")["mean"]
        stressed = table.lookup(m, "omega", "stressed")["mean"]
        assert stressed > calm
        assert table.test_for(m, "omega")["p"] < 0.05
    # zeta is constant per method: the t-test is degenerate, not an error.
    assert table.test_for("MSD", "zeta")["degenerate"] is True


def test_condition_summary_excludes_incomplete():
    with pytest.warns(UserWarning, match="P2"):
        table = condition_summary(records(skip={(2, "stressed")}))
    assert table.excluded["MSD"] == ["P2"]
    assert table.lookup("MSD", "omega", "calm")["n_participants"] == 5


def test_condition_summary_needs_two_participants():
    with pytest.raises(InsufficientDataError):
        condition_summary(records(n_participants=1))
