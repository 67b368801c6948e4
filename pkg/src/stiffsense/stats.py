"""Rank correlation, GOF-threshold sweeps, paired t-tests, KS normality and
per-condition summaries of damping estimates."""

from __future__ import annotations

import itertools
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats as sps

from .exceptions import (
    DegenerateTestError,
    DomainError,
    InsufficientDataError,
    UndefinedCorrelationError,
)
from .msd import is_outlier

DEFAULT_THRESHOLDS = tuple(float(v) for v in range(0, 100, 5))
EXACT_P_MAX_N = 10


class Correlation(NamedTuple):
    rho: float
    p: float


class TTest(NamedTuple):
    t: float
    df: int
    p: float


class KSResult(NamedTuple):
    d: float
    p: float


def rank_average(x) -> np.ndarray:
    """Fractional ranks (1-based), ties receive the mean of their positions."""
    return sps.rankdata(np.asarray(x, dtype=float), method="average")


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    return float(np.dot(a, b)) / denom


def spearman(x, y, method: str = "t") -> Correlation:
    """Spearman rank correlation with average-rank tie handling.

    ``method="t"`` gives the two-sided p-value from the t approximation with
    ``n - 2`` degrees of freedom. ``method="exact"`` enumerates every
    permutation of ``y`` (only for ``n <= 10``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("x and y must be 1-D and of equal length")
    n = x.size
    if n < 3:
        raise DomainError(f"need at least 3 pairs, got {n}")
    rx, ry = rank_average(x), rank_average(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise UndefinedCorrelationError("a rank vector has zero variance")
    rho = max(-1.0, min(1.0, _pearson(rx, ry)))

    if method == "t":
        if abs(rho) >= 1.0:
            return Correlation(rho, 0.0)
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        return Correlation(rho, float(min(1.0, 2.0 * sps.t.sf(abs(t), n - 2))))
    if method == "exact":
        if n > EXACT_P_MAX_N:
            raise DomainError(f"exact p-value is limited to n <= {EXACT_P_MAX_N}")
        return Correlation(rho, _permutation_p(rx, ry, rho))
    raise DomainError(f"unknown method {method!r}")


def _permutation_p(rx, ry, rho):
    a = rx - rx.mean()
    b = ry - ry.mean()
    scale = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    target = abs(rho) * scale - 1e-12 * scale
    hits = total = 0
    perms = itertools.permutations(range(a.size))
    while True:
        chunk = np.array(list(itertools.islice(perms, 200_000)), dtype=np.intp)
        if chunk.size == 0:
            break
        stats = np.abs(b[chunk] @ a)
        hits += int(np.count_nonzero(stats >= target))
        total += chunk.shape[0]
    return hits / total


@dataclass(frozen=True)
class PairedRow:
    key: str
    lpc: object  # DampingEstimate
    msd: object  # MsdFit


def pair_estimates(rows) -> list:
    """Keep rows where both methods succeeded and MSD is not an outlier.

    ``rows`` yields ``(key, lpc_estimate_or_None, msd_fit_or_None)``.
    """
    out = []
    for key, lpc, msd in rows:
        if lpc is None or msd is None or is_outlier(msd):
            continue
        out.append(PairedRow(key, lpc, msd))
    return out


@dataclass
class CorrelationCurve:
    thresholds: list
    rho_omega: list
    p_omega: list
    rho_zeta: list
    p_zeta: list
    retention_percent: list
    n_rows: list
    total_rows: int = 0

    def to_rows(self):
        cols = ("threshold", "rho_omega", "p_omega", "rho_zeta", "p_zeta", "retention_percent", "n_rows")
        return cols, list(
            zip(self.thresholds, self.rho_omega, self.p_omega, self.rho_zeta, self.p_zeta,
                self.retention_percent, self.n_rows)
        )

    def to_dict(self):
        return {
            "thresholds": list(self.thresholds),
            "rho_omega": list(self.rho_omega),
            "p_omega": list(self.p_omega),
            "rho_zeta": list(self.rho_zeta),
            "p_zeta": list(self.p_zeta),
            "retention_percent": list(self.retention_percent),
            "n_rows": list(self.n_rows),
            "total_rows": self.total_rows,
        }


def threshold_sweep(pairs: Sequence[PairedRow], thresholds=DEFAULT_THRESHOLDS) -> CorrelationCurve:
    """Spearman correlation of LPC vs MSD omega/zeta at each GOF threshold.

    Thresholds that leave fewer than three rows (or an undefined correlation)
    yield NaN entries; the sweep carries on.
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientDataError("no paired estimates")
    gofs = np.array([p.msd.gof_percent for p in pairs])
    lw = np.array([p.lpc.omega for p in pairs])
    lz = np.array([p.lpc.zeta for p in pairs])
    mw = np.array([p.msd.params.omega for p in pairs])
    mz = np.array([p.msd.params.zeta for p in pairs])
    curve = CorrelationCurve([], [], [], [], [], [], [], total_rows=len(pairs))
    for tau in thresholds:
        keep = gofs >= tau
        n = int(keep.sum())
        curve.thresholds.append(float(tau))
        curve.n_rows.append(n)
        curve.retention_percent.append(100.0 * n / len(pairs))
        for (a, b), rho_list, p_list in (
            ((lw, mw), curve.rho_omega, curve.p_omega),
            ((lz, mz), curve.rho_zeta, curve.p_zeta),
        ):
            try:
                rho, p = spearman(a[keep], b[keep])
            except (DomainError, UndefinedCorrelationError):
                rho, p = math.nan, math.nan
            rho_list.append(rho)
            p_list.append(p)
    return curve


def paired_t_test(a, b) -> TTest:
    """Two-sided paired t-test on ``d = a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("a and b must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise DomainError("need at least two pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0 or not np.isfinite(sd):
        raise DegenerateTestError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return TTest(t, n - 1, float(2.0 * sps.t.sf(abs(t), n - 1)))


def ks_normality(x) -> KSResult:
    """One-sample KS test against a normal with the sample's mean and sd.

    The p-value uses the asymptotic Kolmogorov distribution and ignores that
    the parameters were estimated, so it is approximate (conservative).
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n < 5:
        raise DomainError("need at least 5 observations")
    sd = float(np.std(x, ddof=1))
    if sd == 0:
        raise DegenerateTestError("zero sample variance")
    cdf = sps.norm.cdf((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return KSResult(d, float(sps.kstwobign.sf(math.sqrt(n) * d)))


@dataclass
class SummaryTable:
    """Per method x parameter: participant-level condition means, SEs and a paired t-test."""

    rows: list = field(default_factory=list)
    tests: list = field(default_factory=list)
    excluded: dict = field(default_factory=dict)
    aggregation: str = "participant_means"

    def lookup(self, method, parameter, condition):
        for r in self.rows:
            if (r["method"], r["parameter"], r["condition"]) == (method, parameter, condition):
                return r
        raise KeyError((method, parameter, condition))

    def test_for(self, method, parameter):
        for r in self.tests:
            if (r["method"], r["parameter"]) == (method, parameter):
                return r
        raise KeyError((method, parameter))

    def to_dict(self):
        return {
            "aggregation": self.aggregation,
            "rows": self.rows,
            "tests": self.tests,
            "excluded": {k: list(v) for k, v in sorted(self.excluded.items())},
        }


def condition_summary(records) -> SummaryTable:
    """Table of condition means over participant means.

    ``records`` yields ``(participant_id, condition, DampingEstimate)``.
    Each participant contributes the mean of their trials per condition;
    means and standard errors (sd / sqrt(n)) are taken across participants,
    and the two conditions are compared with a paired t-test.
    """
    per = defaultdict(lambda: defaultdict(list))
    for pid, cond, est in records:
        per[est.method][(pid, cond)].append((est.omega, est.zeta))
    participants = {pid for groups in per.values() for pid, _ in groups}
    if len(participants) < 2:
        raise InsufficientDataError(f"need at least 2 participants, got {len(participants)}")

    table = SummaryTable()
    for method in sorted(per):
        groups = per[method]
        pids = sorted({pid for pid, _ in groups})
        complete = [p for p in pids if (p, "calm") in groups and (p, "stressed") in groups]
        dropped = sorted(set(pids) - set(complete))
        if dropped:
            warnings.warn(
                f"{method}: participants missing a condition excluded: {dropped}", UserWarning,
                stacklevel=2,
            )
            table.excluded[method] = dropped
        if len(complete) < 2:
            raise InsufficientDataError(f"{method}: fewer than 2 participants with both conditions")
        for j, parameter in enumerate(("omega", "zeta")):
            means = {
                cond: np.array([np.mean([v[j] for v in groups[(p, cond)]]) for p in complete])
                for cond in ("calm", "stressed")
            }
            for cond in ("calm", "stressed"):
                m = means[cond]
                table.rows.append({
                    "method": method,
                    "parameter": parameter,
                    "condition": cond,
                    "mean": float(m.mean()),
                    "se": float(np.std(m, ddof=1) / math.sqrt(m.size)),
                    "n_participants": int(m.size),
                })
            try:
                res = paired_t_test(means["stressed"], means["calm"])
                test = {"t": res.t, "df": res.df, "p": res.p, "degenerate": False}
            except DegenerateTestError:
                test = {"t": math.nan, "df": len(complete) - 1, "p": math.nan, "degenerate": True}
            table.tests.append({"method": method, "parameter": parameter, **test})
    return table
