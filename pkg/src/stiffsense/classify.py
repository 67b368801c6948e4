"""Binary calm/stressed classification from damping features.

One RBF support vector machine per participant and target distance, trained
by sequential minimal optimization on min-max normalized features and scored
by stratified k-fold cross-validation repeated over derived seeds.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConvergenceError, DomainError, FoldInfeasibleError
from .msd import is_outlier

FEATURE_SOURCES = ("MSD", "LPC")
FEATURE_SETS = ("omega_zeta", "omega", "zeta")
# Column order of the accuracy table.
VARIANTS = (
    ("MSD", "omega_zeta"),
    ("LPC", "omega_zeta"),
    ("MSD", "omega"),
    ("LPC", "omega"),
    ("MSD", "zeta"),
    ("LPC", "zeta"),
)
LABELS = {"calm": 0, "stressed": 1}


def variant_name(source, feature_set):
    return f"{source}_{feature_set}"


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    feature_source: str
    feature_set: str

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=int).ravel()
        if self.feature_source not in FEATURE_SOURCES:
            raise DomainError(f"unknown feature source {self.feature_source!r}")
        if self.feature_set not in FEATURE_SETS:
            raise DomainError(f"unknown feature set {self.feature_set!r}")
        expected_d = 2 if self.feature_set == "omega_zeta" else 1
        if X.shape[1] != expected_d:
            raise DomainError(f"{self.feature_set} needs {expected_d} column(s), got {X.shape[1]}")
        if X.shape[0] != y.size:
            raise DomainError("row count differs from label count")
        if not np.all(np.isfinite(X)):
            raise DomainError("feature matrix has non-finite entries")
        if not set(np.unique(y)) <= {0, 1}:
            raise DomainError("labels must be 0 (calm) or 1 (stressed)")
        if np.unique(y).size != 2:
            raise DomainError("both classes must be present")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Map each feature to ``(x - min) / (max - min)`` using training bounds.

    Test values outside the training range map outside [0, 1]. A constant
    training feature is mapped to 0.5 (with a warning).
    """

    def fit(self, X, y=None):
        X = check_array(X)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.constant_ = self.data_max_ == self.data_min_
        if np.any(self.constant_):
            warnings.warn(
                f"constant training feature(s) {np.flatnonzero(self.constant_).tolist()} mapped to 0.5",
                UserWarning,
                stacklevel=2,
            )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X)
        span = np.where(self.constant_, 1.0, self.data_max_ - self.data_min_)
        out = (X - self.data_min_) / span
        out[:, self.constant_] = 0.5
        return out


def min_max_fit_apply(train, test):
    """Normalize ``train`` and ``test`` with bounds computed on ``train`` only."""
    train = np.asarray(train, dtype=float)
    test = np.asarray(test, dtype=float)
    squeeze = train.ndim == 1
    if squeeze:
        train, test = train[:, None], test.reshape(-1, 1)
    norm = MinMaxNormalizer().fit(train)
    a, b = norm.transform(train), norm.transform(test)
    return (a.ravel(), b.ravel()) if squeeze else (a, b)


def rbf_kernel(A, B, gamma):
    sq = (
        np.einsum("ij,ij->i", A, A)[:, None]
        + np.einsum("ij,ij->i", B, B)[None, :]
        - 2.0 * A @ B.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def smo_solve(K, y, C, tol=1e-3, max_iter=100_000):
    """Solve the soft-margin SVM dual by SMO with second-order working-set selection.

    Minimizes ``0.5 a'Qa - sum(a)`` with ``Q = yy' * K``, ``0 <= a <= C`` and
    ``y'a = 0``. Stops when the maximal KKT violation ``m(a) - M(a)`` falls
    below ``tol``.

    Returns
    -------
    alpha, rho, n_iter, objective
    """
    n = y.size
    y = y.astype(float)
    Q = (y[:, None] * y[None, :]) * K
    diagQ = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12

    it = 0
    while True:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(y > 0, ~at_upper, ~at_lower)
        low = np.where(y > 0, ~at_lower, ~at_upper)
        score = -y * G
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        gmax = score[i]
        gmin = score[low].min()
        if gmax - gmin < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                "SMO did not converge", iterations=it, violation=float(gmax - gmin), tol=tol
            )
        cand = low & (score < gmax)
        b = gmax - score[cand]
        a = diagQ[i] + diagQ[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, tau)
        idx = np.flatnonzero(cand)
        j = int(idx[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diagQ[i] + diagQ[j] + 2.0 * Q[i, j]
            delta = (-G[i] - G[j]) / max(quad, tau)
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = diagQ[i] + diagQ[j] - 2.0 * Q[i, j]
            delta = (G[i] - G[j]) / max(quad, tau)
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj
        it += 1

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        at_upper = alpha >= C
        ub_mask = np.where(y > 0, ~at_upper, at_upper)  # lower-bound y=+1 or upper-bound y=-1
        lb_mask = ~ub_mask
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0) if np.isfinite(ub + lb) else 0.0
    objective = float(0.5 * alpha @ (G - 1.0))
    return alpha, rho, it, objective


def dual_objective(alpha, K, y):
    """``0.5 a'Qa - sum(a)`` for given multipliers."""
    y = np.asarray(y, dtype=float)
    v = alpha * y
    return float(0.5 * v @ K @ v - alpha.sum())


class SMOClassifier(ClassifierMixin, BaseEstimator):
    """Binary RBF-kernel SVM trained by sequential minimal optimization.

    Parameters
    ----------
    C : float, default=1.0
        Penalty on margin violations.
    gamma : float or "scale", default="scale"
        RBF width. ``"scale"`` uses ``1 / (n_features * mean feature variance)``
        of the training data.
    tol : float, default=1e-3
        Stopping tolerance on the maximal KKT violation.
    max_iter : int, default=100000
    """

    def __init__(self, C=1.0, gamma="scale", tol=1e-3, max_iter=100_000):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C}")
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise DomainError(f"need exactly two classes, got {self.classes_.size}")
        if self.gamma == "scale":
            var = float(X.var(axis=0).mean())
            self.gamma_ = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        else:
            self.gamma_ = float(self.gamma)
            if not self.gamma_ > 0:
                raise DomainError(f"gamma must be positive, got {self.gamma}")
        ypm = np.where(y == self.classes_[1], 1, -1)
        K = rbf_kernel(X, X, self.gamma_)
        alpha, rho, n_iter, objective = smo_solve(K, ypm, float(self.C), self.tol, self.max_iter)
        sv = alpha > 0
        self.alpha_ = alpha
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = X[sv]
        self.dual_coef_ = (alpha * ypm)[sv]
        self.intercept_ = -rho
        self.n_iter_ = n_iter
        self.objective_ = objective
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        if self.support_vectors_.shape[0] == 0:
            return np.full(X.shape[0], self.intercept_)
        return rbf_kernel(X, self.support_vectors_, self.gamma_) @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


def make_svm_pipeline(C=1.0, gamma="scale", tol=1e-3):
    return Pipeline([("minmax", MinMaxNormalizer()), ("svm", SMOClassifier(C=C, gamma=gamma, tol=tol))])


def svm_train(m: FeatureMatrix, c=1.0, gamma="scale") -> Pipeline:
    """Fit normalizer + SVM on a feature matrix; the fitted pipeline holds the
    normalization bounds, support vectors, dual coefficients and bias."""
    if not c > 0:
        raise DomainError(f"C must be positive, got {c}")
    if gamma != "scale" and not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return make_svm_pipeline(c, gamma).fit(m.X, m.y)


def cross_validate(
    m: FeatureMatrix,
    folds: int = 5,
    seed: int = 0,
    estimator=None,
    normalization: str = "per_fold",
    return_folds: bool = False,
):
    """Stratified k-fold accuracy (percent) of the SVM pipeline.

    ``estimator`` replaces the default normalizer+SVM pipeline (it is cloned
    per fold). ``normalization="global"`` fits min-max bounds on the whole
    matrix before splitting, reproducing a leaky protocol on request.
    """
    counts = np.bincount(m.y, minlength=2)
    if counts.min() < folds:
        raise FoldInfeasibleError(f"class counts {counts.tolist()} below {folds} folds")
    if normalization not in ("per_fold", "global"):
        raise DomainError(f"unknown normalization {normalization!r}")
    X = m.X
    if estimator is None:
        estimator = make_svm_pipeline()
    if normalization == "global":
        X = MinMaxNormalizer().fit(X).transform(X)
        if isinstance(estimator, Pipeline) and "minmax" in estimator.named_steps:
            estimator = estimator.named_steps["svm"]
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    scores = []
    for train, test in skf.split(X, m.y):
        model = clone(estimator).fit(X[train], m.y[train])
        scores.append(100.0 * float(np.mean(model.predict(X[test]) == m.y[test])))
    mean = float(np.mean(scores))
    return (mean, scores) if return_folds else mean


@dataclass(frozen=True)
class ExperimentConfig:
    C: float = 1.0
    gamma: object = "scale"
    folds: int = 5
    repetitions: int = 10
    normalization: str = "per_fold"
    seed: int = 0
    variants: tuple = VARIANTS
    jobs: int = 1

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "variants" in d:
            d["variants"] = tuple(tuple(v) for v in d["variants"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["variants"] = [list(v) for v in self.variants]
        return d


def derive_seed(master_seed, *parts) -> int:
    text = "|".join(str(p) for p in (master_seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def _features(lpc, msd, source, feature_set):
    if source == "LPC":
        est = lpc
        if est is None:
            return None
        w, z = est.omega, est.zeta
    else:
        if msd is None or is_outlier(msd):
            return None
        w, z = msd.params.omega, msd.params.zeta
    return {"omega": (w,), "zeta": (z,), "omega_zeta": (w, z)}[feature_set]


def _run_cell(cell, rows, config):
    participant, distance, source, feature_set = cell
    X, y = [], []
    dropped = 0
    for meta, lpc, msd in rows:
        f = _features(lpc, msd, source, feature_set)
        if f is None:
            dropped += 1
            continue
        X.append(f)
        y.append(LABELS[meta.condition])
    out = {
        "participant": participant,
        "distance_px": distance,
        "feature_source": source,
        "feature_set": feature_set,
        "n_samples": len(y),
        "n_dropped": dropped,
    }
    try:
        m = FeatureMatrix(np.array(X, dtype=float).reshape(len(y), -1), np.array(y), source, feature_set)
        key = f"{participant}|{distance}|{source}|{feature_set}"
        pipe = make_svm_pipeline(config.C, config.gamma)
        accs = [
            cross_validate(m, config.folds, derive_seed(config.seed, key, r), pipe, config.normalization)
            for r in range(config.repetitions)
        ]
    except (DomainError, FoldInfeasibleError) as exc:
        out.update(available=False, reason=str(exc), mean_accuracy=math.nan, se=math.nan)
        return out
    accs = np.array(accs)
    se = float(np.std(accs, ddof=1) / math.sqrt(accs.size)) if accs.size > 1 else 0.0
    out.update(available=True, reason="", mean_accuracy=float(accs.mean()), se=se)
    return out


@dataclass
class AccuracyReport:
    cells: list
    by_distance: list
    overall: list
    config: dict = field(default_factory=dict)

    def lookup(self, distance, source, feature_set):
        """Aggregate row for one distance (or ``"overall"``) and variant."""
        rows = self.overall if distance == "overall" else self.by_distance
        for r in rows:
            if (r["feature_source"], r["feature_set"]) == (source, feature_set) and (
                distance == "overall" or r["distance_px"] == distance
            ):
                return r
        raise KeyError((distance, source, feature_set))

    def accuracy_table(self):
        """Rows = distances then overall; columns = variants (mean, se)."""
        variants = [tuple(v) for v in self.config.get("variants", VARIANTS)]
        header = ["distance"]
        for s, f in variants:
            header += [f"{variant_name(s, f)}_mean", f"{variant_name(s, f)}_se"]
        distances = sorted({r["distance_px"] for r in self.by_distance})
        rows = []
        for d in distances + ["overall"]:
            row = [d]
            for s, f in variants:
                try:
                    r = self.lookup(d, s, f)
                    row += [r["mean_accuracy"], r["se"]]
                except KeyError:
                    row += [math.nan, math.nan]
            rows.append(row)
        return header, rows

    def to_dict(self):
        return {"config": self.config, "cells": self.cells, "by_distance": self.by_distance,
                "overall": self.overall}


def _aggregate(values):
    values = np.array([v for v in values if np.isfinite(v)])
    if values.size == 0:
        return math.nan, math.nan, 0
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), se, int(values.size)


def run_experiment(trials, estimates, config: Optional[ExperimentConfig] = None) -> AccuracyReport:
    """Per participant x distance x variant cross-validated accuracy.

    Parameters
    ----------
    trials : TrialSet or iterable of TrialMeta
    estimates : mapping
        trial key -> ``(lpc DampingEstimate or None, MsdFit or None)``.
    config : ExperimentConfig

    Failed estimates (and MSD outliers) are dropped from a cell; a cell left
    with fewer samples per class than folds is reported unavailable.
    """
    config = config or ExperimentConfig()
    metas = [t[0] if isinstance(t, tuple) else t for t in trials]
    groups = defaultdict(list)
    for meta in metas:
        lpc, msd = estimates.get(meta.key, (None, None))
        groups[(meta.participant_id, meta.distance_px)].append((meta, lpc, msd))
    jobs = [
        ((pid, dist, s, f), groups[(pid, dist)])
        for (pid, dist) in sorted(groups)
        for s, f in config.variants
    ]
    if config.jobs == 1:
        cells = [_run_cell(c, rows, config) for c, rows in jobs]
    else:
        from joblib import Parallel, delayed

        cells = Parallel(n_jobs=config.jobs)(delayed(_run_cell)(c, rows, config) for c, rows in jobs)

    by_distance = []
    overall = []
    for s, f in config.variants:
        mine = [c for c in cells if (c["feature_source"], c["feature_set"]) == (s, f)]
        for d in sorted({c["distance_px"] for c in mine}):
            mean, se, n = _aggregate(c["mean_accuracy"] for c in mine if c["distance_px"] == d)
            by_distance.append({"distance_px": d, "feature_source": s, "feature_set": f,
                                "mean_accuracy": mean, "se": se, "n_cells": n})
        per_participant = defaultdict(list)
        for c in mine:
            if c["available"]:
                per_participant[c["participant"]].append(c["mean_accuracy"])
        mean, se, n = _aggregate(np.mean(v) for _, v in sorted(per_participant.items()))
        overall.append({"feature_source": s, "feature_set": f, "mean_accuracy": mean, "se": se,
                        "n_participants": n})
    # Parallelism does not affect results, so it stays out of the artifact.
    echo = {k: v for k, v in config.to_dict().items() if k != "jobs"}
    return AccuracyReport(cells=cells, by_distance=by_distance, overall=overall, config=echo)
