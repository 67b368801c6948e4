"""Order-p linear prediction and LPC-derived damping parameters.

The prediction polynomial is ``A(z) = 1 - sum_k a_k z^-k``. Its roots in the
z-plane are the model poles; the dominant complex pair ``r`` gives the LPC
damping frequency ``|Im r|`` and damping ratio ``|Re r| / |r|``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    DegenerateSignalError,
    DomainError,
    NoComplexRootError,
    NumericalFailureError,
    StiffsenseError,
)
from .trajectory import Trajectory, _iter_signals, is_effectively_constant

DEFAULT_ORDER = 4
COMPLEX_IMAG_TOL = 1e-9
PAIR_SELECTIONS = ("dominant", "lowest_frequency")


@dataclass(frozen=True, eq=False)
class LpcModel:
    order: int
    coefficients: np.ndarray
    error_variance: float
    poles: Optional[np.ndarray] = None


@dataclass(frozen=True)
class DampingEstimate:
    """Damping frequency/ratio from one method.

    LPC omega is in z-plane units (|Im r|); MSD omega is in rad/s. The two are
    never converted into one another.
    """

    omega: float
    zeta: float
    method: str
    kp: Optional[float] = None
    gof_percent: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("LPC", "MSD"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.method == "MSD" and (self.kp is None or self.gof_percent is None):
            raise DomainError("MSD estimates carry kp and gof_percent")


def _as_array(signal) -> np.ndarray:
    if isinstance(signal, Trajectory):
        return signal.samples
    return np.asarray(signal, dtype=float).ravel()


def autocorrelation(signal, max_lag: int) -> np.ndarray:
    """Biased (1/N) autocorrelation of the mean-removed signal, lags 0..max_lag."""
    x = _as_array(signal)
    n = x.size
    if not (0 <= max_lag < n):
        raise DomainError(f"max_lag={max_lag} must lie in [0, {n})")
    x = x - x.mean()
    return np.array([np.dot(x[: n - k], x[k:]) for k in range(max_lag + 1)]) / n


def levinson_durbin(acf, order: int = DEFAULT_ORDER) -> LpcModel:
    """Solve the Yule-Walker equations by the Levinson-Durbin recursion.

    Parameters
    ----------
    acf : array_like
        Autocorrelation values r[0], r[1], ... (at least ``order + 1``).
    order : int
        Prediction order p.

    Returns
    -------
    LpcModel
        Coefficients ``a_1..a_p`` of ``A(z) = 1 - sum a_k z^-k`` and the final
        prediction-error power. Poles are left unset.
    """
    r = np.asarray(acf, dtype=float)
    if order < 1:
        raise DomainError(f"order must be >= 1, got {order}")
    if r.size < order + 1:
        raise DomainError(f"need {order + 1} autocorrelation lags, got {r.size}")
    if not np.isfinite(r[0]) or r[0] <= 0:
        raise DegenerateSignalError(f"zero-lag autocorrelation must be positive, got {r[0]}")

    a = np.zeros(order)
    err = r[0]
    for i in range(order):
        k = (r[i + 1] - np.dot(a[:i], r[i:0:-1])) / err
        if not np.isfinite(k):
            raise NumericalFailureError(f"non-finite reflection coefficient at stage {i + 1}")
        a[:i] = a[:i] - k * a[:i][::-1]
        a[i] = k
        err = err * (1.0 - k * k)
    if not np.all(np.isfinite(a)) or not np.isfinite(err):
        raise NumericalFailureError("Levinson-Durbin produced non-finite output")
    return LpcModel(order=order, coefficients=a, error_variance=max(err, 0.0))


def lpc_poles(model: LpcModel) -> LpcModel:
    """Roots of ``z^p - a_1 z^(p-1) - ... - a_p`` via companion-matrix eigenvalues."""
    a = np.asarray(model.coefficients, dtype=float)
    p = a.size
    companion = np.zeros((p, p))
    companion[0, :] = a
    companion[1:, :-1] = np.eye(p - 1)
    try:
        poles = np.linalg.eigvals(companion)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigenvalue solver failed: {exc}") from exc
    if not np.all(np.isfinite(poles)):
        raise NumericalFailureError("non-finite poles")
    # Sort for reproducible ordering: modulus desc, then real, then imaginary part.
    order = np.lexsort((poles.imag, poles.real, -np.abs(poles)))
    return replace(model, poles=poles[order])


def extract_damping(model: LpcModel, selection: str = "dominant") -> DampingEstimate:
    """Damping frequency and ratio from the selected complex-conjugate pole pair.

    ``selection="dominant"`` takes the pair of largest modulus;
    ``"lowest_frequency"`` the pair with the smallest ``|Im r|``.
    """
    if model.poles is None:
        raise DomainError("poles are not populated; call lpc_poles first")
    if selection not in PAIR_SELECTIONS:
        raise DomainError(f"selection must be one of {PAIR_SELECTIONS}")
    poles = np.asarray(model.poles)
    upper = poles[poles.imag > COMPLEX_IMAG_TOL]
    if upper.size == 0:
        raise NoComplexRootError("no complex-conjugate pole pair")
    if selection == "dominant":
        r = upper[np.argmax(np.abs(upper))]
    else:
        r = upper[np.argmin(np.abs(upper.imag))]
    omega = abs(r.imag)
    zeta = min(abs(r.real) / abs(r), 1.0)
    return DampingEstimate(omega=float(omega), zeta=float(zeta), method="LPC")


def fit_lpc(signal, order: int = DEFAULT_ORDER) -> LpcModel:
    x = _as_array(signal)
    if x.size < 2 * order:
        raise DomainError(f"signal of length {x.size} too short for order {order}")
    if is_effectively_constant(x):
        raise DegenerateSignalError("signal is constant")
    return lpc_poles(levinson_durbin(autocorrelation(x, order), order))


def estimate_lpc(signal, order: int = DEFAULT_ORDER, selection: str = "dominant") -> DampingEstimate:
    """autocorrelation -> Levinson-Durbin -> poles -> damping parameters."""
    return extract_damping(fit_lpc(signal, order), selection)


class LpcDampingTransformer(TransformerMixin, BaseEstimator):
    """Map each signal to its LPC ``(omega, zeta)`` pair.

    Parameters
    ----------
    order : int, default=4
    selection : {"dominant", "lowest_frequency"}, default="dominant"
    errors : {"raise", "nan"}, default="raise"
        With ``"nan"`` a failed signal yields a row of NaN instead of raising.
    """

    def __init__(self, order=DEFAULT_ORDER, selection="dominant", errors="raise"):
        self.order = order
        self.selection = selection
        self.errors = errors

    def fit(self, X, y=None):
        if self.errors not in ("raise", "nan"):
            raise ValueError(f"errors must be 'raise' or 'nan', got {self.errors!r}")
        self.n_features_out_ = 2
        return self

    def transform(self, X):
        rows = []
        for x in _iter_signals(X):
            try:
                est = estimate_lpc(x, self.order, self.selection)
                rows.append((est.omega, est.zeta))
            except StiffsenseError:
                if self.errors == "raise":
                    raise
                rows.append((np.nan, np.nan))
        return np.asarray(rows, dtype=float).reshape(-1, 2)

    def get_feature_names_out(self, input_features=None):
        return np.array(["lpc_omega", "lpc_zeta"], dtype=object)
