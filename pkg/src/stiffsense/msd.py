"""Mass-spring-damper step response, goodness of fit and prediction-error fitting.

Canonical plant: ``X_a(s) / X_t(s) = Kp w^2 / (s^2 + 2 w zeta s + w^2)`` driven
by a step of the target position, starting at rest at the start position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DegenerateSignalError, DomainError, FitFailureError, UndefinedGOFError
from .lpc import DampingEstimate
from .trajectory import Role, TrialMeta, Trajectory, is_effectively_constant

CRITICAL_TOL = 1e-9
# Initial simplex edge, in log units for omega/zeta (and gain units for kp).
SIMPLEX_STEP = 0.2


@dataclass(frozen=True)
class MsdCanonicalParams:
    kp: float
    omega: float
    zeta: float

    def __post_init__(self):
        vals = (self.kp, self.omega, self.zeta)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite MSD parameters {vals}")
        if self.omega <= 0 or self.zeta <= 0:
            raise DomainError(f"omega and zeta must be positive, got {self.omega}, {self.zeta}")


@dataclass(frozen=True)
class MsdPhysicalParams:
    """Inertia ``j``, viscous damping ``b``, stiffness ``k``, feedforward gain ``kf``."""

    j: float
    b: float
    k: float
    kf: float

    def __post_init__(self):
        if not (self.j > 0 and self.b > 0 and self.k > 0):
            raise DomainError("j, b and k must be positive")
        if not math.isfinite(self.kf):
            raise DomainError("kf must be finite")


def physical_to_canonical(p: MsdPhysicalParams) -> MsdCanonicalParams:
    return MsdCanonicalParams(
        kp=p.kf / p.k,
        omega=math.sqrt(p.k / p.j),
        zeta=p.b / (2.0 * math.sqrt(p.k * p.j)),
    )


def canonical_to_physical(p: MsdCanonicalParams, j: float = 1.0) -> MsdPhysicalParams:
    """One physical representative of the canonical parameters (inertia fixed to ``j``)."""
    k = j * p.omega**2
    return MsdPhysicalParams(j=j, b=2.0 * p.zeta * math.sqrt(k * j), k=k, kf=p.kp * k)


def unit_step_response(omega: float, zeta: float, t) -> np.ndarray:
    """Unit-gain step response of the normalized second-order plant at times ``t``."""
    t = np.asarray(t, dtype=float)
    if abs(zeta - 1.0) < CRITICAL_TOL:
        wt = omega * t
        return 1.0 - np.exp(-wt) * (1.0 + wt)
    if zeta < 1.0:
        root = math.sqrt(1.0 - zeta * zeta)
        wd = omega * root
        decay = np.exp(-zeta * omega * t)
        return 1.0 - decay * (np.cos(wd * t) + (zeta / root) * np.sin(wd * t))
    root = math.sqrt(zeta * zeta - 1.0)
    slow = -omega / (zeta + root)  # = -omega (zeta - root), computed without cancellation
    fast = -omega * (zeta + root)
    return 1.0 + (fast * np.exp(slow * t) - slow * np.exp(fast * t)) / (slow - fast)


def step_response(params: MsdCanonicalParams, step_from: float, step_to: float, t) -> np.ndarray:
    return step_from + params.kp * (step_to - step_from) * unit_step_response(
        params.omega, params.zeta, t
    )


def simulate_step_response(
    params: MsdCanonicalParams,
    step_from: float,
    step_to: float,
    n_samples: int,
    sample_rate_hz: float,
) -> Trajectory:
    """Closed-form response sampled at ``k / sample_rate_hz``, k = 0..n_samples-1.

    The response settles at ``step_from + kp * (step_to - step_from)``.
    """
    if not (math.isfinite(step_from) and math.isfinite(step_to)):
        raise DomainError("step endpoints must be finite")
    if n_samples < 2:
        raise DomainError(f"n_samples must be >= 2, got {n_samples}")
    t = np.arange(n_samples) / float(sample_rate_hz)
    return Trajectory(step_response(params, step_from, step_to, t), sample_rate_hz, Role.SIMULATED)


def _values(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.samples
    return np.asarray(x, dtype=float).ravel()


def gof(actual, simulated) -> float:
    """Normalized-RMSE fit, ``100 * (1 - ||a - s|| / ||a - mean(a)||)``.

    100 means a perfect match; the value is negative for fits worse than the
    mean of ``actual``.
    """
    a = _values(actual)
    s = _values(simulated)
    if a.shape != s.shape:
        raise DomainError(f"length mismatch: {a.size} vs {s.size}")
    denom = np.linalg.norm(a - a.mean())
    if denom == 0:
        raise UndefinedGOFError("actual signal is constant")
    return float(100.0 * (1.0 - np.linalg.norm(a - s) / denom))


@dataclass(frozen=True)
class FitOptions:
    """Nelder-Mead prediction-error fit settings.

    ``profile_gain`` solves the static gain in closed form at every simplex
    vertex (it enters the response linearly), leaving a 2-D search over
    ``(log omega, log zeta)``. With ``profile_gain=False`` the simplex runs
    over all three parameters from ``kp`` = observed final-value ratio.
    """

    omega_starts: tuple = (5.0, 13.0, 25.0)
    zeta_starts: tuple = (0.5, 1.0)
    omega_bounds: tuple = (0.1, 500.0)
    zeta_bounds: tuple = (1e-4, 200.0)
    xtol: float = 1e-6
    max_evals: int = 2000
    profile_gain: bool = True

    def __post_init__(self):
        lo, hi = self.omega_bounds
        if not (0 < lo < hi):
            raise DomainError(f"bad omega_bounds {self.omega_bounds}")
        lo, hi = self.zeta_bounds
        if not (0 < lo < hi):
            raise DomainError(f"bad zeta_bounds {self.zeta_bounds}")
        if self.max_evals < 10 or self.xtol <= 0:
            raise DomainError("max_evals must be >= 10 and xtol > 0")
        if not self.omega_starts or not self.zeta_starts:
            raise DomainError("at least one start is required")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for name in ("omega_starts", "zeta_starts", "omega_bounds", "zeta_bounds"):
            if name in d:
                d[name] = tuple(float(v) for v in d[name])
        return cls(**d)

    def to_dict(self):
        return {
            "omega_starts": list(self.omega_starts),
            "zeta_starts": list(self.zeta_starts),
            "omega_bounds": list(self.omega_bounds),
            "zeta_bounds": list(self.zeta_bounds),
            "xtol": self.xtol,
            "max_evals": self.max_evals,
            "profile_gain": self.profile_gain,
        }


@dataclass(frozen=True)
class MsdFit:
    params: MsdCanonicalParams
    gof_percent: float
    residual_ss: float
    converged: bool
    iterations: int
    at_bound: bool = False
    start_index: int = 0

    def __post_init__(self):
        if not self.gof_percent <= 100.0:
            raise DomainError(f"gof_percent must be <= 100, got {self.gof_percent}")
        if not self.residual_ss >= 0:
            raise DomainError("residual_ss must be non-negative")

    def to_estimate(self) -> DampingEstimate:
        return DampingEstimate(
            omega=self.params.omega,
            zeta=self.params.zeta,
            method="MSD",
            kp=self.params.kp,
            gof_percent=self.gof_percent,
        )


def _step_endpoints(x: np.ndarray, meta: Optional[TrialMeta], step_from, step_to):
    if step_from is None and meta is not None and math.isfinite(meta.start_x_px):
        step_from = meta.start_x_px
    if step_to is None and meta is not None and math.isfinite(meta.target_x_px):
        step_to = meta.target_x_px
    # Fallback when positions are unknown: first/last sample.
    if step_from is None:
        step_from = float(x[0])
    if step_to is None:
        step_to = float(x[-1])
    if step_to == step_from:
        raise DegenerateSignalError("step amplitude is zero")
    return float(step_from), float(step_to)


def _fit_curve(t, x, step_from, step_to, options: FitOptions) -> MsdFit:
    amp = step_to - step_from
    dx = x - step_from
    if is_effectively_constant(x):
        raise UndefinedGOFError("actual signal is constant")
    lo = np.log([options.omega_bounds[0], options.zeta_bounds[0]])
    hi = np.log([options.omega_bounds[1], options.zeta_bounds[1]])

    def gain_for(u):
        denom = np.dot(u, u)
        return np.dot(u, dx) / (amp * denom) if denom > 0 else 0.0

    def unpack(theta):
        # The optimizer keeps vertices inside the (log) bounds.
        if options.profile_gain:
            omega, zeta = math.exp(theta[0]), math.exp(theta[1])
            u = unit_step_response(omega, zeta, t)
            return gain_for(u), omega, zeta, u
        omega, zeta = math.exp(theta[1]), math.exp(theta[2])
        return theta[0], omega, zeta, unit_step_response(omega, zeta, t)

    def cost(theta):
        kp, _, _, u = unpack(theta)
        r = dx - kp * amp * u
        c = float(np.dot(r, r))
        return c if math.isfinite(c) else np.inf

    kp0 = (x[-1] - step_from) / amp
    results = []
    for w0 in options.omega_starts:
        for z0 in options.zeta_starts:
            x0 = np.log([w0, z0])
            bounds = list(zip(lo, hi))
            if not options.profile_gain:
                x0 = np.r_[kp0, x0]
                bounds = [(None, None)] + bounds
            simplex = np.vstack([x0, x0 + np.diag(np.full(x0.size, SIMPLEX_STEP))])
            res = minimize(
                cost,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={
                    "xatol": options.xtol,
                    "fatol": 1e-12 * float(np.dot(dx, dx)),
                    "maxfev": options.max_evals,
                    "initial_simplex": simplex,
                },
            )
            results.append(res)

    finite = [i for i, r in enumerate(results) if np.isfinite(r.fun)]
    if not finite:
        raise FitFailureError("no optimizer start produced a finite cost")
    # Lowest cost wins; ties go to the earliest start.
    best_i = min(finite, key=lambda i: (results[i].fun, i))
    best = results[best_i]
    kp, omega, zeta, u = unpack(best.x)
    sim = step_from + kp * amp * u
    log_wz = np.log([omega, zeta])
    at_bound = bool(np.any(np.abs(log_wz - lo) < 1e-6) or np.any(np.abs(log_wz - hi) < 1e-6))
    params = MsdCanonicalParams(kp=float(kp), omega=float(omega), zeta=float(zeta))
    return MsdFit(
        params=params,
        gof_percent=gof(x, sim),
        residual_ss=float(np.dot(x - sim, x - sim)),
        converged=bool(best.success) and not at_bound,
        iterations=int(sum(r.nfev for r in results)),
        at_bound=at_bound,
        start_index=best_i,
    )


def fit_pem(
    signal: Trajectory,
    meta: Optional[TrialMeta] = None,
    options: Optional[FitOptions] = None,
    step_from: Optional[float] = None,
    step_to: Optional[float] = None,
) -> MsdFit:
    """Fit ``(kp, omega, zeta)`` by minimizing the squared simulation error.

    The step input runs from ``meta.start_x_px`` to ``meta.target_x_px``
    (explicit ``step_from``/``step_to`` override; without either the first
    and last samples are used). Every start in the ``omega x zeta`` grid of
    ``options`` is run and the lowest-cost result is returned.
    """
    options = options or FitOptions()
    x = _values(signal)
    fs = signal.sample_rate_hz if isinstance(signal, Trajectory) else 2000.0
    t = np.arange(x.size) / fs
    a, b = _step_endpoints(x, meta, step_from, step_to)
    return _fit_curve(t, x, a, b, options)


def is_outlier(est) -> bool:
    """True iff the damping ratio is ``<= 0`` or ``> 100``."""
    zeta = est.params.zeta if isinstance(est, MsdFit) else est.zeta
    return bool(zeta <= 0 or zeta > 100)


class MsdStepRegressor(RegressorMixin, BaseEstimator):
    """Second-order step-response model as a regressor of position on time.

    ``fit(X, y)`` takes sample times ``X`` (shape ``(n, 1)``, seconds) and
    positions ``y``; ``predict`` evaluates the fitted response at new times.

    Parameters
    ----------
    step_from, step_to : float or None
        Step input endpoints. ``None`` falls back to the first/last sample.
    options : FitOptions or None
    """

    def __init__(self, step_from=None, step_to=None, options=None):
        self.step_from = step_from
        self.step_to = step_to
        self.options = options

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("X must hold a single column of sample times")
        t = X[:, 0]
        a, b = _step_endpoints(y, None, self.step_from, self.step_to)
        fit = _fit_curve(t, y, a, b, self.options or FitOptions())
        self.fit_ = fit
        self.kp_ = fit.params.kp
        self.omega_ = fit.params.omega
        self.zeta_ = fit.params.zeta
        self.gof_ = fit.gof_percent
        self.step_from_, self.step_to_ = a, b
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X)
        return step_response(self.fit_.params, self.step_from_, self.step_to_, X[:, 0])
