import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rk4_step_response
from stiffsense.exceptions import DomainError, FitFailureError, UndefinedGOFError
from stiffsense.lpc import DampingEstimate
from stiffsense.msd import (
    FitOptions,
    MsdCanonicalParams,
    MsdFit,
    MsdPhysicalParams,
    MsdStepRegressor,
    canonical_to_physical,
    fit_pem,
    gof,
    is_outlier,
    physical_to_canonical,
    simulate_step_response,
    step_response,
    unit_step_response,
)
from stiffsense.trajectory import Trajectory

FS = 2000.0


def response(kp=1.0, omega=14.0, zeta=0.9, a=0.0, b=512.0, n=2000):
    return simulate_step_response(MsdCanonicalParams(kp, omega, zeta), a, b, n, FS)


# -- parameter conversion --------------------------------------------------


def test_physical_critical_identity():
    c = physical_to_canonical(MsdPhysicalParams(j=1, b=2, k=1, kf=1))
    assert (c.kp, c.omega, c.zeta) == (1.0, 1.0, 1.0)


def test_physical_light_damping():
    c = physical_to_canonical(MsdPhysicalParams(j=1, b=1e-4, k=196, kf=196))
    assert c.omega == pytest.approx(14.0)
    assert c.zeta == pytest.approx(1e-4 / 28.0)
    assert c.zeta == pytest.approx(3.57e-6, rel=1e-3)
    assert c.kp == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.5, 100), st.floats(0.01, 50), st.floats(0.1, 10))
def test_canonical_roundtrip(kp, omega, zeta, j):
    p = MsdCanonicalParams(kp, omega, zeta)
    back = physical_to_canonical(canonical_to_physical(p, j=j))
    assert back.kp == pytest.approx(kp, rel=1e-12)
    assert back.omega == pytest.approx(omega, rel=1e-12)
    assert back.zeta == pytest.approx(zeta, rel=1e-12)


def test_param_validation():
    with pytest.raises(DomainError):
        MsdCanonicalParams(1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        MsdCanonicalParams(1.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        MsdPhysicalParams(0.0, 1.0, 1.0, 1.0)


# -- closed-form response --------------------------------------------------


@pytest.mark.parametrize("zeta", [0.3, 0.9, 1.0, 1.0 + 5e-10, 1.5, 4.0])
def test_closed_form_matches_rk4(zeta):
    omega, t_end = 12.0, 0.6
    t, ref = rk4_step_response(1.0, omega, zeta, t_end, dt=1e-5)
    got = unit_step_response(omega, zeta, t)
    assert np.max(np.abs(got - ref)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(2.0, 40.0), st.floats(0.05, 1.0))
def test_settles_at_gain(kp, omega, zeta):
    t_settle = 10.0 / (zeta * omega)
    y = step_response(MsdCanonicalParams(kp, omega, zeta), 0.0, 1.0, [t_settle])
    assert abs(y[0] - kp) < 1e-3 * kp


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(2.0, 40.0), st.floats(1.0, 5.0))
def test_settles_at_gain_overdamped(kp, omega, zeta):
    # The slow pole sits at omega / (zeta + sqrt(zeta^2 - 1)), not zeta * omega.
    t_settle = 10.0 * (zeta + math.sqrt(zeta * zeta - 1.0)) / omega
    y = step_response(MsdCanonicalParams(kp, omega, zeta), 0.0, 1.0, [t_settle])
    assert abs(y[0] - kp) < 1e-3 * kp


def test_critical_no_overshoot():
    y = unit_step_response(10.0, 1.0, np.linspace(0, 3, 6001))
    assert np.all(np.diff(y) >= -1e-15)
    assert y.max() <= 1.0


def test_overshoot_half_damping():
    y = unit_step_response(10.0, 0.5, np.linspace(0, 2, 200_001))
    expected = math.exp(-math.pi * 0.5 / math.sqrt(0.75))
    assert expected == pytest.approx(0.16303, abs=1e-5)
    assert abs((y.max() - 1.0) - expected) < 1e-3


def test_regimes_continuous_near_critical():
    t = np.linspace(0, 1, 500)
    lo = unit_step_response(9.0, 1 - 1e-7, t)
    mid = unit_step_response(9.0, 1.0, t)
    hi = unit_step_response(9.0, 1 + 1e-7, t)
    assert np.max(np.abs(lo - mid)) < 1e-6 and np.max(np.abs(hi - mid)) < 1e-6


def test_simulate_endpoints_and_roles():
    tr = response(kp=1.2, a=100.0, b=612.0, n=16000)
    assert tr.samples[0] == pytest.approx(100.0)
    assert tr.samples[-1] == pytest.approx(100.0 + 1.2 * 512.0, rel=1e-6)
    with pytest.raises(DomainError):
        simulate_step_response(MsdCanonicalParams(1, 1, 1), 0.0, 1.0, 1, FS)


# -- GOF ------------------------------------------------------------------------


def test_gof_examples():
    assert gof([0, 1, 2], [0, 1, 2]) == 100.0
    assert gof([0, 1, 2], [1, 1, 1]) == 0.0
    assert gof([0, 1, 2], [0, 1, 1]) == pytest.approx(100 * (1 - 1 / math.sqrt(2)), abs=1e-12)
    assert gof([0, 1, 2], [0, 1, 1]) == pytest.approx(29.29, abs=5e-3)


def test_gof_constant_actual():
    with pytest.raises(UndefinedGOFError):
        gof([3, 3, 3], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=40).filter(lambda v: np.ptp(v) > 1e-3))
def test_gof_self_is_100(a):
    assert gof(a, a) == 100.0


# -- PEM fit --------------------------------------------------------------------


def test_fit_noiseless_recovery():
    fit = fit_pem(response(), step_from=0.0, step_to=512.0)
    assert isinstance(fit, MsdFit)
    assert abs(fit.params.omega - 14) / 14 < 0.02
    assert abs(fit.params.zeta - 0.9) / 0.9 < 0.05
    assert fit.gof_percent > 99
    assert fit.converged and not fit.at_bound


@pytest.mark.parametrize("kp,omega,zeta", [(0.8, 8, 0.5), (1.2, 20, 1.1), (1.0, 11, 0.7)])
def test_fit_grid_corners(kp, omega, zeta):
    fit = fit_pem(response(kp, omega, zeta), step_from=0.0, step_to=512.0)
    assert abs(fit.params.omega - omega) / omega < 0.02
    assert abs(fit.params.zeta - zeta) / zeta < 0.05
    assert abs(fit.params.kp - kp) / kp < 0.01


def test_fit_noisy_gof_band():
    clean = response().samples
    power = np.var(clean)
    gofs = []
    for seed in range(20):
        noise = np.random.default_rng(seed).normal(0, math.sqrt(power / 100.0), clean.size)
        gofs.append(fit_pem(Trajectory(clean + noise, FS), step_from=0, step_to=512).gof_percent)
    assert 70 < min(gofs) and max(gofs) < 99.5
    # Frozen regression band for these seeds.
    assert 89.5 < min(gofs) and max(gofs) < 90.8


def test_fit_translation_invariance():
    base = fit_pem(response(), step_from=0.0, step_to=512.0)
    shifted_tr = Trajectory(response().samples + 300.0, FS)
    shifted = fit_pem(shifted_tr, step_from=300.0, step_to=812.0)
    assert shifted.params.omega == pytest.approx(base.params.omega, rel=1e-4)
    assert shifted.params.zeta == pytest.approx(base.params.zeta, rel=1e-4)
    assert shifted.params.kp == pytest.approx(base.params.kp, rel=1e-6)


def test_fit_uses_first_last_fallback():
    tr = response(n=4000)
    fit = fit_pem(tr)
    assert fit.params.omega == pytest.approx(14.0, rel=0.02)


def test_fit_full_simplex_mode():
    fit = fit_pem(response(), options=FitOptions(profile_gain=False), step_from=0, step_to=512)
    assert fit.params.omega == pytest.approx(14.0, rel=0.02)
    assert fit.params.zeta == pytest.approx(0.9, rel=0.05)


def test_fit_constant_signal():
    with pytest.raises((FitFailureError, UndefinedGOFError)):
        fit_pem(Trajectory(np.full(100, 5.0), FS), step_from=0.0, step_to=512.0)


def test_fit_options_roundtrip():
    o = FitOptions(omega_starts=(4.0,), xtol=1e-5)
    assert FitOptions.from_dict(o.to_dict()) == o
    with pytest.raises(DomainError):
        FitOptions(omega_bounds=(5.0, 1.0))


# -- outlier rule ----------------------------------------------------------------


@pytest.mark.parametrize("zeta,expected", [(0.97, False), (0.0, True), (100.0, False), (100.01, True)])
def test_outlier_boundaries(zeta, expected):
    est = DampingEstimate(omega=10.0, zeta=zeta, method="MSD", kp=1.0, gof_percent=90.0)
    assert is_outlier(est) is expected


# -- estimator API ---------------------------------------------------------------


def test_regressor_fit_predict():
    tr = response(n=1200)
    X = tr.times[:, None]
    reg = MsdStepRegressor(step_from=0.0, step_to=512.0).fit(X, tr.samples)
    assert reg.omega_ == pytest.approx(14.0, rel=0.02)
    assert reg.score(X, tr.samples) > 0.999
    np.testing.assert_allclose(reg.predict(X[:5]), tr.samples[:5], atol=1.0)
    assert "options" in reg.get_params()
