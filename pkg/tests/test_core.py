import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from epipolicy import (DomainError, DriftModel, EpidemicParams, IntegratorConfig,
                       ModelValidityError, NumericalError, PolicyPlan, attenuation_at,
                       control_at, effective_r, phase_index, simulate_policy,
                       transmission_at)

from oracles import piecewise_beta, rk4_reference

FR = EpidemicParams(3.5, 0.1857, 0.16, 66e6, 1.33e5 / 66e6)
DRIFT = DriftModel(0.001, 0.002, 0.002)


# --- strategies -----------------------------------------------------------

r_values = st.floats(0.0, 4.0, allow_nan=False)


@st.composite
def cases(draw, max_horizon=300):
    horizon = draw(st.integers(1, max_horizon))
    t0 = draw(st.integers(0, horizon))
    t1 = draw(st.integers(0, horizon - t0))
    t2 = draw(st.integers(0, horizon - t0 - t1))
    r0 = draw(st.floats(0.5, 5.0))
    plan = PolicyPlan(t0, t1, t2, draw(r_values), draw(r_values), draw(r_values), horizon)
    params = EpidemicParams(r0, draw(st.floats(0.05, 0.5)), draw(st.floats(0.05, 0.5)),
                            draw(st.floats(1e3, 1e8)), draw(st.floats(0.0, 0.05)))
    amax = 1.0 / horizon
    drift = DriftModel(*(draw(st.floats(0.0, min(amax, 0.004))) for _ in range(3)))
    return params, plan, drift


# --- validation -----------------------------------------------------------

def test_params_reject_bad_values():
    for bad in [dict(r0=0), dict(delta=-1), dict(gamma=math.nan), dict(population=0),
                dict(exposed0=1.0), dict(exposed0=-0.1)]:
        kw = dict(r0=3.5, delta=0.2, gamma=0.2, population=1e6, exposed0=1e-3)
        kw.update(bad)
        with pytest.raises(DomainError):
            EpidemicParams(**kw)


def test_plan_rejects_overlong_and_fractional_days():
    with pytest.raises(DomainError):
        PolicyPlan(100, 100, 101, 0.4, 0.7, 1.0, 300)
    with pytest.raises(DomainError):
        PolicyPlan(1.5, 30, 10, 0.4, 0.7, 1.0, 300)
    with pytest.raises(DomainError):
        PolicyPlan(1, 30, 10, -0.1, 0.7, 1.0, 300)
    assert PolicyPlan(2.0, 30, 10, 0.4, 0.7, 1.0, 300).tau0 == 2


def test_drift_that_turns_attenuation_negative_is_rejected():
    with pytest.raises(ModelValidityError):
        simulate_policy(FR, PolicyPlan(0, 300, 0, 0.4, 0.7, 1.0, 300), DriftModel(0.004, 0, 0))


def test_integrator_config_validation():
    with pytest.raises(DomainError):
        IntegratorConfig(method="euler")
    with pytest.raises(DomainError):
        IntegratorConfig(substeps_per_day=0)


# --- piecewise schedule ---------------------------------------------------

def test_phase_intervals_are_half_open():
    plan = PolicyPlan(5, 10, 20, 0.4, 0.8, 1.2, 100)
    assert [phase_index(t, plan) for t in (0, 4.999, 5, 14.999, 15, 34.999, 35, 100)] == \
        [0, 0, 1, 1, 2, 2, 3, 3]


def test_zero_length_phases_are_skipped():
    plan = PolicyPlan(0, 0, 10, 0.4, 0.8, 1.2, 50)
    assert phase_index(0, plan) == 2
    assert phase_index(10, plan) == 3


def test_attenuation_resets_at_each_phase_start():
    plan = PolicyPlan(5, 10, 20, 0.4, 0.8, 1.2, 100)
    assert attenuation_at(4, plan, DRIFT) == 1.0
    assert attenuation_at(5, plan, DRIFT) == 1.0
    assert attenuation_at(14, plan, DRIFT) == pytest.approx(1 - 0.001 * 9)
    assert attenuation_at(15, plan, DRIFT) == 1.0
    assert attenuation_at(35, plan, DRIFT) == 1.0
    assert attenuation_at(45, plan, DRIFT) == pytest.approx(1 - 0.002 * 10)


def test_transmission_and_control_match_definition():
    plan = PolicyPlan(5, 10, 20, 0.4, 0.8, 1.2, 100)
    starts = plan.phase_starts
    for t in np.linspace(0, 100, 57):
        ref = piecewise_beta(t, FR.r0, FR.delta, starts, plan.targets, DRIFT.slopes)
        assert transmission_at(t, plan, DRIFT, FR) == pytest.approx(ref, rel=1e-13, abs=1e-15)
        assert effective_r(t, plan, DRIFT, FR) == pytest.approx(ref / FR.delta, rel=1e-12)
    assert control_at(7, plan, FR) == pytest.approx(FR.delta * (3.5 - 0.4))
    assert control_at(2, plan, FR) == 0.0


@given(cases(max_horizon=200))
def test_effective_r_equals_target_exactly_at_phase_start(case):
    params, plan, drift = case
    for k, start in enumerate(plan.phase_starts[1:], start=1):
        if start >= plan.horizon or phase_index(start, plan) != k:
            continue
        assert abs(effective_r(start, plan, drift, params) - plan.targets[k - 1]) <= 1e-12


def test_trajectory_r_eff_at_phase_start_equals_target(france):
    plan = PolicyPlan(3, 40, 60, 0.4, 0.7, 1.3, 300)
    traj = simulate_policy(france.params, plan, france.drift)
    for k, start in enumerate(plan.phase_starts[1:], start=1):
        assert abs(traj.r_eff[start] - plan.targets[k - 1]) <= 1e-12
        assert traj.phase[start] == k


# --- invariants over a randomized corpus ----------------------------------

@settings(max_examples=1000)
@given(cases())
def test_conservation_and_monotone_susceptibles(case):
    params, plan, drift = case
    traj = simulate_policy(params, plan, drift)
    total = traj.s + traj.e + traj.i + traj.r
    assert np.all(np.abs(total - 1.0) <= 1e-9)
    assert np.all(np.diff(traj.s) <= 0.0)
    assert np.all(np.diff(traj.r) >= 0.0)
    for x in (traj.s, traj.e, traj.i, traj.r):
        assert np.all(x >= 0.0)
    assert len(traj.times) == plan.horizon + 1


@given(cases(max_horizon=120))
def test_rk4_matches_independent_reference(case):
    params, plan, drift = case
    traj = simulate_policy(params, plan, drift, IntegratorConfig(substeps_per_day=8))
    ref = rk4_reference(params.r0, params.delta, params.gamma, params.exposed0,
                        (plan.tau0, plan.tau1, plan.tau2, plan.r1, plan.r2, plan.r3, plan.horizon),
                        drift.slopes, 8)
    got = np.column_stack([traj.s, traj.e, traj.i, traj.r])
    assert np.max(np.abs(got - ref)) <= 1e-12


def test_rk4_converges_with_substeps(france):
    plan = PolicyPlan(17, 55, 228, 0.6, 0.9, 0.9, 300)
    a = simulate_policy(france.params, plan, france.drift, IntegratorConfig(substeps_per_day=20))
    b = simulate_policy(france.params, plan, france.drift, IntegratorConfig(substeps_per_day=40))
    for x, y in ((a.s, b.s), (a.e, b.e), (a.i, b.i), (a.r, b.r)):
        assert np.max(np.abs(x - y)) < 1e-7


def test_adaptive_agrees_with_rk4(france):
    plan = PolicyPlan(3, 40, 60, 0.4, 0.7, 1.3, 300)
    a = simulate_policy(france.params, plan, france.drift)
    b = simulate_policy(france.params, plan, france.drift, IntegratorConfig(method="adaptive"))
    assert np.max(np.abs(a.i - b.i)) < 1e-8
    assert np.max(np.abs(a.s - b.s)) < 1e-8


def test_zero_control_reduces_to_free_seir():
    params = FR
    plan = PolicyPlan(20, 30, 40, params.r0, params.r0, params.r0, 150)
    traj = simulate_policy(params, plan, DriftModel(0.003, 0.003, 0.003))

    def rhs(t, y):
        s, e, i, _ = y
        f = params.beta0 * i * s
        return [-f, f - params.gamma * e, params.gamma * e - params.delta * i, params.delta * i]

    sol = solve_ivp(rhs, (0, 150), params.initial_state(), method="DOP853", rtol=1e-12,
                    atol=1e-14, t_eval=np.arange(151))
    assert np.max(np.abs(traj.i - sol.y[2])) < 1e-8
    assert np.all(traj.r_eff == params.r0)


def test_no_initial_exposure_stays_disease_free():
    params = EpidemicParams(3.5, 0.1857, 0.16, 66e6, 0.0)
    traj = simulate_policy(params, PolicyPlan(0, 0, 0, 3.5, 3.5, 3.5, 100), DRIFT)
    assert np.all(traj.infected_count == 0.0)
    assert traj.infected_total == 0.0


def test_no_control_peak_matches_fine_reference(france):
    """DERIVED: peak of the uncontrolled epidemic against a 1000-substep integration."""
    plan = PolicyPlan(300, 0, 0, 3.5, 3.5, 3.5, 300)
    traj = simulate_policy(france.params, plan, france.drift)
    p = france.params

    def rhs(t, y):
        s, e, i, _ = y
        f = p.beta0 * i * s
        return [-f, f - p.gamma * e, p.gamma * e - p.delta * i, p.delta * i]

    sol = solve_ivp(rhs, (0, 300), p.initial_state(), method="RK45", max_step=1e-3 * 50,
                    rtol=1e-11, atol=1e-14, t_eval=np.arange(301))
    assert int(np.argmax(traj.i)) == int(np.argmax(sol.y[2]))
    assert traj.i.max() == pytest.approx(sol.y[2].max(), rel=1e-8)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_drift_raises_transmission_within_phase(k):
    """Positive slope erodes the control, so R(t) rises through a controlled phase."""
    plan = PolicyPlan(10, 40, 40, 0.5, 0.8, 1.0, 200)
    lo = plan.phase_starts[k]
    hi = (plan.phase_starts + (plan.horizon,))[k + 1]
    r = [effective_r(t, plan, DRIFT, FR) for t in np.arange(lo, hi)]
    assert np.all(np.diff(r) > 0)
    no = DriftModel(0, 0, 0)
    assert all(effective_r(t, plan, no, FR) == plan.targets[k - 1] for t in np.arange(lo, hi))


def test_stronger_lockdown_lowers_infections(france):
    base = simulate_policy(france.params, PolicyPlan(5, 40, 60, 0.8, 1.1, 1.3, 300), france.drift)
    strong = simulate_policy(france.params, PolicyPlan(5, 40, 60, 0.4, 1.1, 1.3, 300), france.drift)
    assert strong.i[45] < base.i[45]


def test_trajectory_arrays_are_read_only(france):
    traj = simulate_policy(france.params, PolicyPlan(3, 40, 60, 0.4, 0.7, 1.3, 300), france.drift)
    with pytest.raises(ValueError):
        traj.s[0] = 0.5


def test_numerical_error_on_runaway_state():
    # negative control with a huge R target drives s far below zero in one step
    params = EpidemicParams(3.0, 0.2, 0.2, 1e6, 0.5)
    plan = PolicyPlan(0, 50, 0, 4000.0, 1.0, 1.0, 50)
    with pytest.raises(NumericalError) as info:
        simulate_policy(params, plan, DriftModel(0, 0, 0), IntegratorConfig(substeps_per_day=1))
    assert info.value.time is not None
