"""SEIR dynamics under a four-phase, piecewise-constant control with drift.

The transmission rate in phase ``k`` is

    beta(t) = R0*delta - u_k * a(t),   u_k = delta*(R0 - R_k),
    a(t) = 1 - a_k * (t - start_k),

so the effective reproduction number starts the phase at ``R_k`` and drifts
linearly back toward ``R0``.  Phase boundaries are ``tau0``, ``tau0+tau1``
and ``tau0+tau1+tau2`` (the taus are durations), phases are half-open
``[start, next_start)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .errors import DomainError, ModelValidityError, NumericalError

CONSERVATION_TOL = 1e-9


def _require(cond, exc, msg):
    if not cond:
        raise exc(msg)


def _as_day(name, value):
    """Coerce an integral day count to ``int``; days live on a daily grid."""
    if isinstance(value, (bool, np.bool_)):
        raise DomainError(f"{name} must be an integer number of days")
    if isinstance(value, (int, np.integer)):
        return int(value)
    f = float(value)
    if not math.isfinite(f) or f != round(f):
        raise DomainError(f"{name} must be an integer number of days, got {value!r}")
    return int(round(f))


@dataclass(frozen=True)
class EpidemicParams:
    """Biological and demographic constants.

    ``delta`` and ``gamma`` are per-day rates, ``exposed0`` is the initial
    exposed *fraction* of ``population``.
    """

    r0: float
    delta: float
    gamma: float
    population: float
    exposed0: float

    def __post_init__(self):
        for name in ("r0", "delta", "gamma", "population"):
            v = getattr(self, name)
            _require(math.isfinite(v) and v > 0, DomainError, f"{name} must be > 0, got {v!r}")
        _require(0 <= self.exposed0 < 1, DomainError,
                 f"exposed0 must lie in [0, 1), got {self.exposed0!r}")

    @property
    def beta0(self) -> float:
        """Uncontrolled transmission rate R0*delta."""
        return self.r0 * self.delta

    def initial_state(self) -> np.ndarray:
        return np.array([1.0 - self.exposed0, self.exposed0, 0.0, 0.0])


@dataclass(frozen=True)
class PolicyPlan:
    """The six decision variables of a four-phase policy plus the horizon.

    All durations are whole days; the adjustment phase runs from
    ``tau0 + tau1 + tau2`` to ``horizon``.
    """

    tau0: int
    tau1: int
    tau2: int
    r1: float
    r2: float
    r3: float
    horizon: int

    def __post_init__(self):
        for name in ("tau0", "tau1", "tau2", "horizon"):
            object.__setattr__(self, name, _as_day(name, getattr(self, name)))
        for name in ("r1", "r2", "r3"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _require(self.tau0 >= 0 and self.tau1 >= 0 and self.tau2 >= 0, DomainError,
                 f"phase durations must be >= 0, got {self.durations}")
        _require(self.tau0 + self.tau1 + self.tau2 <= self.horizon, DomainError,
                 f"tau0+tau1+tau2 = {self.tau0 + self.tau1 + self.tau2} exceeds horizon {self.horizon}")
        for name in ("r1", "r2", "r3"):
            v = getattr(self, name)
            _require(math.isfinite(v) and v >= 0, DomainError, f"{name} must be >= 0, got {v!r}")

    @property
    def durations(self) -> tuple[int, int, int, int]:
        rest = self.horizon - self.tau0 - self.tau1 - self.tau2
        return (self.tau0, self.tau1, self.tau2, rest)

    @property
    def phase_starts(self) -> tuple[int, int, int, int]:
        return (0, self.tau0, self.tau0 + self.tau1, self.tau0 + self.tau1 + self.tau2)

    @property
    def targets(self) -> tuple[float, float, float]:
        return (self.r1, self.r2, self.r3)

    def key(self) -> tuple:
        """Lexicographic tie-break key (tau0, tau1, tau2, R1, R2, R3)."""
        return (self.tau0, self.tau1, self.tau2, self.r1, self.r2, self.r3)

    def replace(self, **changes) -> "PolicyPlan":
        kw = {f: getattr(self, f) for f in ("tau0", "tau1", "tau2", "r1", "r2", "r3", "horizon")}
        kw.update(changes)
        return PolicyPlan(**kw)


@dataclass(frozen=True)
class DriftModel:
    """Per-phase attenuation slopes (1/day) for phases 1, 2 and 3."""

    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        for name in ("a1", "a2", "a3"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            _require(math.isfinite(v) and v >= 0, DomainError, f"{name} must be >= 0, got {v!r}")

    @property
    def slopes(self) -> tuple[float, float, float]:
        return (self.a1, self.a2, self.a3)

    def check_horizon(self, horizon: int) -> None:
        """Reject slopes for which the attenuation could turn negative.

        A phase may start at day 0, so the longest elapsed time is ``horizon``.
        """
        for k, a in enumerate(self.slopes, start=1):
            if 1.0 - a * horizon < 0.0:
                raise ModelValidityError(
                    f"a{k}={a} makes the attenuation negative within a {horizon}-day horizon")


@dataclass(frozen=True)
class IntegratorConfig:
    method: Literal["rk4", "adaptive"] = "rk4"
    substeps_per_day: int = 20
    rtol: float = 1e-9
    atol: float = 1e-12

    def __post_init__(self):
        _require(self.method in ("rk4", "adaptive"), DomainError,
                 f"unknown integration method {self.method!r}")
        object.__setattr__(self, "substeps_per_day", _as_day("substeps_per_day", self.substeps_per_day))
        _require(self.substeps_per_day >= 1, DomainError, "substeps_per_day must be >= 1")
        _require(self.rtol > 0 and self.atol > 0, DomainError, "tolerances must be > 0")


def _readonly(a):
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Daily samples ``0..T`` of the SEIR fractions and derived series."""

    times: np.ndarray
    s: np.ndarray
    e: np.ndarray
    i: np.ndarray
    r: np.ndarray
    r_eff: np.ndarray
    attenuation: np.ndarray
    phase: np.ndarray
    population: float

    @property
    def horizon(self) -> int:
        return int(self.times[-1])

    @property
    def infected_count(self) -> np.ndarray:
        """Currently infected persons, N*i(t)."""
        return self.population * self.i

    def icu_load(self, sigma_icu: float) -> np.ndarray:
        """Persons requiring intensive care, sigma*N*i(t)."""
        return (sigma_icu * self.population) * self.i

    @property
    def infected_total(self) -> float:
        """Ever-infected over the horizon, N*(s(0) - s(T))."""
        return self.population * (self.s[0] - self.s[-1])

    def state_at(self, day: int) -> np.ndarray:
        return np.array([self.s[day], self.e[day], self.i[day], self.r[day]])


def _check_time(t, plan):
    if not (0 <= t <= plan.horizon):
        raise DomainError(f"t={t} outside [0, {plan.horizon}]")


def phase_index(t: float, plan: PolicyPlan) -> int:
    """Phase id in {0, 1, 2, 3} active at day ``t``."""
    _check_time(t, plan)
    _, b1, b2, b3 = plan.phase_starts
    if t < b1:
        return 0
    if t < b2:
        return 1
    if t < b3:
        return 2
    return 3


def attenuation_at(t: float, plan: PolicyPlan, drift: DriftModel) -> float:
    k = phase_index(t, plan)
    if k == 0:
        return 1.0
    a = 1.0 - drift.slopes[k - 1] * (t - plan.phase_starts[k])
    if a < 0.0:
        raise ModelValidityError(f"attenuation {a} < 0 at t={t}: drift slope too large for horizon")
    return a


def control_at(t: float, plan: PolicyPlan, params: EpidemicParams) -> float:
    """Control action u(t) = delta*(R0 - R_k), zero before lockdown."""
    k = phase_index(t, plan)
    if k == 0:
        return 0.0
    return params.delta * (params.r0 - plan.targets[k - 1])


def transmission_at(t: float, plan: PolicyPlan, drift: DriftModel, params: EpidemicParams) -> float:
    beta = params.beta0 - control_at(t, plan, params) * attenuation_at(t, plan, drift)
    if beta < 0.0:
        raise ModelValidityError(f"negative transmission rate {beta} at t={t}")
    return beta


def effective_r(t: float, plan: PolicyPlan, drift: DriftModel, params: EpidemicParams) -> float:
    """R(t) written as R_k + (R0 - R_k)*(1 - a(t)) so it equals R_k exactly at phase start."""
    k = phase_index(t, plan)
    if k == 0:
        return params.r0
    rk = plan.targets[k - 1]
    return rk + (params.r0 - rk) * (1.0 - attenuation_at(t, plan, drift))


def _phase_tables(plan, params, drift):
    starts = np.array(plan.phase_starts, dtype=np.int64)
    ends = np.array(plan.phase_starts[1:] + (plan.horizon,), dtype=np.int64)
    ctrls = np.array([0.0] + [params.delta * (params.r0 - rk) for rk in plan.targets])
    slopes = np.array((0.0,) + drift.slopes)
    return starts, ends, ctrls, slopes


def _derived_series(plan, params, drift):
    days = np.arange(plan.horizon + 1)
    starts, _, _, slopes = _phase_tables(plan, params, drift)
    phase = np.searchsorted(starts, days, side="right") - 1
    elapsed = days - starts[phase]
    att = np.where(phase == 0, 1.0, 1.0 - slopes[phase] * elapsed)
    if np.any(att < 0):
        raise ModelValidityError("attenuation turns negative within the horizon")
    rk = np.array((params.r0,) + plan.targets)[phase]
    r_eff = np.where(phase == 0, params.r0, rk + (params.r0 - rk) * (slopes[phase] * elapsed))
    return days, phase, att, r_eff


def _integrate_rk4(plan, params, drift, cfg):
    starts, ends, ctrls, slopes = _phase_tables(plan, params, drift)
    out = np.empty((plan.horizon + 1, 4))
    err = _kernels.simulate_days(params.initial_state(), starts, ends, params.beta0,
                                 ctrls, slopes, cfg.substeps_per_day, params.gamma,
                                 params.delta, out)
    if err >= 0:
        raise NumericalError("integration left the admissible state space", time=int(err))
    return out


def _integrate_adaptive(plan, params, drift, cfg):
    starts, ends, ctrls, slopes = _phase_tables(plan, params, drift)
    out = np.empty((plan.horizon + 1, 4))
    x = params.initial_state()
    out[0] = x
    g, d, beta0 = params.gamma, params.delta, params.beta0
    for k in range(4):
        t0, t1 = int(starts[k]), int(ends[k])
        if t1 <= t0:
            continue
        c, a = ctrls[k], slopes[k]

        def rhs(t, y, c=c, a=a, t0=t0):
            s, e, i, _ = y
            f = (beta0 - c * (1.0 - a * (t - t0))) * i * s
            return [-f, f - g * e, g * e - d * i, d * i]

        sol = solve_ivp(rhs, (t0, t1), x, method="DOP853", rtol=cfg.rtol, atol=cfg.atol,
                        t_eval=np.arange(t0, t1 + 1))
        if not sol.success:
            raise NumericalError(f"adaptive integration failed: {sol.message}", time=t0)
        out[t0 + 1:t1 + 1] = sol.y[:, 1:].T
        x = sol.y[:, -1]
    small = (out < 0) & (out >= -_kernels.CLAMP_TOL)
    out[small] = 0.0
    if np.any(out < 0):
        day = int(np.argmax(np.any(out < 0, axis=1)))
        raise NumericalError("negative compartment", time=day)
    return out


def simulate_policy(params: EpidemicParams, plan: PolicyPlan, drift: DriftModel,
                    cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate the controlled SEIR system over ``[0, plan.horizon]``.

    Each phase is integrated as its own segment so no step straddles a jump
    in the transmission rate.  Output is sampled at whole days.
    """
    cfg = cfg or IntegratorConfig()
    drift.check_horizon(plan.horizon)
    days, phase, att, r_eff = _derived_series(plan, params, drift)
    if cfg.method == "rk4":
        x = _integrate_rk4(plan, params, drift, cfg)
    else:
        x = _integrate_adaptive(plan, params, drift, cfg)
    drift_err = np.abs(x.sum(axis=1) - 1.0)
    if np.any(drift_err > CONSERVATION_TOL):
        day = int(np.argmax(drift_err > CONSERVATION_TOL))
        raise NumericalError(f"population not conserved (|sum-1|={drift_err[day]:.3g})", time=day)
    return Trajectory(
        times=_readonly(days), s=_readonly(x[:, 0].copy()), e=_readonly(x[:, 1].copy()),
        i=_readonly(x[:, 2].copy()), r=_readonly(x[:, 3].copy()),
        r_eff=_readonly(r_eff), attenuation=_readonly(att), phase=_readonly(phase),
        population=params.population,
    )
