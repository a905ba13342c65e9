"""Scalarized economic/health objective, constraints and K_e calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (DriftModel, EpidemicParams, IntegratorConfig, PolicyPlan,
                   Trajectory, simulate_policy)
from .errors import DomainError

# Margin under which R2 - R1 is treated as equal to the required gap, so
# that grid values such as 0.6 - 0.4 do not pass on rounding noise.
GAP_EPS = 1e-9

ICU, T_MIN, R_GAP = "icu", "t_min", "r_gap"


@dataclass(frozen=True)
class CostParams:
    """Weights and constraint constants of the objective.

    ``ke`` is in currency*day (the control integral carries units of 1/day),
    ``kh`` in persons.
    """

    alpha: float
    ke: float
    kh: float
    mu1: float = 1.41
    mu2: float = 1.3
    sigma_icu: float = 0.015
    icu_capacity: float = 15e3
    t_min: int = 30
    r_gap: float = 0.2

    def __post_init__(self):
        checks = [
            (0 <= self.alpha <= 1, "alpha must lie in [0, 1]", self.alpha),
            (self.ke > 0, "ke must be > 0", self.ke),
            (self.kh > 0, "kh must be > 0", self.kh),
            (self.mu1 >= 1, "mu1 must be >= 1", self.mu1),
            (self.mu2 >= 1, "mu2 must be >= 1", self.mu2),
            (0 <= self.sigma_icu <= 1, "sigma_icu must lie in [0, 1]", self.sigma_icu),
            (self.icu_capacity > 0, "icu_capacity must be > 0", self.icu_capacity),
            (self.t_min >= 0, "t_min must be >= 0", self.t_min),
        ]
        for ok, msg, v in checks:
            if not ok or (isinstance(v, float) and math.isnan(v)):
                raise DomainError(f"{msg}, got {v!r}")

    def replace(self, **changes) -> "CostParams":
        kw = dict(self.__dict__)
        kw.update(changes)
        return CostParams(**kw)


@dataclass(frozen=True)
class Evaluation:
    economic_cost: float
    health_cost: float
    total_cost: float
    infected_total: float
    peak_icu: float
    feasible: bool
    violated_constraint: str | None = None


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    violated: str | None = None

    def __bool__(self):
        return self.feasible


def economic_terms(r0, delta, ke, mu1, mu2, tau0, tau1, tau2, r1, r2, r3, horizon):
    """Closed-form economic cost; broadcasts over numpy arrays.

    Shared by single-plan evaluation and the vectorized grid search so both
    produce identical floating-point values.
    """
    d1 = r0 - r1
    d2 = r0 - r2
    d3 = r0 - r3
    rest = horizon - tau0 - tau1 - tau2
    return ke * (delta * delta) * (d1 * d1 * tau1
                                   + d2 * d2 * tau2 / (mu1 * mu1)
                                   + d3 * d3 * rest / (mu2 * mu2))


def scalarize(alpha, economic, kh, s0, s_final):
    return alpha * economic + (1.0 - alpha) * (kh * (s0 - s_final))


def gap_ok(r1, r2, r_gap):
    return r2 - r1 > r_gap + GAP_EPS


def economic_cost(plan: PolicyPlan, params: EpidemicParams, cost: CostParams) -> float:
    return float(economic_terms(params.r0, params.delta, cost.ke, cost.mu1, cost.mu2,
                                plan.tau0, plan.tau1, plan.tau2, plan.r1, plan.r2, plan.r3,
                                plan.horizon))


def health_cost(traj: Trajectory, cost: CostParams) -> float:
    return float(cost.kh * (traj.s[0] - traj.s[-1]))


def check_feasibility(traj: Trajectory, plan: PolicyPlan, cost: CostParams,
                      params: EpidemicParams | None = None) -> Feasibility:
    """Check the ICU, minimum-lockdown and R-gap constraints, in that order.

    The ICU load is checked on the trajectory's daily samples.
    """
    if np.max(traj.icu_load(cost.sigma_icu)) > cost.icu_capacity:
        return Feasibility(False, ICU)
    if plan.tau1 < cost.t_min:
        return Feasibility(False, T_MIN)
    if not gap_ok(plan.r1, plan.r2, cost.r_gap):
        return Feasibility(False, R_GAP)
    return Feasibility(True)


def evaluate(plan: PolicyPlan, params: EpidemicParams, drift: DriftModel,
             cost: CostParams, cfg: IntegratorConfig | None = None,
             trajectory: Trajectory | None = None) -> Evaluation:
    traj = trajectory if trajectory is not None else simulate_policy(params, plan, drift, cfg)
    econ = economic_cost(plan, params, cost)
    total = float(scalarize(cost.alpha, econ, cost.kh, traj.s[0], traj.s[-1]))
    verdict = check_feasibility(traj, plan, cost, params)
    return Evaluation(
        economic_cost=econ,
        health_cost=health_cost(traj, cost),
        total_cost=total,
        infected_total=float(traj.infected_total),
        peak_icu=float(np.max(traj.icu_load(cost.sigma_icu))),
        feasible=verdict.feasible,
        violated_constraint=verdict.violated,
    )


def calibrate_ke(delta_gdp: float, params: EpidemicParams, r1_ref: float, tau1_ref: float) -> float:
    """K_e such that the lockdown term K_e*delta^2*(R0-R1)^2*tau1 equals ``delta_gdp``."""
    if tau1_ref <= 0:
        raise DomainError(f"tau1_ref must be > 0, got {tau1_ref!r}")
    if not r1_ref < params.r0:
        raise DomainError(f"r1_ref={r1_ref} must be below R0={params.r0}")
    gap = params.r0 - r1_ref
    return delta_gdp / (params.delta * params.delta * (gap * gap) * tau1_ref)


def lockdown_term(ke: float, params: EpidemicParams, r1: float, tau1: float) -> float:
    gap = params.r0 - r1
    return ke * (params.delta * params.delta) * (gap * gap * tau1)


@dataclass(frozen=True)
class KeCalibration:
    """Reference point anchoring K_e: a lockdown at ``r1_ref`` for ``tau1_ref`` days costs ``delta_gdp``."""

    delta_gdp: float
    r1_ref: float
    tau1_ref: float

    def __post_init__(self):
        for name in ("delta_gdp", "r1_ref", "tau1_ref"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.delta_gdp > 0:
            raise DomainError(f"delta_gdp must be > 0, got {self.delta_gdp!r}")
        if not self.tau1_ref > 0:
            raise DomainError(f"tau1_ref must be > 0, got {self.tau1_ref!r}")

    def ke_for(self, params: EpidemicParams) -> float:
        return calibrate_ke(self.delta_gdp, params, self.r1_ref, self.tau1_ref)
