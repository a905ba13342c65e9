"""Exhaustive constrained search over quantized four-phase policies.

The search walks the policy tree tau0 -> (tau1, R1) -> (R2, tau2) -> R3 and
caches the SEIR state at every phase boundary, so siblings share their
prefix integration.  The simulated outcome of every candidate (final
susceptible fraction and ICU feasibility) does not depend on the trade-off
weight or on mu1/mu2, so one :class:`OutcomeTable` serves every alpha and
mu of a sweep; only the closed-form economic cost is recomputed.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .core import (DriftModel, EpidemicParams, IntegratorConfig, PolicyPlan,
                   Trajectory, simulate_policy)
from .cost import (CostParams, Evaluation, KeCalibration, calibrate_ke,
                   economic_terms, evaluate, gap_ok, scalarize)
from .errors import DomainError, InfeasibleGridError, NumericalError

log = logging.getLogger(__name__)

_UNVISITED = -1


def _axis(name, values, integral):
    vals = tuple(int(v) for v in values) if integral else tuple(float(v) for v in values)
    if not vals:
        raise DomainError(f"{name} must be non-empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise DomainError(f"{name} must be strictly ascending")
    if vals[0] < 0:
        raise DomainError(f"{name} values must be >= 0")
    if integral and any(float(v) != float(o) for v, o in zip(vals, values)):
        raise DomainError(f"{name} must hold whole days")
    return vals


def _steps(start, stop, step, ndigits=10):
    """Inclusive arithmetic range, rounded so 0.1-steps land on decimal values."""
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + k * step, ndigits) for k in range(n))


@dataclass(frozen=True)
class GridSpec:
    tau0_values: tuple
    tau1_values: tuple
    tau2_values: tuple
    r1_values: tuple
    r2_values: tuple
    r3_values: tuple

    def __post_init__(self):
        for name in ("tau0_values", "tau1_values", "tau2_values"):
            object.__setattr__(self, name, _axis(name, getattr(self, name), True))
        for name in ("r1_values", "r2_values", "r3_values"):
            object.__setattr__(self, name, _axis(name, getattr(self, name), False))

    @classmethod
    def coarse(cls, t_min=30):
        """Desk-scale grid: tau0 step 1, tau1 step 2, tau2 step 5, R step 0.1."""
        rs = _steps(0.4, 1.5, 0.1)
        return cls(tuple(range(1, 31)), tuple(range(max(t_min, 1), 91, 2)),
                   tuple(range(1, 121, 5)), rs, rs, rs)

    @classmethod
    def full(cls, t_min=30):
        rs = _steps(0.4, 1.5, 0.1)
        return cls(tuple(range(1, 31)), tuple(range(max(t_min, 1), 91)),
                   tuple(range(1, 121)), rs, rs, rs)

    @classmethod
    def singleton(cls, plan: PolicyPlan):
        return cls((plan.tau0,), (plan.tau1,), (plan.tau2,), (plan.r1,), (plan.r2,), (plan.r3,))

    @property
    def axes(self):
        return (self.tau0_values, self.tau1_values, self.tau2_values,
                self.r1_values, self.r2_values, self.r3_values)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def check_horizon(self, horizon: int) -> None:
        for name, vals in zip(("tau0_values", "tau1_values", "tau2_values"), self.axes[:3]):
            if vals[-1] > horizon:
                raise DomainError(f"{name} contains {vals[-1]} beyond horizon {horizon}")

    def capped(self, r_max: float) -> "GridSpec":
        """Drop reproduction-number values above ``r_max`` (negative control)."""
        def cap(vals):
            kept = tuple(v for v in vals if v <= r_max)
            if not kept:
                raise DomainError(f"no grid R value at or below R0={r_max}")
            return kept
        return GridSpec(self.tau0_values, self.tau1_values, self.tau2_values,
                        cap(self.r1_values), cap(self.r2_values), cap(self.r3_values))

    def clipped(self, horizon: int) -> "GridSpec":
        """Drop duration values longer than ``horizon``."""
        def clip(name, vals):
            kept = tuple(v for v in vals if v <= horizon)
            if not kept:
                raise DomainError(f"no {name} value fits a {horizon}-day horizon")
            return kept
        return GridSpec(clip("tau0", self.tau0_values), clip("tau1", self.tau1_values),
                        clip("tau2", self.tau2_values), self.r1_values, self.r2_values,
                        self.r3_values)

    def plan_at(self, index, horizon) -> PolicyPlan:
        i0, i1, i2, j1, j2, j3 = (int(v) for v in index)
        return PolicyPlan(self.tau0_values[i0], self.tau1_values[i1], self.tau2_values[i2],
                          self.r1_values[j1], self.r2_values[j2], self.r3_values[j3], horizon)

    def to_dict(self):
        return {
            "tau0": list(self.tau0_values), "tau1": list(self.tau1_values),
            "tau2": list(self.tau2_values), "r1": list(self.r1_values),
            "r2": list(self.r2_values), "r3": list(self.r3_values),
        }


@dataclass(frozen=True)
class SearchResult:
    best_plan: PolicyPlan
    best_eval: Evaluation
    n_evaluated: int
    n_feasible: int
    n_pruned: int


@dataclass(frozen=True)
class TradeoffPoint:
    alpha: float
    gdp_loss: float
    infected_total: float
    plan: PolicyPlan | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass(frozen=True)
class FeatureRow:
    alpha: float
    mu1: float
    mu2: float
    tau0: int | None
    tau1: int | None
    plan: PolicyPlan | None
    evaluation: Evaluation | None
    error: str | None = None


@dataclass(frozen=True)
class SensitivityRow:
    r0: float
    ke: float
    plan: PolicyPlan | None
    evaluation: Evaluation | None
    error: str | None = None


@dataclass(frozen=True)
class UncertaintySample:
    sigma: float
    index: int
    noise: float
    r0_hat: float
    tau0_hat: int | None
    r1_hat: float | None
    error: str | None = None


@dataclass(frozen=True)
class UncertaintyReport:
    sigma_levels: tuple
    bias_tau0: tuple
    bias_r1: tuple
    n_samples: int
    seed: int
    nominal_tau0: int
    nominal_r1: float
    samples: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class AdjustmentRow:
    r3: float
    peak_icu: float
    peak_day: int
    feasible: bool
    max_r_eff_adjustment: float
    infected_total: float
    final_icu: float
    trajectory: Trajectory = field(repr=False, compare=False)


@dataclass(eq=False)
class OutcomeTable:
    """Simulated outcome of every grid candidate.

    Arrays have the grid's 6-d shape.  ``status`` holds the codes from
    :mod:`epipolicy._kernels`; ``s_final`` is defined only where the
    candidate is feasible; ``abort_day`` is the day of the first ICU
    violation for violating or prefix-pruned candidates.
    """

    grid: GridSpec
    params: EpidemicParams
    horizon: int
    s_final: np.ndarray
    status: np.ndarray
    abort_day: np.ndarray
    peak_icu: np.ndarray | None = None
    _cand_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_candidates(self):
        return int(np.count_nonzero(self.status != K.OUT_OF_HORIZON))

    @property
    def n_evaluated(self):
        return int(np.count_nonzero((self.status == K.FEASIBLE) | (self.status == K.ICU_VIOLATED)))

    @property
    def n_feasible(self):
        return int(np.count_nonzero(self.status == K.FEASIBLE))

    @property
    def n_pruned(self):
        return int(np.count_nonzero((self.status == K.STATIC_PRUNED) | (self.status == K.PREFIX_PRUNED)))

    def _feasible_candidates(self, params, cost):
        key = (params.r0, params.delta, cost.ke, cost.mu1, cost.mu2)
        hit = self._cand_cache.get(key)
        if hit is None:
            flat = np.flatnonzero(self.status.reshape(-1) == K.FEASIBLE)
            idx = np.unravel_index(flat, self.grid.shape)
            ax = [np.asarray(a) for a in self.grid.axes]
            econ = economic_terms(params.r0, params.delta, cost.ke, cost.mu1, cost.mu2,
                                  ax[0][idx[0]], ax[1][idx[1]], ax[2][idx[2]],
                                  ax[3][idx[3]], ax[4][idx[4]], ax[5][idx[5]], self.horizon)
            hit = (flat, econ, self.s_final.reshape(-1)[flat])
            if len(self._cand_cache) >= 4:
                self._cand_cache.pop(next(iter(self._cand_cache)))
            self._cand_cache[key] = hit
        return hit

    def best_index(self, params: EpidemicParams, cost: CostParams):
        """Grid index of the feasible minimum-cost candidate, or ``None``.

        Candidates are held in C order, so ``argmin`` returning the first
        minimum realizes the lexicographic tie-break.
        """
        flat, econ, s_fin = self._feasible_candidates(params, cost)
        if flat.size == 0:
            return None
        total = scalarize(cost.alpha, econ, cost.kh, self.params.initial_state()[0], s_fin)
        k = int(np.argmin(total))
        return np.unravel_index(flat[k], self.grid.shape)


_TABLE_CACHE: "OrderedDict[tuple, OutcomeTable]" = OrderedDict()
_TABLE_CACHE_SIZE = 2


def clear_table_cache():
    _TABLE_CACHE.clear()


def _static_ok(grid, cost):
    t1 = np.asarray(grid.tau1_values)[:, None, None]
    r1 = np.asarray(grid.r1_values)[None, :, None]
    r2 = np.asarray(grid.r2_values)[None, None, :]
    return np.ascontiguousarray((t1 >= cost.t_min) & gap_ok(r1, r2, cost.r_gap))


def build_outcome_table(grid: GridSpec, params: EpidemicParams, drift: DriftModel,
                        cost: CostParams, cfg: IntegratorConfig | None = None,
                        horizon: int = 300, workers: int = 1,
                        track_peak: bool = False) -> OutcomeTable:
    """Simulate every candidate of ``grid`` once.

    Static constraints (tau1 >= t_min, R2 > R1 + r_gap) are filtered before
    any integration.  Unless ``track_peak`` is set, a trajectory stops at its
    first daily ICU violation and a violating prefix prunes its whole
    subtree.  With ``track_peak`` the ICU cap is lifted and the full peak
    load of every candidate is recorded instead (diagnostics).
    """
    cfg = cfg or IntegratorConfig()
    if cfg.method != "rk4":
        raise DomainError("grid search requires the fixed-step rk4 integrator")
    drift.check_horizon(horizon)
    grid.check_horizon(horizon)
    key = (grid, params, drift, cfg, horizon, cost.sigma_icu, cost.icu_capacity,
           cost.t_min, cost.r_gap, track_peak)
    if key in _TABLE_CACHE:
        _TABLE_CACHE.move_to_end(key)
        return _TABLE_CACHE[key]

    shape = grid.shape
    t0s, t1s, t2s = (np.asarray(a, dtype=np.int64) for a in grid.axes[:3])
    r1s, r2s, r3s = (np.asarray(a, dtype=np.float64) for a in grid.axes[3:])
    static_ok = _static_ok(grid, cost)
    in_horizon = (t0s[:, None, None] + t1s[None, :, None] + t2s[None, None, :]) <= horizon
    status = np.full(shape, _UNVISITED, dtype=np.int8)
    status[~np.broadcast_to(static_ok[None, :, None, :, :, None], shape)] = K.STATIC_PRUNED
    status[~np.broadcast_to(in_horizon[:, :, :, None, None, None], shape)] = K.OUT_OF_HORIZON
    s_final = np.full(shape, np.nan)
    abort_day = np.full(shape, -1, dtype=np.int16)
    peak = np.zeros(shape) if track_peak else np.zeros((1,) * 6)
    icu_cap = math.inf if track_peak else float(cost.icu_capacity)
    icu_scale = cost.sigma_icu * params.population
    x_init = params.initial_state()
    slopes = np.asarray(drift.slopes, dtype=np.float64)

    def run(a):
        return K.search_slice(a, horizon, t0s, t1s, t2s, r1s, r2s, r3s, static_ok, x_init,
                              params.beta0, params.r0, params.gamma, params.delta, slopes,
                              cfg.substeps_per_day, icu_scale, icu_cap, track_peak,
                              s_final, status, abort_day, peak)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errs = list(pool.map(run, range(shape[0])))
    else:
        errs = [run(a) for a in range(shape[0])]
    bad = [e for e in errs if e >= 0]
    if bad:
        raise NumericalError("integration left the admissible state space during search",
                             time=int(min(bad)))
    if np.any(status == _UNVISITED):
        raise RuntimeError("search kernel left candidates unvisited")

    table = OutcomeTable(grid, params, horizon, s_final, status, abort_day,
                         peak if track_peak else None)
    log.debug("outcome table %s: %d candidates, %d evaluated, %d feasible, %d pruned",
              shape, table.n_candidates, table.n_evaluated, table.n_feasible, table.n_pruned)
    _TABLE_CACHE[key] = table
    while len(_TABLE_CACHE) > _TABLE_CACHE_SIZE:
        _TABLE_CACHE.popitem(last=False)
    return table


def _raise_infeasible(grid, params, drift, cost, cfg, horizon, workers):
    diag = build_outcome_table(grid, params, drift, cost, cfg, horizon, workers, track_peak=True)
    mask = diag.status == K.FEASIBLE
    if not mask.any():
        raise InfeasibleGridError("infeasible grid: no candidate satisfies the static constraints")
    peaks = np.where(mask, diag.peak_icu, np.inf)
    idx = np.unravel_index(int(np.argmin(peaks)), grid.shape)
    plan = grid.plan_at(idx, horizon)
    raise InfeasibleGridError(
        f"infeasible grid: every candidate exceeds the ICU capacity "
        f"(least violating {plan.key()} peaks at {peaks[idx]:.0f} > {cost.icu_capacity:.0f})",
        least_violating=plan, peak_icu=float(peaks[idx]))


def search_table(table: OutcomeTable, params: EpidemicParams, drift: DriftModel,
                 cost: CostParams, cfg: IntegratorConfig | None = None,
                 workers: int = 1) -> SearchResult:
    idx = table.best_index(params, cost)
    if idx is None:
        _raise_infeasible(table.grid, params, drift, cost, cfg, table.horizon, workers)
    plan = table.grid.plan_at(idx, table.horizon)
    ev = evaluate(plan, params, drift, cost, cfg)
    return SearchResult(plan, ev, table.n_evaluated, table.n_feasible, table.n_pruned)


def grid_search(grid: GridSpec, params: EpidemicParams, drift: DriftModel, cost: CostParams,
                cfg: IntegratorConfig | None = None, horizon: int = 300,
                workers: int = 1) -> SearchResult:
    """Feasible candidate minimizing the scalarized cost.

    Ties go to the lexicographically smallest (tau0, tau1, tau2, R1, R2, R3).
    Raises :class:`InfeasibleGridError` carrying the least-violating
    candidate when nothing is feasible.
    """
    table = build_outcome_table(grid, params, drift, cost, cfg, horizon, workers)
    return search_table(table, params, drift, cost, cfg, workers)


def tradeoff_sweep(alphas: Sequence[float], grid: GridSpec, params: EpidemicParams,
                   drift: DriftModel, cost: CostParams, cfg: IntegratorConfig | None = None,
                   horizon: int = 210, workers: int = 1) -> list[TradeoffPoint]:
    """One optimum per alpha, returned in ascending alpha order."""
    if len(alphas) == 0:
        raise DomainError("alphas must be non-empty")
    for a in alphas:
        if not 0 <= a <= 1:
            raise DomainError(f"alpha={a} outside [0, 1]")
    table = build_outcome_table(grid, params, drift, cost, cfg, horizon, workers)
    points = []
    for a in sorted(alphas):
        try:
            res = search_table(table, params, drift, cost.replace(alpha=float(a)), cfg, workers)
        except InfeasibleGridError as exc:
            points.append(TradeoffPoint(float(a), math.nan, math.nan, None, str(exc)))
            continue
        points.append(TradeoffPoint(float(a), res.best_eval.economic_cost,
                                    res.best_eval.infected_total, res.best_plan))
    return points


def lockdown_feature_sweep(alphas: Sequence[float], mu_pairs: Sequence[tuple[float, float]],
                           grid: GridSpec, params: EpidemicParams, drift: DriftModel,
                           cost: CostParams, cfg: IntegratorConfig | None = None,
                           horizon: int = 300, t_min: int | None = None,
                           workers: int = 1) -> list[FeatureRow]:
    """Optimal lockdown start and duration for every (alpha, mu1, mu2).

    ``t_min`` overrides the minimum lockdown duration; the grid's tau1 axis
    must already reach down to it.
    """
    if len(alphas) == 0 or len(mu_pairs) == 0:
        raise DomainError("alphas and mu_pairs must be non-empty")
    if t_min is not None:
        cost = cost.replace(t_min=int(t_min))
    table = build_outcome_table(grid, params, drift, cost, cfg, horizon, workers)
    rows = []
    for mu1, mu2 in mu_pairs:
        for a in alphas:
            c = cost.replace(alpha=float(a), mu1=float(mu1), mu2=float(mu2))
            try:
                res = search_table(table, params, drift, c, cfg, workers)
            except InfeasibleGridError as exc:
                rows.append(FeatureRow(float(a), float(mu1), float(mu2), None, None, None, None, str(exc)))
                continue
            rows.append(FeatureRow(float(a), float(mu1), float(mu2), res.best_plan.tau0,
                                   res.best_plan.tau1, res.best_plan, res.best_eval))
    return rows


def _with_r0(params, r0):
    return EpidemicParams(r0, params.delta, params.gamma, params.population, params.exposed0)


def _cost_for_r0(cost, params_r0, calibration):
    if calibration is None:
        return cost
    ke = calibrate_ke(calibration.delta_gdp, params_r0, calibration.r1_ref, calibration.tau1_ref)
    return cost.replace(ke=ke)


def r0_sensitivity(r0_values: Sequence[float], grid: GridSpec, params: EpidemicParams,
                   drift: DriftModel, cost: CostParams, cfg: IntegratorConfig | None = None,
                   horizon: int = 300, calibration: KeCalibration | None = None,
                   workers: int = 1) -> list[SensitivityRow]:
    """Re-optimize for each R0.

    With ``calibration`` the economic factor is recalibrated for every R0;
    grid R values above an R0 are dropped.
    """
    if len(r0_values) == 0:
        raise DomainError("r0_values must be non-empty")
    rows = []
    for r0 in r0_values:
        p = _with_r0(params, float(r0))
        c = _cost_for_r0(cost, p, calibration)
        try:
            res = grid_search(grid.capped(p.r0), p, drift, c, cfg, horizon, workers)
        except InfeasibleGridError as exc:
            rows.append(SensitivityRow(p.r0, c.ke, None, None, str(exc)))
            continue
        rows.append(SensitivityRow(p.r0, c.ke, res.best_plan, res.best_eval))
    return rows


def truncated_normal(rng: np.random.Generator, sigma: float, lo: float, hi: float,
                     max_draws: int = 100_000) -> float:
    """Draw N(0, sigma^2) conditioned on [lo, hi] by rejection."""
    if not lo <= 0.0 <= hi:
        raise DomainError(f"truncation interval [{lo}, {hi}] must contain 0")
    if sigma == 0:
        return 0.0
    for _ in range(max_draws):
        d = sigma * rng.standard_normal()
        if lo <= d <= hi:
            return float(d)
    raise NumericalError(f"rejection sampling did not accept a draw in {max_draws} tries")


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index``, shared across sigma levels."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def mc_r0_uncertainty(sigma_levels: Sequence[float], n_samples: int, seed: int,
                      r_min: float, r_max: float, grid: GridSpec, params: EpidemicParams,
                      drift: DriftModel, cost: CostParams, cfg: IntegratorConfig | None = None,
                      horizon: int = 300, calibration: KeCalibration | None = None,
                      workers: int = 1) -> UncertaintyReport:
    """Bias of the optimal (tau0, R1) when the optimizer sees a noisy R0.

    For every sigma level, ``n_samples`` perturbations are drawn from a
    Gaussian truncated to ``[r_min - R0, r_max - R0]``; each sample reruns the
    search with ``R0 + noise`` and is compared to the unperturbed optimum.
    Sample ``k`` uses the same random stream at every level.
    """
    if not r_min < params.r0 < r_max:
        raise DomainError(f"need r_min < R0 < r_max, got {r_min}, {params.r0}, {r_max}")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if len(sigma_levels) == 0 or any(s < 0 for s in sigma_levels):
        raise DomainError("sigma_levels must be non-empty and >= 0")
    lo, hi = r_min - params.r0, r_max - params.r0

    optima: dict[float, tuple[int, float] | None] = {}

    def optimum(r0_hat):
        if r0_hat not in optima:
            p = _with_r0(params, r0_hat)
            c = _cost_for_r0(cost, p, calibration)
            try:
                res = grid_search(grid.capped(r0_hat), p, drift, c, cfg, horizon, workers)
                optima[r0_hat] = (res.best_plan.tau0, res.best_plan.r1)
            except InfeasibleGridError:
                optima[r0_hat] = None
        return optima[r0_hat]

    nominal = optimum(params.r0)
    if nominal is None:
        raise InfeasibleGridError("the unperturbed problem has no feasible candidate")
    tau0_star, r1_star = nominal

    samples = []
    bias_t, bias_r = [], []
    for sigma in sigma_levels:
        dt, dr = [], []
        for k in range(n_samples):
            noise = truncated_normal(sample_stream(seed, k), float(sigma), lo, hi)
            r0_hat = params.r0 + noise
            opt = optimum(r0_hat)
            if opt is None:
                samples.append(UncertaintySample(float(sigma), k, noise, r0_hat, None, None,
                                                 "infeasible grid"))
                continue
            dt.append(abs(opt[0] - tau0_star))
            dr.append(abs(opt[1] - r1_star))
            samples.append(UncertaintySample(float(sigma), k, noise, r0_hat, opt[0], opt[1]))
        bias_t.append(float(np.mean(dt)) if dt else math.nan)
        bias_r.append(float(np.mean(dr)) if dr else math.nan)
    return UncertaintyReport(tuple(float(s) for s in sigma_levels), tuple(bias_t), tuple(bias_r),
                             int(n_samples), int(seed), tau0_star, r1_star, tuple(samples))


def adjustment_sweep(prefix_plan: PolicyPlan, r3_values: Sequence[float], params: EpidemicParams,
                     drift: DriftModel, cost: CostParams,
                     cfg: IntegratorConfig | None = None) -> list[AdjustmentRow]:
    """Vary only the adjustment-phase target on a fixed policy prefix."""
    if len(r3_values) == 0:
        raise DomainError("r3_values must be non-empty")
    t3 = prefix_plan.phase_starts[3]
    rows = []
    for r3 in r3_values:
        plan = prefix_plan.replace(r3=float(r3))
        traj = simulate_policy(params, plan, drift, cfg)
        load = traj.icu_load(cost.sigma_icu)
        peak_day = int(np.argmax(load))
        rows.append(AdjustmentRow(
            r3=plan.r3,
            peak_icu=float(load[peak_day]),
            peak_day=peak_day,
            feasible=bool(np.max(load) <= cost.icu_capacity),
            max_r_eff_adjustment=float(np.max(traj.r_eff[t3:])),
            infected_total=float(traj.infected_total),
            final_icu=float(load[-1]),
            trajectory=traj,
        ))
    return rows
