"""Scenario presets and the YAML scenario document.

A scenario document is YAML with the sections below; every key is optional
and missing keys fall back to the ``base`` preset (``france`` by default)::

    version: 1
    base: france            # or france-tradeoff
    label: my-run
    horizon: 300
    epidemic: {r0: 3.5, delta: 0.1857, gamma: 0.16, population: 66.0e+6,
               exposed0_count: 1.33e+5}          # or exposed0 (fraction)
    drift: {a1: 0.001, a2: 0.002, a3: 0.002}
    cost: {alpha: 1.0e-4, mu1: 1.41, mu2: 1.3, sigma_icu: 0.015,
           icu_capacity: 15000, t_min: 30, r_gap: 0.2,
           kh: null,                              # null -> population
           ke: null}                              # null -> calibrated
    calibration: {delta_gdp: 120.0e+9, r1_ref: 0.6, tau1_ref: 55}
    grid: coarse            # coarse | full | mapping of explicit axes
    integrator: {method: rk4, substeps_per_day: 20, rtol: 1.0e-9, atol: 1.0e-12}
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import DriftModel, EpidemicParams, IntegratorConfig, PolicyPlan
from .cost import CostParams, KeCalibration
from .errors import ConfigError, EpipolicyError
from .search import GridSpec

SCHEMA_VERSION = 1

# day 0 of every preset
CALENDAR_ORIGIN = dt.date(2020, 3, 1)

# Matches the "we therefore take K_e = 7.379e9" constant; kept for reference
# only, the presets calibrate K_e instead.
REPORTED_KE = 7.379e9

FRANCE_LOCKDOWN_START = 17
FRANCE_LOCKDOWN_DAYS = 55
FRANCE_R1 = 0.6
FRANCE_R2 = 0.9
# end of September 2020
FRANCE_ADJUSTMENT_START = (dt.date(2020, 9, 30) - CALENDAR_ORIGIN).days
# 31 December 2020, counted inclusively from 1 March
END_OF_2020 = (dt.date(2021, 1, 1) - CALENDAR_ORIGIN).days

PRESET_NAMES = ("france", "france-tradeoff")


@dataclass(frozen=True)
class Scenario:
    params: EpidemicParams
    drift: DriftModel
    cost: CostParams
    grid: GridSpec
    integrator: IntegratorConfig
    horizon: int
    label: str
    calibration: KeCalibration | None = None
    defaulted: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        try:
            self.drift.check_horizon(self.horizon)
            self.grid.check_horizon(self.horizon)
        except EpipolicyError as exc:
            raise ConfigError("scenario", str(exc)) from exc

    def replace(self, **changes) -> "Scenario":
        kw = {f: getattr(self, f) for f in ("params", "drift", "cost", "grid", "integrator",
                                            "horizon", "label", "calibration")}
        kw.update(changes)
        return Scenario(**kw)

    def with_horizon(self, horizon: int) -> "Scenario":
        """Same scenario over another horizon; grid durations beyond it are dropped."""
        try:
            grid = self.grid.clipped(int(horizon))
        except EpipolicyError as exc:
            raise ConfigError("horizon", str(exc), horizon) from exc
        return self.replace(horizon=int(horizon), grid=grid)

    def with_grid(self, grid: GridSpec) -> "Scenario":
        return self.replace(grid=grid)

    def digest(self) -> str:
        return hashlib.sha256(dump_scenario(self).encode()).hexdigest()


def _france_params():
    return EpidemicParams(r0=3.5, delta=0.1857, gamma=0.16, population=66e6,
                          exposed0=1.33e5 / 66e6)


FRANCE_CALIBRATION = KeCalibration(delta_gdp=120e9, r1_ref=FRANCE_R1, tau1_ref=FRANCE_LOCKDOWN_DAYS)


def france_preset(variant: str = "france", grid: str = "coarse") -> Scenario:
    """France calibration; ``variant="france-tradeoff"`` shortens the horizon to 210 days."""
    if variant not in PRESET_NAMES:
        raise ConfigError("base", f"unknown preset, expected one of {PRESET_NAMES}", variant)
    params = _france_params()
    ke = FRANCE_CALIBRATION.ke_for(params)
    cost = CostParams(alpha=1e-4, ke=ke, kh=params.population, mu1=1.41, mu2=1.3,
                      sigma_icu=0.015, icu_capacity=15e3, t_min=30, r_gap=0.2)
    horizon = 210 if variant == "france-tradeoff" else 300
    return Scenario(params=params, drift=DriftModel(0.001, 0.002, 0.002), cost=cost,
                    grid=_named_grid(grid, cost.t_min), integrator=IntegratorConfig(),
                    horizon=horizon, label=variant, calibration=FRANCE_CALIBRATION)


def french_policy_plan(horizon: int = 300, adjustment_start: int | None = None,
                       r3: float | None = None) -> PolicyPlan:
    """The policy applied in France: lockdown from 17 March for 55 days.

    Without ``adjustment_start`` the post-lockdown phase runs to the horizon
    and ``r3`` defaults to R2 (it has no effect then).
    """
    t_lock_end = FRANCE_LOCKDOWN_START + FRANCE_LOCKDOWN_DAYS
    start = horizon if adjustment_start is None else min(int(adjustment_start), horizon)
    return PolicyPlan(tau0=FRANCE_LOCKDOWN_START, tau1=FRANCE_LOCKDOWN_DAYS,
                      tau2=start - t_lock_end, r1=FRANCE_R1, r2=FRANCE_R2,
                      r3=FRANCE_R2 if r3 is None else r3, horizon=horizon)


def _named_grid(name, t_min):
    if name == "coarse":
        return GridSpec.coarse(t_min)
    if name == "full":
        return GridSpec.full(t_min)
    raise ConfigError("grid", "expected 'coarse', 'full' or a mapping of axes", name)


# ---------------------------------------------------------------------------
# document parsing

_SECTIONS = {
    "epidemic": {"r0", "delta", "gamma", "population", "exposed0", "exposed0_count"},
    "drift": {"a1", "a2", "a3"},
    "cost": {"alpha", "mu1", "mu2", "sigma_icu", "icu_capacity", "t_min", "r_gap", "kh", "ke"},
    "calibration": {"delta_gdp", "r1_ref", "tau1_ref"},
    "integrator": {"method", "substeps_per_day", "rtol", "atol"},
}
_TOP = {"version", "base", "label", "horizon", "grid"} | set(_SECTIONS)
_GRID_AXES = ("tau0", "tau1", "tau2", "r1", "r2", "r3")


def _num(path, v, integral=False):
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a sign ("7.4e9") as text
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(path, "must be a number", v) from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, "must be a number", v)
    if integral:
        if float(v) != int(v):
            raise ConfigError(path, "must be an integer", v)
        return int(v)
    return float(v)


def _axis_values(path, spec, integral):
    if isinstance(spec, list):
        return [_num(f"{path}[{k}]", v, integral) for k, v in enumerate(spec)]
    if isinstance(spec, dict):
        unknown = set(spec) - {"start", "stop", "step"}
        if unknown or not {"start", "stop"} <= set(spec):
            raise ConfigError(path, "range needs start, stop and optional step", spec)
        start = _num(f"{path}.start", spec["start"], integral)
        stop = _num(f"{path}.stop", spec["stop"], integral)
        step = _num(f"{path}.step", spec.get("step", 1), integral)
        if step <= 0:
            raise ConfigError(f"{path}.step", "must be > 0", step)
        if integral:
            return list(range(start, stop + 1, step))
        n = int((stop - start) / step + 1e-9) + 1
        return [round(start + k * step, 10) for k in range(n)]
    raise ConfigError(path, "must be a list or a {start, stop, step} mapping", spec)


def _parse_grid(spec, t_min, default):
    if spec is None:
        return default
    if isinstance(spec, str):
        return _named_grid(spec, t_min)
    if not isinstance(spec, dict):
        raise ConfigError("grid", "expected a name or mapping", spec)
    unknown = set(spec) - set(_GRID_AXES)
    if unknown:
        raise ConfigError(f"grid.{sorted(unknown)[0]}", "unknown grid axis")
    axes = []
    for name, cur in zip(_GRID_AXES, default.axes):
        if name in spec:
            axes.append(_axis_values(f"grid.{name}", spec[name], name.startswith("tau")))
        else:
            axes.append(list(cur))
    try:
        return GridSpec(*axes)
    except EpipolicyError as exc:
        raise ConfigError("grid", str(exc)) from exc


def _section(doc, name, defaulted):
    sec = doc.get(name)
    if sec is None:
        defaulted.append(name)
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping", sec)
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    for key in sorted(_SECTIONS[name] - set(sec)):
        defaulted.append(f"{name}.{key}")
    return sec


def _build(kind, path, **kw):
    try:
        return kind(**kw)
    except EpipolicyError as exc:
        raise ConfigError(path, str(exc)) from exc


def load_scenario(document: str | dict | None) -> Scenario:
    """Resolve a scenario document (YAML text or parsed mapping).

    Missing fields take the base preset's values; the dotted names of those
    fields are recorded in ``Scenario.defaulted``.
    """
    if isinstance(document, str):
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError("document", f"not valid YAML: {exc}") from exc
    else:
        doc = document
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("document", "top level must be a mapping", type(doc).__name__)
    unknown = set(doc) - _TOP
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version, expected {SCHEMA_VERSION}", version)
    base = france_preset(doc.get("base", "france"))
    defaulted = []

    ep = _section(doc, "epidemic", defaulted)
    bp = base.params
    population = _num("epidemic.population", ep.get("population", bp.population))
    if "exposed0" in ep and "exposed0_count" in ep:
        raise ConfigError("epidemic.exposed0", "give either exposed0 or exposed0_count")
    if "exposed0_count" in ep:
        exposed0 = _num("epidemic.exposed0_count", ep["exposed0_count"]) / population
    elif "exposed0" in ep:
        exposed0 = _num("epidemic.exposed0", ep["exposed0"])
    else:
        exposed0 = bp.exposed0 * bp.population / population
    params = _build(EpidemicParams, "epidemic",
                    r0=_num("epidemic.r0", ep.get("r0", bp.r0)),
                    delta=_num("epidemic.delta", ep.get("delta", bp.delta)),
                    gamma=_num("epidemic.gamma", ep.get("gamma", bp.gamma)),
                    population=population, exposed0=exposed0)

    dr = _section(doc, "drift", defaulted)
    drift = _build(DriftModel, "drift", **{k: _num(f"drift.{k}", dr.get(k, getattr(base.drift, k)))
                                           for k in ("a1", "a2", "a3")})

    ca = _section(doc, "calibration", defaulted)
    bc = base.calibration
    calibration = _build(KeCalibration, "calibration",
                         delta_gdp=_num("calibration.delta_gdp", ca.get("delta_gdp", bc.delta_gdp)),
                         r1_ref=_num("calibration.r1_ref", ca.get("r1_ref", bc.r1_ref)),
                         tau1_ref=_num("calibration.tau1_ref", ca.get("tau1_ref", bc.tau1_ref)))

    co = _section(doc, "cost", defaulted)
    b = base.cost
    kh = co.get("kh")
    ke = co.get("ke")
    if ke is None:
        try:
            ke = calibration.ke_for(params)
        except EpipolicyError as exc:
            raise ConfigError("calibration", str(exc)) from exc
    cost = _build(CostParams, "cost",
                  alpha=_num("cost.alpha", co.get("alpha", b.alpha)),
                  ke=_num("cost.ke", ke),
                  kh=params.population if kh is None else _num("cost.kh", kh),
                  mu1=_num("cost.mu1", co.get("mu1", b.mu1)),
                  mu2=_num("cost.mu2", co.get("mu2", b.mu2)),
                  sigma_icu=_num("cost.sigma_icu", co.get("sigma_icu", b.sigma_icu)),
                  icu_capacity=_num("cost.icu_capacity", co.get("icu_capacity", b.icu_capacity)),
                  t_min=_num("cost.t_min", co.get("t_min", b.t_min), integral=True),
                  r_gap=_num("cost.r_gap", co.get("r_gap", b.r_gap)))

    it = _section(doc, "integrator", defaulted)
    bi = base.integrator
    integrator = _build(IntegratorConfig, "integrator",
                        method=it.get("method", bi.method),
                        substeps_per_day=_num("integrator.substeps_per_day",
                                              it.get("substeps_per_day", bi.substeps_per_day),
                                              integral=True),
                        rtol=_num("integrator.rtol", it.get("rtol", bi.rtol)),
                        atol=_num("integrator.atol", it.get("atol", bi.atol)))

    if "grid" not in doc:
        defaulted.append("grid")
    grid = _parse_grid(doc.get("grid"), cost.t_min, GridSpec.coarse(cost.t_min))
    for key in ("horizon", "label"):
        if key not in doc:
            defaulted.append(key)
    horizon = _num("horizon", doc.get("horizon", base.horizon), integral=True)
    if horizon <= 0:
        raise ConfigError("horizon", "must be > 0", horizon)
    label = str(doc.get("label", base.label))
    scn = Scenario(params, drift, cost, grid, integrator, horizon, label, calibration)
    return Scenario(params, drift, cost, grid, integrator, horizon, label, calibration,
                    defaulted=tuple(defaulted)) if defaulted else scn


def scenario_to_dict(scn: Scenario) -> dict:
    p, c = scn.params, scn.cost
    doc = {
        "version": SCHEMA_VERSION,
        "label": scn.label,
        "horizon": scn.horizon,
        "epidemic": {"r0": p.r0, "delta": p.delta, "gamma": p.gamma,
                     "population": p.population, "exposed0": p.exposed0},
        "drift": {"a1": scn.drift.a1, "a2": scn.drift.a2, "a3": scn.drift.a3},
        "cost": {"alpha": c.alpha, "ke": c.ke, "kh": c.kh, "mu1": c.mu1, "mu2": c.mu2,
                 "sigma_icu": c.sigma_icu, "icu_capacity": c.icu_capacity,
                 "t_min": c.t_min, "r_gap": c.r_gap},
        "grid": scn.grid.to_dict(),
        "integrator": {"method": scn.integrator.method,
                       "substeps_per_day": scn.integrator.substeps_per_day,
                       "rtol": scn.integrator.rtol, "atol": scn.integrator.atol},
    }
    if scn.calibration is not None:
        cal = scn.calibration
        doc["calibration"] = {"delta_gdp": cal.delta_gdp, "r1_ref": cal.r1_ref,
                              "tau1_ref": cal.tau1_ref}
    return doc


def dump_scenario(scn: Scenario) -> str:
    """Fully resolved YAML document; ``load_scenario`` of it returns an equal Scenario."""
    header = "# epipolicy scenario, fully resolved\n"
    return header + yaml.safe_dump(scenario_to_dict(scn), sort_keys=False, default_flow_style=None)


def resolve_scenario(ref: str | None) -> Scenario:
    """Scenario from a preset name or a YAML file path."""
    if ref is None or ref in PRESET_NAMES:
        return france_preset(ref or "france")
    path = Path(ref)
    if not path.exists():
        raise ConfigError("scenario", f"not a preset name ({', '.join(PRESET_NAMES)}) "
                                      f"nor an existing file", ref)
    return load_scenario(path.read_text(encoding="utf-8"))


def scenario_fingerprint(scn: Scenario) -> str:
    return hashlib.sha256(json.dumps(scenario_to_dict(scn), sort_keys=True).encode()).hexdigest()


def load_grid(ref: str, t_min: int) -> GridSpec:
    """Grid from a name (``coarse``/``full``) or a YAML file holding the axes mapping.

    Named grids start their tau1 axis at ``t_min``.
    """
    if ref in ("coarse", "full"):
        return _named_grid(ref, t_min)
    path = Path(ref)
    if not path.exists():
        raise ConfigError("grid", "expected 'coarse', 'full' or an existing YAML file", ref)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("grid", f"not valid YAML: {exc}") from exc
    if isinstance(doc, dict) and set(doc) == {"grid"}:
        doc = doc["grid"]
    return _parse_grid(doc, t_min, GridSpec.coarse(t_min))
