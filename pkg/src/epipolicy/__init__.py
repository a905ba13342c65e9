"""SEIR epidemic simulation under four-phase control policies, and an
exhaustive constrained search for the cheapest admissible policy."""

from .core import (DriftModel, EpidemicParams, IntegratorConfig, PolicyPlan, Trajectory,
                   attenuation_at, control_at, effective_r, phase_index, simulate_policy,
                   transmission_at)
from .cost import (CostParams, Evaluation, Feasibility, KeCalibration, calibrate_ke,
                   check_feasibility, economic_cost, evaluate, health_cost, lockdown_term)
from .errors import (ConfigError, DomainError, EpipolicyError, InfeasibleGridError,
                     ModelValidityError, NumericalError)
from .presets import (Scenario, dump_scenario, france_preset, french_policy_plan,
                      load_scenario, resolve_scenario)
from .search import (AdjustmentRow, GridSpec, OutcomeTable, SearchResult, TradeoffPoint,
                     UncertaintyReport, adjustment_sweep, build_outcome_table, grid_search,
                     lockdown_feature_sweep, mc_r0_uncertainty, r0_sensitivity, tradeoff_sweep)

__version__ = "0.1.0"
