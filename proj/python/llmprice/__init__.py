"""Equilibrium pricing for LLM routing markets."""

from ._core import (
    BiasInit,
    CalibrationReport,
    ConvergenceError,
    EquilibriumResult,
    InputError,
    LlmpriceError,
    Market,
    NumericalError,
    ObservedDay,
    PricingResult,
    ScaleError,
    ScorerModel,
    abstracted_pricing,
    days_from_json,
    days_to_json,
    feature_names,
    fit_theta,
    flow_r2,
    init_biases,
    optimize_price,
    profit,
    rival_features,
    run_cli,
    scenario_set,
    simulate_days,
    solve_equilibrium,
    train_scorer,
    wardrop_gap,
)

__all__ = [name for name in dir() if not name.startswith("_")]
