"""Bayesian hierarchical space-time SIR models for county-level case counts."""
from .ingest import (AdjacencyGraph, DataError, PanelData, cumulative_to_daily, load_adjacency,
                     load_panel, smooth_3day_centered)
from .model import (DataModel, LatentState, ModelSpec, ParamVector, PriorConfig, Variant,
                    accounting_forward, icar_logpdf, run_accounting, log_mean, log_prior, poisson_deviance_cell,
                    total_deviance)
from .mcmc import ChainTrace, SamplerConfig, gibbs_precision, initialize, run_chain
from .metrics import DicResult, dic, geweke_z, mse_profile, mspe_profile
from .forecast import (ForecastResult, SimScenario, one_step_forecast, replicate_within_sample,
                       simulate_panel)

__version__ = "0.1.0"
