"""Knowledge-based forecasters: UKF, particle filter, dual estimation."""

from .dual import DualFilterState, dual_step, forecast_path, forecast_propagate, param_update, temper
from .particle import (
    ParticleEnsemble,
    effective_sample_size,
    pf_init,
    pf_reweight,
    pf_step,
    resample,
    systematic_indices,
    ukf_proposal,
)
from .runner import FilterConfig, FilterRun, assimilate, filter_model
from .ukf import (
    StateSpaceModel,
    UkfState,
    UtParams,
    cov_sqrt,
    floor_cov,
    kalman_step,
    lorenz_model,
    sigma_points,
    ukf_init,
    ukf_predict,
    ukf_step,
    ukf_update,
    unscented_transform,
)

__all__ = [
    "DualFilterState",
    "FilterConfig",
    "FilterRun",
    "ParticleEnsemble",
    "StateSpaceModel",
    "UkfState",
    "UtParams",
    "assimilate",
    "cov_sqrt",
    "dual_step",
    "effective_sample_size",
    "filter_model",
    "floor_cov",
    "forecast_path",
    "forecast_propagate",
    "kalman_step",
    "lorenz_model",
    "param_update",
    "pf_init",
    "pf_reweight",
    "pf_step",
    "resample",
    "sigma_points",
    "systematic_indices",
    "temper",
    "ukf_init",
    "ukf_predict",
    "ukf_proposal",
    "ukf_step",
    "ukf_update",
    "unscented_transform",
]
