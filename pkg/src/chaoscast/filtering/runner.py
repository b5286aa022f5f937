"""Run many filters over observation windows at once and forecast from their end states."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from ..dynamics import LorenzMap, LorenzParams
from ..noise import Gaussian, Laplace, NoiseSpec
from .dual import DualFilterState, dual_step, forecast_path
from .particle import ParticleEnsemble, pf_init, pf_reweight, pf_step
from .ukf import StateSpaceModel, UkfState, UtParams, ukf_init, ukf_step

Method = Literal["ukf_gaussian", "pf_laplace"]


@dataclass(frozen=True)
class FilterConfig:
    """Tunables of the knowledge-based forecasters."""

    n_particles: int = 1000
    ut_alpha: float = 1e-3
    ut_beta: float = 2.0
    ut_kappa: float = 0.0
    state_prior_var: float = 2.0
    gaussian_sd: float = 0.8
    laplace_scale: float = 0.8 / math.sqrt(2.0)
    process_sd: float = 0.1
    param_prior_mean: tuple[float, float, float] = (10.0, 8.0 / 3.0, 28.0)
    param_prior_var: tuple[float, float, float] = (4.0, 1.0, 9.0)
    nu0: float = 0.01
    gamma: float = 0.995
    resample_threshold: float = 0.5
    param_uses_state_cov: bool = False

    @property
    def ut(self) -> UtParams:
        return UtParams(self.ut_alpha, self.ut_beta, self.ut_kappa)

    def obs_model(self, method: Method) -> NoiseSpec:
        if method == "ukf_gaussian":
            return Gaussian(0.0, self.gaussian_sd)
        if method == "pf_laplace":
            return Laplace(0.0, self.laplace_scale)
        raise ValueError(f"unknown filter method {method!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def filter_model(cfg: FilterConfig, method: Method, dt: float, theta=None, stoch_noise: NoiseSpec | None = None) -> StateSpaceModel:
    """The forecaster's assumed model: Lorenz RK4 map, Gaussian process noise, assumed obs noise.

    ``stoch_noise`` overrides the default N(0, process_sd) transition noise
    (e.g. to hand a filter the true law).
    """
    eta = stoch_noise if stoch_noise is not None else Gaussian(0.0, cfg.process_sd)
    th = None if theta is None else np.asarray(theta, dtype=float)
    return StateSpaceModel(LorenzMap(dt), eta, cfg.obs_model(method), theta=th)


@dataclass
class FilterRun:
    """End states of a batch of filter runs (leading axis = batch row)."""

    state: np.ndarray  # (B, 3)
    theta: np.ndarray  # (B, 3)
    failed: np.ndarray  # (B,) bool
    trace: dict | None = field(default=None, repr=False)

    def forecast(self, horizons, dt: float) -> np.ndarray:
        """``(len(horizons), B, 3)``; failed rows hold NaN."""
        z = np.where(self.failed[:, None], 0.0, self.state)
        th = np.where(self.failed[:, None], np.array(LorenzParams().as_array()), self.theta)
        out = forecast_path(z, th, horizons, dt)
        out[:, self.failed] = np.nan
        return out


def _bad_rows(a, axes):
    return ~np.all(np.isfinite(a), axis=axes)


def assimilate(
    windows,
    method: Method,
    cfg: FilterConfig,
    dt: float,
    rng: np.random.Generator,
    known_params: LorenzParams | None = None,
    known_stoch_noise: NoiseSpec | None = None,
    record_trace: bool = False,
    theta_prior=None,
) -> FilterRun:
    """Filter each window ``(B, T, 3)`` from its first observation to its last.

    The state prior is N(first observation, state_prior_var I), updated with
    that observation; each later observation costs one predict/update. With
    ``known_params`` the state filter runs alone with those parameters,
    otherwise a dual filter estimates them starting from the configured prior.
    ``theta_prior`` overrides the configured parameter-prior mean, either
    with one 3-vector or with one row per window. Rows that turn non-finite
    are flagged in ``failed`` and frozen.
    """
    x = np.asarray(windows, dtype=float)
    if x.ndim == 2:
        x = x[None]
    B, T, d = x.shape
    dual = known_params is None
    if dual:
        theta0 = np.array(cfg.param_prior_mean if theta_prior is None else theta_prior, dtype=float)
    else:
        theta0 = known_params.as_array()
    theta0 = np.broadcast_to(theta0, (B, 3)).copy()
    theta_park = theta0.copy()
    model = filter_model(cfg, method, dt, theta=None, stoch_noise=known_stoch_noise)
    ut = cfg.ut
    P0 = cfg.state_prior_var * np.eye(d)
    failed = np.zeros(B, dtype=bool)

    if method == "ukf_gaussian":
        sf = ukf_init(x[:, 0], model, P0, ut)
    else:
        sf = pf_init(x[:, 0], P0, cfg.n_particles, rng, with_covs=True)
        sf = pf_reweight(sf, x[:, 0], model, rng, cfg.resample_threshold)
    param = UkfState(theta0, np.broadcast_to(np.diag(cfg.param_prior_var), (B, 3, 3)).copy(), 0)
    state = DualFilterState(sf, param, cfg.nu0, cfg.gamma, cfg.param_uses_state_cov)

    trace = None
    if record_trace:
        trace = {"mean": [state.state_mean().copy()], "theta": [theta0.copy()], "ess": [_ess(sf, B)], "failed": [failed.copy()]}

    for t in range(1, T):
        obs = x[:, t]
        if dual:
            state = dual_step(state, obs, model, ut, rng, "ukf", cfg.resample_threshold, check=False)
        else:
            sf = state.state_filter
            if isinstance(sf, UkfState):
                sf = ukf_step(sf, obs, model, ut, theta=theta0, check=False)
            else:
                sf = pf_step(sf, obs, model, "ukf", rng, ut, theta=theta0, resample_threshold=cfg.resample_threshold, check=False)
            state.state_filter = sf
        failed |= _row_failures(state, dual)
        if np.any(failed):
            _quarantine(state, failed, obs, P0, theta_park)
        if record_trace:
            trace["mean"].append(state.state_mean().copy())
            trace["theta"].append(state.param_filter.mean.copy() if dual else theta0.copy())
            trace["ess"].append(_ess(state.state_filter, B))
            trace["failed"].append(failed.copy())

    theta_T = state.param_filter.mean if dual else theta0
    z_T = state.state_mean()
    if record_trace:
        trace = {k: np.stack(v, axis=1) for k, v in trace.items()}
    return FilterRun(np.array(z_T), np.array(theta_T), failed, trace)


def _ess(sf, B):
    if isinstance(sf, ParticleEnsemble):
        return np.broadcast_to(np.asarray(sf.ess, dtype=float), (B,)).copy()
    return np.full(B, np.nan)


def _row_failures(state: DualFilterState, dual: bool) -> np.ndarray:
    sf = state.state_filter
    if isinstance(sf, UkfState):
        bad = _bad_rows(sf.mean, -1) | _bad_rows(sf.cov, (-1, -2))
    else:
        bad = ~np.asarray(sf.alive, dtype=bool) | _bad_rows(sf.mean(), -1)
    if dual:
        bad |= _bad_rows(state.param_filter.mean, -1) | _bad_rows(state.param_filter.cov, (-1, -2))
    return bad


def _quarantine(state: DualFilterState, rows, obs, P0, theta_prior):
    """Park failed rows at finite values so batched linear algebra keeps working."""
    sf = state.state_filter
    if isinstance(sf, UkfState):
        sf.mean = np.where(rows[:, None], obs, sf.mean)
        sf.cov = np.where(rows[:, None, None], P0, sf.cov)
    else:
        sf.particles = np.where(rows[:, None, None], obs[:, None, :], sf.particles)
        sf.covs = np.where(rows[:, None, None, None], P0, sf.covs)
        sf.log_weights = np.where(rows[:, None], -np.log(sf.n), sf.log_weights)
    pf = state.param_filter
    pf.mean = np.where(rows[:, None], theta_prior, pf.mean)  # theta_prior is (B, 3)
    pf.cov = np.where(rows[:, None, None], np.eye(3), pf.cov)
