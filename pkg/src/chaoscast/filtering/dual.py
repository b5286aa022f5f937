"""Dual state/parameter estimation and forecast propagation.

Two filters run side by side. The parameter filter is a UKF over
``theta = (sigma, b, r)`` with a random-walk transition and the measurement
model ``x_t = f(z_{t-1} | theta_t) + eta_t + eps_t``, where ``z_{t-1}`` is the
state filter's current estimate. The state filter (UKF or particle filter)
then steps with the freshly updated parameter mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import rk4_step
from .particle import ParticleEnsemble, pf_step
from .ukf import StateSpaceModel, UkfState, UtParams, floor_cov, ukf_step, unscented_transform


def temper(nu_variance: float, t: int = 0, gamma: float = 0.995) -> float:
    """Shrink the parameter random-walk variance by ``gamma`` (applied once per step)."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return nu_variance * gamma


@dataclass
class DualFilterState:
    state_filter: UkfState | ParticleEnsemble
    param_filter: UkfState
    nu_variance: float
    gamma: float = 0.995
    include_state_cov: bool = True
    meta: dict = field(default_factory=dict, repr=False)

    def state_mean(self) -> np.ndarray:
        sf = self.state_filter
        return sf.mean() if isinstance(sf, ParticleEnsemble) else sf.mean

    def state_cov(self) -> np.ndarray:
        sf = self.state_filter
        if isinstance(sf, UkfState):
            return sf.cov
        w = sf.weights
        dev = sf.particles - sf.mean()[..., None, :]
        return np.einsum("...n,...ni,...nj->...ij", w, dev, dev)


def param_update(
    param: UkfState,
    z_prev,
    observation,
    model: StateSpaceModel,
    nu_variance: float,
    ut: UtParams = UtParams(),
    state_cov=None,
) -> UkfState:
    """One random-walk UKF step on the parameters given the previous state estimate.

    ``state_cov`` (the state filter's covariance of ``z_prev``), when given, is
    added to the measurement noise so the parameter filter accounts for the
    uncertainty of the state it conditions on.
    """
    p = param.mean.shape[-1]
    cov = param.cov + nu_variance * np.eye(p)
    z_prev = np.asarray(z_prev, dtype=float)[..., None, :]

    def measure(theta_points):
        return model.transition(z_prev, theta_points)

    with np.errstate(over="ignore", invalid="ignore"):
        y_mean, S, C = unscented_transform(param.mean, cov, measure, ut)
        m = y_mean.shape[-1]
        y_mean = y_mean + model.q_mean + model.r_mean
        S = S + (model.q_var + model.r_var) * np.eye(m)
        if state_cov is not None:
            S = S + state_cov
        bad = ~np.all(np.isfinite(S), axis=(-1, -2))
        S_safe = np.where(bad[..., None, None], np.eye(m), S) if np.any(bad) else S
        gain = np.swapaxes(np.linalg.solve(S_safe, np.swapaxes(C, -1, -2)), -1, -2)
        innov = np.asarray(observation, dtype=float) - y_mean
        mean = param.mean + np.einsum("...ij,...j->...i", gain, innov)
        new_cov = cov - gain @ S @ np.swapaxes(gain, -1, -2)
    if np.any(bad):
        mean = np.where(bad[..., None], np.nan, mean)
    new_cov = floor_cov(new_cov)
    # a point-mass parameter belief has zero gain; the floor would otherwise let it drift
    frozen = ~np.any(cov != 0, axis=(-1, -2))
    if np.any(frozen):
        mean = np.where(frozen[..., None], param.mean, mean)
        new_cov = np.where(frozen[..., None, None], 0.0, new_cov)
    return UkfState(mean, new_cov, param.t + 1)


def dual_step(
    dual: DualFilterState,
    observation,
    model: StateSpaceModel,
    ut: UtParams = UtParams(),
    rng: np.random.Generator | None = None,
    proposal: str = "ukf",
    resample_threshold: float = 0.5,
    check: bool = True,
) -> DualFilterState:
    """Parameter filter step (using the current state estimate), then state filter step
    (using the updated parameter estimate), then tempering of the parameter noise."""
    z_prev = dual.state_mean()
    scov = dual.state_cov() if dual.include_state_cov else None
    param = param_update(dual.param_filter, z_prev, observation, model, dual.nu_variance, ut, scov)
    theta = param.mean
    sf = dual.state_filter
    if isinstance(sf, UkfState):
        new_sf = ukf_step(sf, observation, model, ut, theta=theta, check=check)
    else:
        new_sf = pf_step(sf, observation, model, proposal, rng, ut, theta=theta, resample_threshold=resample_threshold, check=check)
    return DualFilterState(
        new_sf,
        param,
        temper(dual.nu_variance, param.t, dual.gamma),
        dual.gamma,
        dual.include_state_cov,
        dual.meta,
    )


def forecast_propagate(z_T, theta_T, T_f: int, dt: float) -> np.ndarray:
    """Apply the noiseless RK4 map ``T_f`` times with parameters held at ``theta_T``."""
    if T_f < 0:
        raise ValueError("T_f must be >= 0")
    z = np.array(z_T, dtype=float)
    for _ in range(T_f):
        z = rk4_step(z, theta_T, dt)
    return z


def forecast_path(z_T, theta_T, horizons, dt: float) -> np.ndarray:
    """Forecasts at each horizon in ``horizons``; output ``(len(horizons), ..., 3)``."""
    horizons = sorted(int(h) for h in horizons)
    out = []
    z = np.array(z_T, dtype=float)
    done = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for h in horizons:
            for _ in range(h - done):
                z = rk4_step(z, theta_T, dt)
            done = h
            out.append(z.copy())
    return np.stack(out)
