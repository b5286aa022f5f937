"""Unscented transform and unscented Kalman filter.

All routines broadcast over leading batch axes: a mean of shape ``(..., d)``
pairs with a covariance of shape ``(..., d, d)``. Many independent filters
(one per test window, say) then advance in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..dynamics import DivergenceError, LorenzMap, LorenzParams
from ..noise import NoiseSpec, as_noise

COV_FLOOR = 1e-10


@dataclass(frozen=True)
class UtParams:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def weights(self, d: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Mean weights, covariance weights and sigma-point spread for dimension ``d``."""
        lam = self.alpha**2 * (d + self.kappa) - d
        spread = d + lam
        if not spread > 0:
            raise ValueError(f"d + lambda must be positive, got {spread}")
        wm = np.full(2 * d + 1, 0.5 / spread)
        wm[0] = lam / spread
        wc = wm.copy()
        wc[0] += 1.0 - self.alpha**2 + self.beta
        return wm, wc, math.sqrt(spread)


@dataclass(frozen=True)
class StateSpaceModel:
    """``z_t = f(z_{t-1} | theta) + eta_t``, ``x_t = h(z_t) + eps_t``.

    ``transition(z, theta)`` must broadcast over leading axes. ``observation``
    of None means the identity map. Noises are iid per coordinate.
    """

    transition: Callable
    stoch_noise: NoiseSpec | None
    obs_noise: NoiseSpec | None
    theta: np.ndarray | None = None
    observation: Callable | None = None

    @property
    def q_mean(self) -> float:
        return as_noise(self.stoch_noise).expectation()

    @property
    def q_var(self) -> float:
        return as_noise(self.stoch_noise).variance()

    @property
    def r_mean(self) -> float:
        return as_noise(self.obs_noise).expectation()

    @property
    def r_var(self) -> float:
        return as_noise(self.obs_noise).variance()

    def f(self, z, theta=None):
        return self.transition(z, self.theta if theta is None else theta)

    def h(self, z):
        return z if self.observation is None else self.observation(z)


def lorenz_model(params: LorenzParams, dt: float, stoch_noise: NoiseSpec | None, obs_noise: NoiseSpec | None) -> StateSpaceModel:
    return StateSpaceModel(LorenzMap(dt), stoch_noise, obs_noise, theta=params.as_array())


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray = field(repr=False)
    t: int = 0


# -- linear algebra helpers --------------------------------------------------


def floor_cov(cov, floor: float = COV_FLOOR) -> np.ndarray:
    """Symmetrise and clip eigenvalues at ``floor``.

    Batches containing non-finite matrices come back as NaN instead of raising.
    """
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    bad = ~np.all(np.isfinite(sym), axis=(-1, -2))
    if np.any(bad):
        sym = np.where(bad[..., None, None], np.eye(cov.shape[-1]), sym)
    w, V = np.linalg.eigh(sym)
    out = (V * np.maximum(w, floor)[..., None, :]) @ np.swapaxes(V, -1, -2)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    if np.any(bad):
        out = np.where(bad[..., None, None], np.nan, out)
    return out


def cov_sqrt(cov, floor: float = COV_FLOOR) -> np.ndarray:
    """Lower Cholesky factor of the floored covariance."""
    fl = floor_cov(cov, floor)
    bad = ~np.all(np.isfinite(fl), axis=(-1, -2))
    if np.any(bad):
        fl = np.where(bad[..., None, None], np.eye(fl.shape[-1]), fl)
    try:
        L = np.linalg.cholesky(fl)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError("covariance square root failed after flooring") from exc
    if np.any(bad):
        L = np.where(bad[..., None, None], np.nan, L)
    return L


def sigma_points(mean, cov, ut: UtParams) -> np.ndarray:
    """``2d + 1`` points ``(..., 2d+1, d)``: centre, then +columns, then -columns."""
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[-1]
    _, _, c = ut.weights(d)
    cols = np.swapaxes(cov_sqrt(cov), -1, -2)  # (..., d, d), row j = column j of L
    m = mean[..., None, :]
    return np.concatenate([m, m + c * cols, m - c * cols], axis=-2)


def _moments(Y, wm, wc):
    # accumulate relative to the centre point; wm[0] is large and negative for small alpha
    y0 = Y[..., 0, :]
    mean = y0 + np.einsum("k,...kd->...d", wm[1:], Y[..., 1:, :] - y0[..., None, :])
    dev = Y - mean[..., None, :]
    cov = np.einsum("k,...ki,...kj->...ij", wc, dev, dev)
    return mean, dev, cov


def unscented_transform(mean, cov, func: Callable, ut: UtParams = UtParams()):
    """Propagate a Gaussian through ``func`` (applied to ``(..., 2d+1, d)`` point sets).

    Returns
    -------
    mean_out : (..., m)
    cov_out : (..., m, m)
    cross_cov : (..., d, m)
        Input-output cross-covariance.
    """
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[-1]
    wm, wc, _ = ut.weights(d)
    X = sigma_points(mean, cov, ut)
    Y = np.asarray(func(X), dtype=float)
    y_mean, y_dev, y_cov = _moments(Y, wm, wc)
    x_dev = X - mean[..., None, :]
    cross = np.einsum("k,...ki,...kj->...ij", wc, x_dev, y_dev)
    return y_mean, 0.5 * (y_cov + np.swapaxes(y_cov, -1, -2)), cross


# -- filter ------------------------------------------------------------------


def ukf_predict(state: UkfState, model: StateSpaceModel, ut: UtParams = UtParams(), theta=None):
    """Time update; returns ``(mean, cov)`` of the one-step prediction."""
    th = model.theta if theta is None else np.asarray(theta, dtype=float)
    if th is not None and th.ndim > 1:
        th = th[..., None, :]  # broadcast a batch of parameters over the sigma points
    m, P, _ = unscented_transform(state.mean, state.cov, lambda X: model.transition(X, th), ut)
    d = m.shape[-1]
    return m + model.q_mean, P + model.q_var * np.eye(d)


def ukf_update(mean, cov, observation, model: StateSpaceModel, ut: UtParams = UtParams(), t: int = 0) -> UkfState:
    """Measurement update with moment-matched (Gaussian) observation noise."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    x = np.asarray(observation, dtype=float)
    if model.observation is None:
        y_mean, S, C = mean, cov, cov
    else:
        y_mean, S, C = unscented_transform(mean, cov, model.observation, ut)
    m_dim = y_mean.shape[-1]
    y_mean = y_mean + model.r_mean
    S = S + model.r_var * np.eye(m_dim)
    # gain = C S^-1  ->  S gain^T = C^T
    gain = np.swapaxes(_sym_solve(S, np.swapaxes(C, -1, -2)), -1, -2)
    innov = x - y_mean
    new_mean = mean + np.einsum("...ij,...j->...i", gain, innov)
    new_cov = cov - gain @ S @ np.swapaxes(gain, -1, -2)
    return UkfState(new_mean, floor_cov(new_cov), t)


def _sym_solve(S, B):
    bad = ~np.all(np.isfinite(S), axis=(-1, -2))
    if np.any(bad):
        S = np.where(bad[..., None, None], np.eye(S.shape[-1]), S)
    with np.errstate(all="ignore"):
        out = np.linalg.solve(S, B)
    if np.any(bad):
        out = np.where(bad[..., None, None], np.nan, out)
    return out


def ukf_step(state: UkfState, observation, model: StateSpaceModel, ut: UtParams = UtParams(), theta=None, check: bool = True) -> UkfState:
    """Predict through ``f`` and update on ``observation``.

    With ``check`` (the default) a non-finite result raises
    :class:`DivergenceError`; batch callers pass ``check=False`` and mask
    failed rows themselves.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        m, P = ukf_predict(state, model, ut, theta)
        new = ukf_update(m, P, observation, model, ut, t=state.t + 1)
    if check and not (np.all(np.isfinite(new.mean)) and np.all(np.isfinite(new.cov))):
        raise DivergenceError(f"UKF produced non-finite values at step {new.t}", step=new.t)
    return new


def ukf_init(observation, model: StateSpaceModel, prior_cov, ut: UtParams = UtParams()) -> UkfState:
    """Prior centred on the first observation, then updated with it (no time step)."""
    x = np.asarray(observation, dtype=float)
    P0 = np.broadcast_to(np.asarray(prior_cov, dtype=float), x.shape + x.shape[-1:]).copy()
    return ukf_update(x.copy(), P0, x, model, ut, t=0)


def kalman_step(mean, cov, observation, A, C, Q, R, b=None):
    """Textbook linear Kalman filter step; the oracle the UKF is checked against."""
    m = A @ mean + (0.0 if b is None else b)
    P = A @ cov @ A.T + Q
    S = C @ P @ C.T + R
    K = np.linalg.solve(S, C @ P).T
    m = m + K @ (observation - C @ m)
    P = P - K @ S @ K.T
    return m, 0.5 * (P + P.T)
