"""Particle filter with prior or unscented-Kalman proposals.

Weights live in log space. An ensemble may carry leading batch axes
(``particles`` of shape ``(..., N, d)``), one independent filter per batch row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import logsumexp

from .. import _kernels
from ..dynamics import DivergenceError, LorenzMap
from ..noise import as_noise
from .ukf import COV_FLOOR, StateSpaceModel, UkfState, UtParams, cov_sqrt, ukf_step

ProposalKind = Literal["prior", "ukf"]

# exp() of anything below this underflows to exactly 0.0
_LOG_TINY = np.log(np.finfo(float).tiny)


@dataclass
class ParticleEnsemble:
    particles: np.ndarray = field(repr=False)  # (..., N, d)
    log_weights: np.ndarray = field(repr=False)  # (..., N), logsumexp == 0 per row
    t: int = 0
    covs: np.ndarray | None = field(default=None, repr=False)  # (..., N, d, d), UKF proposal only
    ess: np.ndarray | float | None = None  # before any resampling at this step
    resampled: np.ndarray | bool = False
    alive: np.ndarray | bool = True  # per batch row: False once every weight vanished

    @property
    def n(self) -> int:
        return self.particles.shape[-2]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def mean(self) -> np.ndarray:
        return np.einsum("...n,...nd->...d", self.weights, self.particles)


def effective_sample_size(weights) -> np.ndarray | float:
    w = np.asarray(weights, dtype=float)
    out = 1.0 / np.sum(w * w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _normalise(logw):
    logw = np.where(np.isnan(logw), -np.inf, logw)
    with np.errstate(invalid="ignore"):
        total = logsumexp(logw, axis=-1, keepdims=True)
    out = logw - total
    out = np.where(out < _LOG_TINY, -np.inf, out)
    # re-centre after clipping so that the surviving weights sum to one exactly enough
    with np.errstate(invalid="ignore"):
        out = out - logsumexp(out, axis=-1, keepdims=True)
    return out, np.squeeze(np.isfinite(total), -1)


def _gaussian_draw(mean, cov, size, rng):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return mean + rng.standard_normal(size + mean.shape) @ root.T


def pf_init(prior_mean, prior_cov, n_particles: int, rng: np.random.Generator, with_covs: bool = False) -> ParticleEnsemble:
    """Draw ``n_particles`` iid from N(prior_mean, prior_cov) with uniform weights.

    ``prior_mean`` may carry batch axes; ``prior_cov`` is shared. With
    ``with_covs`` each particle also carries ``prior_cov`` as its UKF covariance.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    mean = np.asarray(prior_mean, dtype=float)
    cov = np.asarray(prior_cov, dtype=float)
    batch = mean.shape[:-1]
    d = mean.shape[-1]
    z = _gaussian_draw(np.zeros(d), cov, batch + (n_particles,), rng) + mean[..., None, :]
    logw = np.full(batch + (n_particles,), -np.log(n_particles))
    covs = np.broadcast_to(cov, batch + (n_particles, d, d)).copy() if with_covs else None
    n = float(n_particles)
    return ParticleEnsemble(z, logw, 0, covs, np.full(batch, n) if batch else n, False)


def systematic_indices(weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling indices per batch row."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[-1]
    batch = w.shape[:-1]
    cum = np.cumsum(w, axis=-1)
    cum[..., -1] = 1.0
    u = (rng.uniform(size=batch + (1,)) + np.arange(n)) / n
    flat_cum = (cum + np.arange(int(np.prod(batch, dtype=int))).reshape(batch + (1,))).ravel()
    flat_u = (u + np.arange(int(np.prod(batch, dtype=int))).reshape(batch + (1,))).ravel()
    idx = np.searchsorted(flat_cum, flat_u, side="right").reshape(batch + (n,))
    idx -= (np.arange(int(np.prod(batch, dtype=int))) * n).reshape(batch + (1,))
    return np.clip(idx, 0, n - 1)


def _take(a, idx):
    if a is None:
        return None
    extra = a.ndim - idx.ndim
    return np.take_along_axis(a, idx.reshape(idx.shape + (1,) * extra), axis=idx.ndim - 1)


def resample(ens: ParticleEnsemble, rng: np.random.Generator, rows=None) -> ParticleEnsemble:
    """Systematic resampling to uniform weights (optionally only where ``rows`` is True)."""
    idx = systematic_indices(ens.weights, rng)
    n = ens.n
    if rows is not None:
        keep = np.broadcast_to(np.arange(n), idx.shape)
        idx = np.where(np.asarray(rows)[..., None], idx, keep)
    uniform = np.full(idx.shape, -np.log(n))
    logw = uniform if rows is None else np.where(np.asarray(rows)[..., None], uniform, ens.log_weights)
    return replace(
        ens,
        particles=_take(ens.particles, idx),
        log_weights=logw,
        covs=_take(ens.covs, idx),
        resampled=True if rows is None else np.asarray(rows),
    )


def _obs_loglik(model: StateSpaceModel, observation, z):
    x = np.asarray(observation, dtype=float)
    if x.ndim > 1:
        x = x[..., None, :]
    return np.sum(as_noise(model.obs_noise).log_density(x - model.h(z)), axis=-1)


def _theta_rows(model: StateSpaceModel, theta, batch):
    th = model.theta if theta is None else np.asarray(theta, dtype=float)
    return th if th is None or th.ndim == 1 else th[..., None, :]


def _fast_path_ok(model: StateSpaceModel, d: int) -> bool:
    return isinstance(model.transition, LorenzMap) and model.observation is None and d == 3


def ukf_proposal(ens: ParticleEnsemble, observation, model: StateSpaceModel, ut: UtParams, theta=None, fast: bool | None = None):
    """Per-particle UKF predict/update; returns the Gaussian proposal ``(means, covs, f(z))``.

    ``f(z)`` is the noiseless transition of each particle, needed for the
    transition density in the weight update.
    """
    d = ens.particles.shape[-1]
    if fast is None:
        fast = _fast_path_ok(model, d)
    if fast:
        return _lorenz_proposal(ens, observation, model, ut, theta, None)[:3]
    th = _theta_rows(model, theta, ens.particles.shape[:-2])
    x = np.asarray(observation, dtype=float)
    if x.ndim > 1:
        x = x[..., None, :]
    state = UkfState(ens.particles, ens.covs, ens.t)
    prop = ukf_step(state, x, model, ut, theta=th, check=False)
    with np.errstate(over="ignore", invalid="ignore"):
        fz = model.f(ens.particles, th)
    return prop.mean, prop.cov, fz


def _lorenz_proposal(ens, observation, model, ut, theta, xi):
    batch = ens.particles.shape[:-2]
    n = ens.n
    rows = int(np.prod(batch, dtype=int))
    th = model.theta if theta is None else np.asarray(theta, dtype=float)
    th = np.broadcast_to(th, batch + (3,)).reshape(rows, 3)
    obs = np.broadcast_to(np.asarray(observation, dtype=float), batch + (3,)).reshape(rows, 3)
    row = np.repeat(np.arange(rows), n)
    mean = np.ascontiguousarray(ens.particles.reshape(rows * n, 3))
    cov = np.ascontiguousarray(ens.covs.reshape(rows * n, 3, 3))
    if xi is None:
        xi = np.zeros((rows * n, 3))
    wm, wc, c = ut.weights(3)
    out_z = np.empty_like(mean)
    out_cov = np.empty_like(cov)
    out_pm = np.empty_like(mean)
    out_fz = np.empty_like(mean)
    out_lq = np.empty(rows * n)
    _kernels.lorenz_ukf_proposal(
        mean, cov, np.ascontiguousarray(obs), row, np.ascontiguousarray(th), model.transition.dt,
        model.q_mean, model.q_var, model.r_mean, model.r_var, c, wm, wc,
        np.ascontiguousarray(xi.reshape(rows * n, 3)), COV_FLOOR,
        out_z, out_cov, out_pm, out_fz, out_lq,
    )
    shp = batch + (n,)
    return (
        out_pm.reshape(shp + (3,)),
        out_cov.reshape(shp + (3, 3)),
        out_fz.reshape(shp + (3,)),
        out_z.reshape(shp + (3,)),
        out_lq.reshape(shp),
    )


def _gaussian_logpdf(z, mean, L):
    # L lower Cholesky factor of the covariance
    d = z.shape[-1]
    diff = z - mean
    sol = np.linalg.solve(L, diff[..., None])[..., 0]
    logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * np.sum(sol**2, axis=-1) - logdet - 0.5 * d * np.log(2 * np.pi)


def pf_step(
    ens: ParticleEnsemble,
    observation,
    model: StateSpaceModel,
    proposal: ProposalKind = "prior",
    rng: np.random.Generator | None = None,
    ut: UtParams = UtParams(),
    theta=None,
    resample_threshold: float = 0.5,
    check: bool = True,
    fast: bool | None = None,
) -> ParticleEnsemble:
    """Move every particle by a proposal draw, reweight, renormalise, maybe resample.

    Weight recursion: ``w_t = w_{t-1} p(x_t | z_t) p(z_t | z_{t-1}) / q(z_t)``.
    For the prior proposal ``q = p(z_t | z_{t-1})`` and only the likelihood
    remains. Rows whose ESS falls below ``resample_threshold * N`` are
    resampled systematically.
    """
    if rng is None:
        raise ValueError("pf_step needs an rng")
    z = ens.particles
    batch = z.shape[:-2]
    n, d = z.shape[-2:]
    th = _theta_rows(model, theta, batch)
    with np.errstate(over="ignore", invalid="ignore"):
        if proposal == "prior":
            fz = model.f(z, th)
            eta = np.asarray(as_noise(model.stoch_noise).sample(rng, z.shape), dtype=float)
            new_z = fz + eta
            new_covs = ens.covs
            log_incr = _obs_loglik(model, observation, new_z)
        elif proposal == "ukf":
            if ens.covs is None:
                raise ValueError("UKF proposal needs per-particle covariances (pf_init(..., with_covs=True))")
            if as_noise(model.stoch_noise).is_degenerate:
                raise ValueError("UKF proposal needs a non-degenerate transition density")
            xi = rng.standard_normal(z.shape)
            if fast is None:
                fast = _fast_path_ok(model, d)
            if fast:
                _, new_covs, fz, new_z, logq = _lorenz_proposal(ens, observation, model, ut, theta, xi)
            else:
                pm, new_covs, fz = ukf_proposal(ens, observation, model, ut, theta, fast=False)
                L = cov_sqrt(new_covs)
                new_z = pm + np.einsum("...ij,...j->...i", L, xi)
                logq = _gaussian_logpdf(new_z, pm, L)
            log_trans = np.sum(as_noise(model.stoch_noise).log_density(new_z - fz), axis=-1)
            log_incr = _obs_loglik(model, observation, new_z) + log_trans - logq
        else:
            raise ValueError(f"unknown proposal {proposal!r}")
    finite = np.all(np.isfinite(new_z), axis=-1)
    if new_covs is not None and new_covs is not ens.covs:
        finite &= np.all(np.isfinite(new_covs), axis=(-1, -2))
    log_incr = np.where(finite, log_incr, -np.inf)
    logw, alive = _normalise(ens.log_weights + log_incr)
    # dead particles carry zero weight; park them somewhere finite so weighted sums stay finite
    if not np.all(finite):
        new_z = np.where(finite[..., None], new_z, 0.0)
        if new_covs is not None:
            new_covs = np.where(finite[..., None, None], new_covs, np.eye(d))
    t = ens.t + 1
    if check and not np.all(alive):
        raise DivergenceError(f"all particle weights vanished at step {t}", step=t)
    if not np.all(alive):
        logw = np.where(alive[..., None], logw, -np.log(n))
    ess = effective_sample_size(np.exp(logw))
    out = ParticleEnsemble(new_z, logw, t, new_covs, ess, False)
    trigger = np.asarray(ess) < resample_threshold * n
    if np.any(trigger):
        out = resample(out, rng, rows=trigger if batch else None)
        out.ess = ess
    out.alive = alive if batch else True
    return out


def pf_reweight(ens: ParticleEnsemble, observation, model: StateSpaceModel, rng, resample_threshold: float = 0.5):
    """Weight by the likelihood of ``observation`` without moving particles (first observation)."""
    finite = np.all(np.isfinite(ens.particles), axis=-1)
    loglik = np.where(finite, _obs_loglik(model, observation, ens.particles), -np.inf)
    logw, alive = _normalise(ens.log_weights + loglik)
    n = ens.n
    if not np.all(alive):
        logw = np.where(np.asarray(alive)[..., None], logw, -np.log(n))
    ess = effective_sample_size(np.exp(logw))
    out = ParticleEnsemble(ens.particles, logw, ens.t, ens.covs, ess, False)
    trigger = np.asarray(ess) < resample_threshold * n
    if np.any(trigger):
        out = resample(out, rng, rows=trigger if out.particles.ndim > 2 else None)
        out.ess = ess
    return out
