"""Dual state and parameter estimation from a deliberately wrong prior.

The filter starts with (sigma, b, r) offset by (+6, -3, +9) and learns the
generating parameters from the observations alone.

Run with ``python demos/parameter_estimation.py``.
"""

import numpy as np

from chaoscast import LorenzParams, attractor_trajectory, observe
from chaoscast.experiment import builtin_systems
from chaoscast.filtering import FilterConfig, assimilate

rng = np.random.default_rng(3)
ds = builtin_systems()["DS1"]
truth = ds.params.as_array()
traj = attractor_trajectory(ds.params, 0.01, 1500, rng, ds.stoch_noise)
obs = observe(traj, ds.obs_noise, rng)

prior = truth + np.array([6.0, -3.0, 9.0])
prior[1] = max(prior[1], 0.1)
cfg = FilterConfig(param_prior_mean=tuple(prior))
run = assimilate(obs.observations[None], "ukf_gaussian", cfg, 0.01, np.random.default_rng(4), record_trace=True)

theta = run.trace["theta"][0]
print("truth", truth.round(3), " prior", prior.round(3))
for t in (0, 100, 300, 600, 1000, 1500):
    mse = np.mean((theta[t] - truth) ** 2)
    print(f"t={t:5d}  theta={theta[t].round(3)}  mse={mse:.4g}")
print("final estimate:", LorenzParams(*theta[-1]))
