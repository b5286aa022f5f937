"""Compare the UKF and the particle filter on one system with known dynamics.

Run with ``python demos/filters.py``.
"""

import numpy as np

from chaoscast import attractor_trajectory, observe
from chaoscast.experiment import builtin_systems, compute_rmse
from chaoscast.filtering import FilterConfig, assimilate

rng = np.random.default_rng(1)
ds = builtin_systems()["DS1"]
traj = attractor_trajectory(ds.params, 0.01, 600, rng, ds.stoch_noise)
obs = observe(traj, ds.obs_noise, rng)

T_p, horizons = 500, [1, 10, 50, 100]
window = obs.observations[None, :T_p]
truth = traj.states[T_p - 1 + np.array(horizons)]
print("raw observation RMSE:", round(compute_rmse(obs.observations[:T_p], traj.states[:T_p]), 3))

cfg = FilterConfig(n_particles=500)
for method in ("ukf_gaussian", "pf_laplace"):
    run = assimilate(window, method, cfg, 0.01, np.random.default_rng(2), known_params=ds.params, record_trace=True)
    filt = compute_rmse(run.trace["mean"][0], traj.states[:T_p])
    fc = run.forecast(horizons, 0.01)[:, 0]
    errs = np.linalg.norm(fc - truth, axis=1) / np.sqrt(3)
    print(f"{method:13s} filtered RMSE {filt:.3f}; forecast error by horizon", {h: round(float(e), 3) for h, e in zip(horizons, errs)})
