"""Train an LS-SVM forecaster on a noisy Lorenz-63 series and score it.

Run with ``python demos/svm_forecast.py``. Takes under a minute.
"""

import numpy as np

from chaoscast import attractor_trajectory, observe
from chaoscast.experiment import builtin_systems, compute_rmse
from chaoscast.svm import SvmConfig, fit_forecaster, predict_at

rng = np.random.default_rng(0)
ds = builtin_systems()["DS1"]

# 1000 historical observations and an independent test trajectory
hist = observe(attractor_trajectory(ds.params, 0.01, 999, rng, ds.stoch_noise), ds.obs_noise, rng)
test_traj = attractor_trajectory(ds.params, 0.01, 2000, rng, ds.stoch_noise)
test = observe(test_traj, ds.obs_noise, rng)

cfg = SvmConfig(max_embedding=8)
for T_f in (1, 10, 50):
    model, sel = fit_forecaster(hist.observations, T_f, cfg=cfg)
    ends = np.arange(50, 1900, 10)
    pred = predict_at(model, test.observations, ends)
    rmse = compute_rmse(pred, test_traj.states[ends + T_f])
    naive = compute_rmse(test.observations[ends], test_traj.states[ends + T_f])
    hp = model.hyperparams
    print(f"T_f={T_f:3d}  M*={hp.M:2d}  lambda={hp.lam:.3g}  sigma={hp.sigma:.3g}  RMSE={rmse:.3f}  persistence={naive:.3f}")
