"""Lorenz-63 vector field, RK4 map, trajectory generation and noisy observation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from . import _kernels
from .noise import NoiseSpec

DEFAULT_DT = 0.01
BURN_IN_START = (10.0, 10.0, 25.0)


class DivergenceError(RuntimeError):
    """A trajectory or filter produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    b: float = 8.0 / 3.0
    r: float = 28.0

    def __post_init__(self):
        for name in ("sigma", "b", "r"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"LorenzParams.{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        """Parameters in (sigma, b, r) order, the layout filters use for theta."""
        return np.array([self.sigma, self.b, self.r])

    @classmethod
    def from_array(cls, theta) -> "LorenzParams":
        s, b, r = np.asarray(theta, dtype=float)
        return cls(s, b, r)


def _theta(params) -> np.ndarray:
    if isinstance(params, LorenzParams):
        return params.as_array()
    return np.asarray(params, dtype=float)


def lorenz_deriv(state, params) -> np.ndarray:
    """Lorenz vector field. Broadcasts over leading axes of ``state`` and ``params``.

    ``params`` is a :class:`LorenzParams` or an array ``(..., 3)`` in
    (sigma, b, r) order.
    """
    z = np.asarray(state, dtype=float)
    th = _theta(params)
    s, b, r = th[..., 0], th[..., 1], th[..., 2]
    x, y, w = z[..., 0], z[..., 1], z[..., 2]
    return np.stack((s * (y - x), x * (r - w) - y, x * y - b * w), axis=-1)


def rk4_step(state, params, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of the Lorenz field.

    Vectorised like :func:`lorenz_deriv`; no finiteness check (callers that
    need one use :func:`generate_trajectory` or check themselves).
    """
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    z = np.asarray(state, dtype=float)
    th = _theta(params)
    h = 0.5 * dt
    k1 = lorenz_deriv(z, th)
    k2 = lorenz_deriv(z + h * k1, th)
    k3 = lorenz_deriv(z + h * k2, th)
    k4 = lorenz_deriv(z + dt * k3, th)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class LorenzMap:
    """The dt-sampled RK4 Lorenz map ``f(z | theta)`` as a filter transition."""

    def __init__(self, dt: float = DEFAULT_DT):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)

    def __call__(self, z, theta):
        return rk4_step(z, theta, self.dt)

    def __repr__(self):
        return f"LorenzMap(dt={self.dt})"


@dataclass(frozen=True)
class Trajectory:
    dt: float
    states: np.ndarray = field(repr=False)
    params: LorenzParams = LorenzParams()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        st = np.asarray(self.states, dtype=float)
        if st.ndim != 2 or st.shape[1] != 3 or st.shape[0] == 0:
            raise ValueError(f"states must be a non-empty (n, 3) array, got shape {st.shape}")
        st.setflags(write=False)
        object.__setattr__(self, "states", st)

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True)
class ObservationSeries:
    observations: np.ndarray = field(repr=False)
    source_indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        idx = np.asarray(self.source_indices, dtype=np.int64)
        if obs.ndim != 2 or obs.shape[1] != 3:
            raise ValueError(f"observations must be (n, 3), got {obs.shape}")
        if idx.shape != (obs.shape[0],):
            raise ValueError("source_indices must align one-to-one with observations")
        obs.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "source_indices", idx)

    def __len__(self):
        return self.observations.shape[0]


def generate_trajectory(
    init,
    params: LorenzParams,
    dt: float,
    n_steps: int,
    stoch_noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Iterate ``z_t = rk4(z_{t-1}) + eta_t`` for ``n_steps`` steps.

    ``eta_t`` is drawn iid per coordinate from ``stoch_noise`` (zero when it is
    None). The result holds ``n_steps + 1`` states starting at ``init``.

    Raises
    ------
    DivergenceError
        If a state becomes non-finite; ``.step`` names the offending index.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    init = np.asarray(init, dtype=float)
    if init.shape != (3,) or not np.all(np.isfinite(init)):
        raise ValueError(f"init must be a finite 3-vector, got {init}")
    if stoch_noise is None:
        forcing = np.zeros((n_steps, 3))
    else:
        if rng is None:
            raise ValueError("an rng is required when stoch_noise is given")
        forcing = np.asarray(stoch_noise.sample(rng, (n_steps, 3)), dtype=float)
    out = np.empty((n_steps + 1, 3))
    bad = _kernels.integrate(init, params.as_array(), float(dt), forcing, out)
    if bad >= 0:
        raise DivergenceError(f"trajectory became non-finite at step {bad}", step=int(bad))
    return Trajectory(dt=float(dt), states=out, params=params)


def attractor_trajectory(
    params: LorenzParams,
    dt: float,
    n_steps: int,
    rng: np.random.Generator,
    stoch_noise: NoiseSpec | None = None,
    burn_in: int = 1000,
    start=BURN_IN_START,
    start_jitter: float = 1.0,
) -> Trajectory:
    """A trajectory with ``n_steps + 1`` states that starts on the attractor.

    The start point is ``start`` plus N(0, start_jitter^2) per coordinate, so
    independent draws give independent trajectories even without stochastic
    forcing; the first ``burn_in`` steps are then discarded.
    """
    init = np.asarray(start, dtype=float) + start_jitter * rng.standard_normal(3)
    full = generate_trajectory(init, params, dt, burn_in + n_steps, stoch_noise, rng)
    return Trajectory(dt=full.dt, states=full.states[burn_in:], params=params)


def observe(traj: Trajectory, obs_noise: NoiseSpec | None, rng: np.random.Generator | None = None) -> ObservationSeries:
    """Identity observation plus iid per-coordinate noise."""
    states = traj.states
    if obs_noise is None:
        noise = np.zeros_like(states)
    else:
        if rng is None:
            raise ValueError("an rng is required when obs_noise is given")
        noise = np.asarray(obs_noise.sample(rng, states.shape), dtype=float)
    return ObservationSeries(states + noise, np.arange(states.shape[0]))


def write_trajectory_csv(path: str | PathLike, traj: Trajectory, obs: ObservationSeries | None = None) -> None:
    """CSV with ``t,x,y,z`` (plus ``obs_x,obs_y,obs_z``), 17 significant digits."""
    header = ["t", "x", "y", "z"]
    if obs is not None:
        header += ["obs_x", "obs_y", "obs_z"]
        if len(obs) != len(traj):
            raise ValueError("observation series and trajectory differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(len(traj)):
            row = [str(t)] + [f"{v:.17g}" for v in traj.states[t]]
            if obs is not None:
                row += [f"{v:.17g}" for v in obs.observations[t]]
            w.writerow(row)


def read_trajectory_csv(path: str | PathLike, dt: float = DEFAULT_DT, params: LorenzParams | None = None):
    """Inverse of :func:`write_trajectory_csv`; returns ``(Trajectory, ObservationSeries | None)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body])
    col = {name: i for i, name in enumerate(header)}
    states = data[:, [col["x"], col["y"], col["z"]]]
    traj = Trajectory(dt=dt, states=states, params=params or LorenzParams())
    obs = None
    if "obs_x" in col:
        obs = ObservationSeries(data[:, [col["obs_x"], col["obs_y"], col["obs_z"]]], data[:, col["t"]].astype(np.int64))
    return traj, obs
