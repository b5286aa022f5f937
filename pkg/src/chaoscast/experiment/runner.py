"""Forecasting cells, the two forecaster arms and the parameter-convergence study.

Every cell (system, method, historical size, repetition) is a pure function
of the configuration and its derived seed, so cells can run in any order or
in parallel and still give identical numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import ObservationSeries, Trajectory, attractor_trajectory, observe
from ..filtering import FilterConfig, assimilate
from ..svm import SvmConfig, predict_at, select_embedding, train_final
from .config import (
    FILTER_METHODS,
    METHODS,
    STREAM_FILTER,
    STREAM_HISTORY,
    STREAM_PARAM,
    STREAM_TEST,
    ExperimentConfig,
    ExperimentPlan,
    ParamConvergencePlan,
    cell_seed,
)
from .systems import SystemConfig, build_system

# (sigma, b, r) offsets scaled by the perturbation level
PERTURBATION = np.array([2.0, 1.0, 3.0])


@dataclass(frozen=True)
class RmseRecord:
    system: str
    method: str
    historical_size: int | None
    T_p: int
    T_f: int
    repetition: int
    rmse: float
    n_failures: int = 0

    def sort_key(self):
        return (self.system, METHODS.index(self.method), self.historical_size or 0, self.T_p, self.T_f, self.repetition)


@dataclass(frozen=True)
class ParamConvergenceRecord:
    level: int
    repetition: int
    t: int
    mse: float


@dataclass(frozen=True)
class TestBlock:
    """A test trajectory, its observations and the sampled test indices."""

    trajectory: Trajectory = field(repr=False)
    observations: ObservationSeries = field(repr=False)
    indices: np.ndarray

    def windows(self, T_p: int) -> np.ndarray:
        """``(n_test, T_p, 3)`` observation windows ending at each test index."""
        offs = np.arange(-T_p + 1, 1)
        return self.observations.observations[self.indices[:, None] + offs[None, :]]

    def truth(self, T_f: int) -> np.ndarray:
        return self.trajectory.states[self.indices + T_f]


def compute_rmse(predictions, truths) -> float:
    """Root of the mean squared error over all indices and coordinates."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def sample_test_indices(length: int, n_test: int, constraints: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Distinct indices ``i`` with ``i >= max_T_p - 1`` and ``i + max_T_f < length``, sorted.

    ``constraints`` is ``(max_T_p, max_T_f)``; each index marks the last
    observation of its window.
    """
    max_tp, max_tf = constraints
    lo, hi = max_tp - 1, length - max_tf  # admissible: lo <= i < hi
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    if hi - lo < n_test:
        raise ValueError(
            f"trajectory of length {length} admits {max(hi - lo, 0)} test indices for T_p<={max_tp}, T_f<={max_tf}; {n_test} requested"
        )
    return np.sort(rng.choice(np.arange(lo, hi), size=n_test, replace=False))


def make_test_block(plan: ExperimentPlan, system: SystemConfig, repetition: int) -> TestBlock:
    rng = np.random.default_rng(cell_seed(plan.seed, system.id, 0, repetition, STREAM_TEST))
    L = plan.test_length_effective
    traj = attractor_trajectory(system.params, plan.dt, L - 1, rng, system.stoch_noise)
    obs = observe(traj, system.obs_noise, rng)
    idx = sample_test_indices(L, plan.n_test_effective, (max(plan.T_p), max(plan.T_f)), rng)
    return TestBlock(traj, obs, idx)


def make_history(plan: ExperimentPlan, system: SystemConfig, size: int, repetition: int) -> ObservationSeries:
    """A fresh historical series of ``size`` observations."""
    rng = np.random.default_rng(cell_seed(plan.seed, system.id, size, repetition, STREAM_HISTORY))
    traj = attractor_trajectory(system.params, plan.dt, size - 1, rng, system.stoch_noise)
    return observe(traj, system.obs_noise, rng)


def _record(system, method, size, T_p, T_f, rep, pred, truth) -> RmseRecord:
    ok = np.all(np.isfinite(pred), axis=-1)
    n_bad = int(ok.size - ok.sum())
    rmse = compute_rmse(pred[ok], truth[ok]) if ok.any() else math.nan
    return RmseRecord(system, method, size, T_p, T_f, rep, rmse, n_bad)


# -- cells -------------------------------------------------------------------


def svm_predictions(
    plan: ExperimentPlan, system: SystemConfig, size: int, repetition: int, cfg: SvmConfig = SvmConfig()
) -> tuple[TestBlock, dict[tuple[int, int], np.ndarray]]:
    """SVM forecasts at the test indices for every ``(T_p, T_f)`` from one historical series.

    One embedding search per horizon covers every T_p: the search with a cap
    of ``min(T_p, max_embedding)`` visits a prefix of the uncapped search.
    """
    block = make_test_block(plan, system, repetition)
    hist = make_history(plan, system, size, repetition)
    cap = min(max(plan.T_p), cfg.max_embedding)
    preds = {}
    for T_f in plan.T_f:
        sel = select_embedding(hist, T_f, cap, cfg)
        models = {}
        for T_p in plan.T_p:
            hp = sel.best_up_to(min(T_p, cfg.max_embedding)).hyperparams
            if hp.M not in models:
                models[hp.M] = train_final(hist, hp.M, hp.lam, hp.sigma, T_f, cfg.retrain_factor)
            preds[T_p, T_f] = predict_at(models[hp.M], block.observations, block.indices)
    return block, preds


def svm_cell(plan: ExperimentPlan, system: SystemConfig, size: int, repetition: int, cfg: SvmConfig = SvmConfig()) -> list[RmseRecord]:
    block, preds = svm_predictions(plan, system, size, repetition, cfg)
    return [
        _record(system.id, "svm", size, T_p, T_f, repetition, pred, block.truth(T_f))
        for (T_p, T_f), pred in sorted(preds.items())
    ]


def filter_cell(plan: ExperimentPlan, system: SystemConfig, method: str, repetition: int, cfg: FilterConfig = FilterConfig()) -> list[RmseRecord]:
    """Filter forecasts for every (T_p, T_f); all test windows run as one batch."""
    if method not in FILTER_METHODS:
        raise ValueError(f"method must be one of {FILTER_METHODS}, got {method!r}")
    block = make_test_block(plan, system, repetition)
    rng = np.random.default_rng(cell_seed(plan.seed, system.id, 0, repetition, STREAM_FILTER[method]))
    known = system.params if system.known else None
    out = []
    for T_p in plan.T_p:
        run = assimilate(block.windows(T_p), method, cfg, plan.dt, rng, known_params=known)
        fc = run.forecast(plan.T_f, plan.dt)
        for k, T_f in enumerate(plan.T_f):
            out.append(_record(system.id, method, None, T_p, T_f, repetition, fc[k], block.truth(T_f)))
    return out


def plan_cells(config: ExperimentConfig) -> list[tuple]:
    """``(system, method, size, repetition)`` for every cell of the plan; size is None for filters."""
    plan = config.plan
    cells = []
    for sid in plan.systems:
        for method in plan.methods:
            if method == "svm":
                for size in plan.historical_sizes:
                    cells.extend((sid, method, size, r) for r in range(plan.repetitions(size)))
            else:
                cells.extend((sid, method, None, r) for r in range(plan.n_filter_repetitions))
    return cells


def run_cell(config: ExperimentConfig, cell: tuple) -> list[RmseRecord]:
    sid, method, size, rep = cell
    system = config.system(sid)
    if method == "svm":
        return svm_cell(config.plan, system, size, rep, config.svm)
    return filter_cell(config.plan, system, method, rep, config.filter)


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1, cells: list[tuple] | None = None) -> list[RmseRecord]:
    """Run every planned cell (``jobs`` worker processes) and return sorted records."""
    cells = plan_cells(config) if cells is None else cells
    if jobs <= 1:
        chunks = [run_cell(config, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell_star, [(config, c) for c in cells]))
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=RmseRecord.sort_key)


def run_svm_arm(plan: ExperimentPlan, system: SystemConfig, cfg: SvmConfig = SvmConfig()) -> list[RmseRecord]:
    out = []
    for size in plan.historical_sizes:
        for rep in range(plan.repetitions(size)):
            out.extend(svm_cell(plan, system, size, rep, cfg))
    return out


def run_filter_arm(plan: ExperimentPlan, system: SystemConfig, method: str, cfg: FilterConfig = FilterConfig()) -> list[RmseRecord]:
    out = []
    for rep in range(plan.n_filter_repetitions):
        out.extend(filter_cell(plan, system, method, rep, cfg))
    return out


# -- parameter convergence ---------------------------------------------------


def perturbed_prior(truth, level: int, rng: np.random.Generator) -> np.ndarray:
    """``truth + level * (s1*2, s2*1, s3*3)`` on (sigma, b, r) with fair random signs."""
    signs = rng.choice(np.array([-1.0, 1.0]), size=3)
    return np.asarray(truth, dtype=float) + level * signs * PERTURBATION


def param_convergence_experiment(
    study: ParamConvergencePlan = ParamConvergencePlan(),
    seed: int = 0,
    cfg: FilterConfig = FilterConfig(),
    dt: float = 0.01,
    system: SystemConfig | None = None,
) -> list[ParamConvergenceRecord]:
    """Dual-filter runs from perturbed parameter priors.

    Repetition ``k`` uses the same observation series at every level, so the
    levels differ only in the starting point. ``mse`` at step ``t`` is the
    mean over (sigma, b, r) of the squared error of the parameter estimate
    after ``t`` observations beyond the first; it is NaN once a run diverges.
    """
    system = build_system(study.system) if system is None else system
    truth = system.params.as_array()
    R, T = study.repetitions, study.n_steps
    windows = np.empty((R, T, 3))
    for k in range(R):
        rng = np.random.default_rng(cell_seed(seed, system.id, 0, k, STREAM_PARAM))
        traj = attractor_trajectory(system.params, dt, T - 1, rng, system.stoch_noise)
        windows[k] = observe(traj, system.obs_noise, rng).observations
    out = []
    for level in study.levels:
        priors = np.empty((R, 3))
        for k in range(R):
            rng = np.random.default_rng(cell_seed(seed, system.id, level, k, STREAM_PARAM))
            priors[k] = perturbed_prior(truth, level, rng)
        frng = np.random.default_rng(cell_seed(seed, system.id, level, R, STREAM_PARAM))
        run = assimilate(windows, study.method, cfg, dt, frng, record_trace=True, theta_prior=priors)
        mse = np.mean((run.trace["theta"] - truth) ** 2, axis=-1)  # (R, T)
        mse = np.where(run.trace["failed"], np.nan, mse)
        for k in range(R):
            out.extend(ParamConvergenceRecord(level, k, t, float(mse[k, t])) for t in range(T))
    return out


@dataclass(frozen=True)
class ConvergenceSummary:
    level: int
    initial_mse: float
    final_mse: float
    n_repetitions: int
    n_not_converged: int  # final > initial / 2 or diverged


def summarize_convergence(records: list[ParamConvergenceRecord]) -> list[ConvergenceSummary]:
    """Per level: mean initial and final MSE over repetitions, and the count that failed to halve."""
    by_level: dict[int, dict[int, list[tuple[int, float]]]] = {}
    for r in records:
        by_level.setdefault(r.level, {}).setdefault(r.repetition, []).append((r.t, r.mse))
    out = []
    for level in sorted(by_level):
        first, last = [], []
        for series in by_level[level].values():
            series.sort()
            first.append(series[0][1])
            last.append(series[-1][1])
        first, last = np.array(first), np.array(last)
        stuck = int(np.sum(~np.isfinite(last) | (last > first / 2)))
        out.append(ConvergenceSummary(level, float(np.mean(first)), float(np.nanmean(last)) if np.isfinite(last).any() else math.nan, len(first), stuck))
    return out
