"""Acceptance criteria, one test each.

Every test prints a PASS/FAIL line (collected again in the terminal summary)
before asserting, so the full list is visible even when some fail.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from acceptance_log import report
from chaoscast.dynamics import LorenzParams, attractor_trajectory, rk4_step
from chaoscast.experiment import (
    SYSTEM_IDS,
    ExperimentPlan,
    ParamConvergencePlan,
    build_system,
    filter_cell,
    param_convergence_experiment,
    summarize_convergence,
    svm_cell,
    svm_predictions,
)
from chaoscast.filtering import StateSpaceModel, UkfState, kalman_step, pf_init, pf_step, ukf_step
from chaoscast.noise import Gaussian, Laplace, Mixture, SignedExponential, Uniform
from chaoscast.svm import cv_grid, kernel_matrix, ls_svm_objective, solve_ls_svm

pytestmark = pytest.mark.acceptance

A = 0.99 * np.array([[math.cos(0.1), -math.sin(0.1)], [math.sin(0.1), math.cos(0.1)]])
Q = 0.01 * np.eye(2)
R = 0.25 * np.eye(2)
LINEAR = StateSpaceModel(lambda z, th: z @ A.T, Gaussian(0.0, 0.1), Gaussian(0.0, 0.5))


def simulate_linear(steps, seed):
    rng = np.random.default_rng(seed)
    z = np.array([1.0, -1.0])
    xs = []
    for _ in range(steps):
        z = A @ z + rng.normal(0, 0.1, 2)
        xs.append(z + rng.normal(0, 0.5, 2))
    return np.array(xs)


def test_criterion_01_ukf_equals_kalman():
    t0 = time.perf_counter()
    xs = simulate_linear(100, 1)
    state = UkfState(np.zeros(2), 2.0 * np.eye(2))
    m, P = np.zeros(2), 2.0 * np.eye(2)
    worst = 0.0
    for x in xs:
        state = ukf_step(state, x, LINEAR)
        m, P = kalman_step(m, P, x, A, np.eye(2), Q, R)
        worst = max(worst, np.abs(state.mean - m).max(), np.abs(state.cov - P).max())
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 1.0
    report(1, "UKF vs Kalman", ok, f"max deviation {worst:.2e} over 100 steps (tol 1e-8), {dt:.2f}s")
    assert ok


def _pf_errors(n, replicates, xs, seed):
    rng = np.random.default_rng(seed)
    ens = pf_init(np.zeros((replicates, 2)), 2.0 * np.eye(2), n, rng)
    m, P = np.zeros(2), 2.0 * np.eye(2)
    errs = []
    for x in xs:
        ens = pf_step(ens, np.broadcast_to(x, (replicates, 2)), LINEAR, "prior", rng)
        m, P = kalman_step(m, P, x, A, np.eye(2), Q, R)
        errs.append(ens.mean() - m)
    return np.array(errs)


def test_criterion_02_pf_converges_to_kalman():
    t0 = time.perf_counter()
    xs = simulate_linear(50, 2)
    # one filter run checked against the Monte Carlo standard error of a single
    # run, estimated from the spread of independent replicate runs
    errs = _pf_errors(10_000, 40, xs, 3)
    se = errs[:, 1:].std(axis=1, ddof=1)
    z = np.abs(errs[:, 0]) / se
    frac = float(np.mean(z <= 3.0))
    # diagnostics: exceedance rate pooled over every replicate, and the bias of the replicate average
    pooled = float(np.mean(np.abs(errs) > 3 * errs.std(axis=1, ddof=1, keepdims=True)))
    bias_z = float(np.sqrt(np.mean((errs.mean(axis=1) / (errs.std(axis=1, ddof=1) / math.sqrt(errs.shape[1]))) ** 2)))
    ns = np.array([100, 1000, 10_000])
    rmse = [np.sqrt(np.mean(_pf_errors(int(n), 20, xs, 4) ** 2)) for n in ns]
    slope = float(np.polyfit(np.log(ns), np.log(rmse), 1)[0])
    dt = time.perf_counter() - t0
    ok = frac == 1.0 and -0.65 <= slope <= -0.35 and dt < 30
    report(
        2,
        "PF vs Kalman",
        ok,
        f"single run: {frac:.0%} of step/coordinate means within 3 MC SE (max {z.max():.2f} SE); "
        f"pooled exceedance {pooled:.2%} (normal 0.27%), rms bias z {bias_z:.2f}; error slope {slope:.3f}, {dt:.1f}s",
    )
    assert ok


def test_criterion_03_ls_svm_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    improved = 0
    worst_resid = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 101))
        X = rng.uniform(-1, 1, size=(n, int(rng.integers(1, 7))))
        K = kernel_matrix(X, float(rng.uniform(0.2, 3.0)))
        y = rng.normal(size=n)
        lam = float(10 ** rng.uniform(-5, 0))
        alpha = solve_ls_svm(K, y, lam)
        worst_resid = max(worst_resid, np.linalg.norm((K + n * lam * np.eye(n)) @ alpha - y) / np.linalg.norm(y))
        base = ls_svm_objective(alpha, K, y, lam)
        for _ in range(100):
            delta = rng.normal(size=n)
            delta *= 1e-3 / np.linalg.norm(delta)
            improved += ls_svm_objective(alpha + delta, K, y, lam) < base - 1e-12
    dt = time.perf_counter() - t0
    ok = improved == 0 and worst_resid <= 1e-8 and dt < 5
    report(3, "LS-SVM optimality", ok, f"{improved}/2000 perturbations improved, max relative residual {worst_resid:.1e}, {dt:.2f}s")
    assert ok


def test_criterion_04_grid_values():
    t0 = time.perf_counter()
    g = cv_grid(1000, 5)
    lam_ok = abs(g.lambda_grid[0] / 1.77778e-5 - 1) <= 1e-3
    sig_ok = abs(g.sigma_grid[-1] / 3.1097 - 1) <= 1e-3
    geo = all(len(a) == 10 and np.ptp(a[1:] / a[:-1]) <= 1e-12 for a in (g.lambda_grid, g.sigma_grid))
    dt = time.perf_counter() - t0
    ok = lam_ok and sig_ok and geo and dt < 1
    report(4, "CV grid", ok, f"lambda_min {g.lambda_grid[0]:.6g}, sigma_max {g.sigma_grid[-1]:.5g}, geometric 10-point: {geo}")
    assert ok


def test_criterion_05_rk4_order():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    p = LorenzParams()
    traj = attractor_trajectory(p, 0.01, 5000, rng)
    states = traj.states[rng.choice(5001, 100, replace=False)]

    def sub(s, h, k):
        for _ in range(k):
            s = rk4_step(s, p, h / k)
        return s

    ref = sub(states, 0.01, 16)
    ratio = float(np.mean(np.linalg.norm(rk4_step(states, p, 0.01) - ref, axis=1) / np.linalg.norm(sub(states, 0.01, 2) - ref, axis=1)))
    dt = time.perf_counter() - t0
    ok = 12 <= ratio <= 20 and dt < 1
    report(5, "RK4 order", ok, f"mean step-halving error ratio {ratio:.2f} (want [12, 20]), {dt:.2f}s")
    assert ok


def test_criterion_06_ds1_ordering():
    t0 = time.perf_counter()
    system = build_system("DS1")
    wins, lines = 0, []
    for seed in range(5):
        plan = ExperimentPlan(systems=("DS1",), size_repetitions=((1000, 1),), T_p=(100,), T_f=(50,), n_test=100, seed=seed)
        svm = svm_cell(plan, system, 1000, 0)[0].rmse
        ukf = filter_cell(plan, system, "ukf_gaussian", 0)[0].rmse
        pf = filter_cell(plan, system, "pf_laplace", 0)[0].rmse
        wins += ukf < pf < svm
        lines.append(f"seed {seed}: ukf {ukf:.3f} pf {pf:.3f} svm {svm:.3f}")
    dt = time.perf_counter() - t0
    ok = wins >= 4 and dt < 600
    report(6, "DS1 ukf < pf < svm", ok, f"{wins}/5 seeds [{'; '.join(lines)}], {dt:.0f}s")
    assert ok


def test_criterion_07_ds2_pf_not_worse_than_ukf():
    t0 = time.perf_counter()
    system = build_system("DS2")
    wins, lines = 0, []
    for seed in range(5):
        plan = ExperimentPlan(systems=("DS2",), size_repetitions=((1000, 1),), T_p=(1000,), T_f=(10,), n_test=100, seed=seed)
        ukf = filter_cell(plan, system, "ukf_gaussian", 0)[0]
        pf = filter_cell(plan, system, "pf_laplace", 0)[0]
        wins += pf.rmse <= ukf.rmse
        lines.append(f"seed {seed}: ukf {ukf.rmse:.3f} pf {pf.rmse:.3f} (failures {ukf.n_failures}/{pf.n_failures})")
    dt = time.perf_counter() - t0
    ok = wins >= 4 and dt < 900
    report(7, "DS2 pf <= ukf", ok, f"{wins}/5 seeds [{'; '.join(lines)}], {dt:.0f}s")
    assert ok


def test_criterion_08_svm_plateau():
    t0 = time.perf_counter()
    plan = ExperimentPlan(systems=("DS1",), size_repetitions=((500, 1),), T_p=(50, 100, 1000), T_f=(10,), n_test=100, seed=8)
    _, preds = svm_predictions(plan, build_system("DS1"), 500, 0)
    same = np.array_equal(preds[50, 10], preds[100, 10]) and np.array_equal(preds[50, 10], preds[1000, 10])
    dt = time.perf_counter() - t0
    ok = bool(same) and dt < 300
    report(8, "SVM plateau", ok, f"predictions identical across T_p 50/100/1000: {same}, {dt:.0f}s")
    assert ok


def test_criterion_09_parameter_convergence():
    t0 = time.perf_counter()
    records = param_convergence_experiment(ParamConvergencePlan(levels=(1, 2, 3, 4, 5), repetitions=20, n_steps=1000), seed=9)
    summary = {s.level: s for s in summarize_convergence(records)}
    s1 = summary[1]
    part_a = s1.final_mse < s1.initial_mse / 10
    part_b = any(summary[L].n_not_converged >= 1 for L in (3, 4, 5))
    dt = time.perf_counter() - t0
    ok = part_a and part_b and dt < 1200
    levels = "; ".join(f"L{s.level}: {s.initial_mse:.3g} -> {s.final_mse:.3g}, {s.n_not_converged}/20 not converged" for s in summary.values())
    report(9, "parameter convergence", ok, f"(a) level-1 final < initial/10: {part_a}; (b) a level>=3 rep fails: {part_b} [{levels}], {dt:.0f}s")
    assert ok


def _normalised(spec):
    lo, hi = spec.support()
    brk = []
    for c in getattr(spec, "components", (spec,)):
        if isinstance(c, Uniform):
            brk += [c.a, c.b]
        if isinstance(c, SignedExponential):
            brk.append(0.0)
    grid = np.unique(np.concatenate([np.linspace(lo, hi, 400_001), brk]))
    return abs(np.trapezoid(np.exp(spec.log_density(grid)), grid) - 1.0) <= 1e-4


def _moments_ok(spec, rng, n=100_000):
    x = spec.sample(rng, n)
    m, v = x.mean(), x.var(ddof=1)
    se_v = math.sqrt(max(np.mean((x - m) ** 4) - v**2, 0.0) / n)
    return abs(m - spec.expectation()) <= 3 * math.sqrt(spec.variance() / n) and abs(v - spec.variance()) <= 3 * se_v


def test_criterion_10_noise_distributions():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    specs = []
    for sid in SYSTEM_IDS:
        s = build_system(sid)
        specs += [(f"{sid} obs", s.obs_noise)] + ([(f"{sid} stoch", s.stoch_noise)] if s.stoch_noise else [])
    bad = [name for name, spec in specs if not (_normalised(spec) and _moments_ok(spec, rng))]
    ds6 = build_system("DS6").obs_noise
    p = stats.ks_2samp(ds6.sample(rng, 100_000), Laplace(0.0, 0.25).sample(rng, 100_000)).pvalue
    dt = time.perf_counter() - t0
    ok = not bad and p > 0.01 and dt < 30
    report(10, "noise distributions", ok, f"{len(specs) - len(bad)}/{len(specs)} specs pass, DS6 vs Laplace KS p={p:.3f}, {dt:.1f}s")
    assert ok


# scaled-down grid so two full CLI runs fit the time budget
DETERMINISM_CONFIG = {
    "plan": {
        "size_repetitions": [[500, 1]],
        "T_p": [5, 20, 100],
        "T_f": [1, 10, 50],
        "n_test": 50,
        "max_repetitions": 1,
    }
}


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "desk.json"
    cfg.write_text(json.dumps(DETERMINISM_CONFIG))
    outs = []
    for k, jobs in enumerate((1, 2)):
        out = tmp_path / f"run{k}"
        cmd = [sys.executable, "-m", "chaoscast", "experiment", "--seed", "42", "--system", "DS3", "--config", str(cfg), "--out", str(out), "--jobs", str(jobs)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append(out)
    names = ("results.csv", "failures.csv", "aggregate.csv", "manifest.json")
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    n_rows = len((outs[0] / "results.csv").read_text().splitlines()) - 1
    dt = time.perf_counter() - t0
    ok = same and n_rows > 0 and dt < 600
    report(11, "determinism", ok, f"two runs (1 and 2 workers) byte-identical: {same}, {n_rows} result rows, {dt:.0f}s")
    assert ok
