"""Command-line entry point: ``chaoscast <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dynamics import attractor_trajectory, observe, write_trajectory_csv
from .experiment import (
    FILTER_METHODS,
    METHODS,
    aggregate,
    compute_rmse,
    emit_results,
    load_config,
    make_history,
    make_test_block,
    param_convergence_experiment,
    plan_cells,
    read_results,
    run_experiment,
    summarize_convergence,
    write_aggregate,
    write_param_convergence,
)
from .experiment.config import STREAM_FILTER, STREAM_TEST, cell_seed
from .experiment.output import write_manifest
from .filtering import assimilate
from .svm import predict_at, save_model, select_embedding, train_final

METHOD_ALIASES = {"svm": "svm", "ukf": "ukf_gaussian", "pf": "pf_laplace"}
METHOD_ALIASES.update({m: m for m in METHODS})


def _method(name: str) -> str:
    try:
        return METHOD_ALIASES[name]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown method {name!r}; use svm, ukf or pf") from None


def _common(p: argparse.ArgumentParser, multi: bool = False) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply to anything it omits)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    if multi:
        p.add_argument("--system", action="append", help="restrict to this system; repeatable")
        p.add_argument("--method", action="append", type=_method, help="restrict to svm, ukf or pf; repeatable")
    else:
        p.add_argument("--system", default="DS1", help="system id (default DS1)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_plan(seed=args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _config(args)
    system = cfg.system(args.system)
    rng = np.random.default_rng(cell_seed(cfg.plan.seed, system.id, 0, 0, STREAM_TEST))
    traj = attractor_trajectory(system.params, cfg.plan.dt, args.steps - 1, rng, system.stoch_noise, burn_in=args.burn_in)
    obs = observe(traj, system.obs_noise, rng)
    path = _outdir(args) / f"{system.id}_trajectory.csv"
    write_trajectory_csv(path, traj, obs)
    print(f"wrote {args.steps} states to {path}")
    return 0


def cmd_svm(args) -> int:
    cfg = _config(args)
    plan, system = cfg.plan, cfg.system(args.system)
    hist = make_history(plan, system, args.size, args.repetition)
    cap = min(args.T_p, cfg.svm.max_embedding)
    sel = select_embedding(hist, args.T_f, cap, cfg.svm)
    hp = sel.hyperparams
    model = train_final(hist, hp.M, hp.lam, hp.sigma, args.T_f, cfg.svm.retrain_factor)
    out = _outdir(args)
    save_model(out / "model.json", model)
    block = make_test_block(plan, system, args.repetition)
    pred = predict_at(model, block.observations, block.indices)
    truth = block.truth(args.T_f)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "pred_x", "pred_y", "pred_z", "true_x", "true_y", "true_z"])
        for i, p, t in zip(block.indices, pred, truth):
            w.writerow([int(i), *map(repr, map(float, p)), *map(repr, map(float, t))])
    print(f"M*={hp.M} lambda*={hp.lam:.6g} sigma*={hp.sigma:.6g} cv_error={sel.cv_error:.6g}")
    print(f"test RMSE over {len(block.indices)} indices: {compute_rmse(pred, truth):.6g}")
    return 0


def cmd_filter(args) -> int:
    cfg = _config(args)
    plan, system = cfg.plan, cfg.system(args.system)
    method = args.method
    if method not in FILTER_METHODS:
        raise SystemExit(f"filter needs --method ukf or pf, got {method}")
    rng = np.random.default_rng(cell_seed(plan.seed, system.id, 0, 0, STREAM_TEST))
    traj = attractor_trajectory(system.params, plan.dt, args.T_p - 1, rng, system.stoch_noise)
    obs = observe(traj, system.obs_noise, rng)
    frng = np.random.default_rng(cell_seed(plan.seed, system.id, 0, 0, STREAM_FILTER[method]))
    known = system.params if system.known else None
    run = assimilate(obs.observations[None], method, cfg.filter, plan.dt, frng, known_params=known, record_trace=True)
    tr = run.trace
    path = _outdir(args) / f"{system.id}_{method}_trace.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_x", "mean_y", "mean_z", "param_sigma", "param_b", "param_r", "ess"])
        for t in range(tr["mean"].shape[1]):
            m = [repr(float(v)) for v in tr["mean"][0, t]]
            th = ["", "", ""] if known is not None else [repr(float(v)) for v in tr["theta"][0, t]]
            ess = tr["ess"][0, t]
            w.writerow([t, *m, *th, "" if np.isnan(ess) else repr(float(ess))])
    err = compute_rmse(tr["mean"][0], traj.states)
    print(f"wrote {path}; filtered-state RMSE {err:.6g}; final theta {np.round(run.theta[0], 4).tolist()}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    changes = {}
    if args.system:
        changes["systems"] = tuple(args.system)
    if args.method:
        changes["methods"] = tuple(m for m in METHODS if m in set(args.method))
    if changes:
        cfg = cfg.with_plan(**changes)
    cells = plan_cells(cfg)
    records = run_experiment(cfg, jobs=args.jobs, cells=cells)
    paths = emit_results(records, _outdir(args), cfg, cells)
    n_fail = sum(r.n_failures for r in records)
    print(f"{len(records)} records from {len(cells)} cells; {n_fail} diverged filter runs; results in {paths['results']}")
    return 0


def _finite_or_none(d: dict) -> dict:
    # strict JSON has no NaN; diverged runs report null
    return {k: None if isinstance(v, float) and not np.isfinite(v) else v for k, v in d.items()}


def cmd_param_convergence(args) -> int:
    cfg = _config(args)
    study = cfg.param_convergence
    if args.method:
        study = replace(study, method=args.method)
    records = param_convergence_experiment(study, cfg.plan.seed, cfg.filter, cfg.plan.dt, cfg.system(study.system))
    out = _outdir(args)
    write_param_convergence(records, out / "param_convergence.csv")
    summary = summarize_convergence(records)
    write_manifest(out / "manifest.json", cfg, extra={"param_convergence_summary": [_finite_or_none(s.__dict__) for s in summary]})
    print("level  initial_mse  final_mse  not_converged/reps")
    for s in summary:
        print(f"{s.level:5d}  {s.initial_mse:11.4g}  {s.final_mse:9.4g}  {s.n_not_converged}/{s.n_repetitions}")
    return 0


def cmd_report(args) -> int:
    src = Path(args.results) if args.results else Path(args.out) / "results.csv"
    records = read_results(src)
    dest = Path(args.out) / "aggregate.csv"
    write_aggregate(records, dest)
    rows = aggregate(records)
    print(f"{'system':6s} {'method':12s} {'size':>6s} {'T_p':>5s} {'T_f':>4s} {'reps':>4s} {'mean_rmse':>10s} {'fail':>5s}")
    for a in rows:
        size = "" if a.historical_size is None else str(a.historical_size)
        print(f"{a.system:6s} {a.method:12s} {size:>6s} {a.T_p:5d} {a.T_f:4d} {a.n_repetitions:4d} {a.mean_rmse:10.4g} {a.n_failures:5d}")
    print(f"wrote {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaoscast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a trajectory and its noisy observations")
    _common(p)
    p.add_argument("--steps", type=int, default=10000, help="number of states to keep (default 10000)")
    p.add_argument("--burn-in", type=int, default=1000)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("svm", help="train one LS-SVM forecaster and score it on a test block")
    _common(p)
    p.add_argument("--method", type=_method, default="svm", help=argparse.SUPPRESS)
    p.add_argument("--size", type=int, default=1000, help="historical series length (default 1000)")
    p.add_argument("--T-f", dest="T_f", type=int, default=1, help="forecast horizon (default 1)")
    p.add_argument("--T-p", dest="T_p", type=int, default=1000, help="prediction window; caps M (default 1000)")
    p.add_argument("--repetition", type=int, default=0)
    p.set_defaults(func=cmd_svm)

    p = sub.add_parser("filter", help="run one filter over a simulated window and export its trace")
    _common(p)
    p.add_argument("--method", type=_method, default="ukf_gaussian", help="ukf or pf (default ukf)")
    p.add_argument("--T-p", dest="T_p", type=int, default=1000, help="number of observations (default 1000)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("experiment", help="run the forecasting grid and write result CSVs")
    _common(p, multi=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("param-convergence", help="parameter estimation from perturbed priors")
    _common(p)
    p.add_argument("--method", type=_method, help="state filter: ukf or pf (default from config)")
    p.set_defaults(func=cmd_param_convergence)

    p = sub.add_parser("report", help="aggregate a results CSV")
    _common(p)
    p.add_argument("--results", help="results CSV (default: <out>/results.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"chaoscast: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
