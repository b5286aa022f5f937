"""CSV and manifest emission.

Floats are written with ``repr`` (shortest round-trip form), rows in a fixed
sort order and the manifest carries no timestamps, so one (config, seed)
pair always yields byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from collections import defaultdict
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Iterable

from .config import METHODS, ExperimentConfig, cell_seed, seed_record, STREAM_FILTER, STREAM_HISTORY, STREAM_TEST
from .runner import ParamConvergenceRecord, RmseRecord

RESULT_FIELDS = ("system", "method", "historical_size", "T_p", "T_f", "repetition", "rmse", "n_failures")
FAILURE_FIELDS = ("system", "method", "historical_size", "T_p", "T_f", "repetition", "n_failures")
AGGREGATE_FIELDS = ("system", "method", "historical_size", "T_p", "T_f", "n_repetitions", "mean_rmse", "n_failures")
PARAM_FIELDS = ("level", "repetition", "t", "mse")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@dataclass(frozen=True)
class AggregateRow:
    system: str
    method: str
    historical_size: int | None
    T_p: int
    T_f: int
    n_repetitions: int
    mean_rmse: float
    n_failures: int


def aggregate(records: Iterable[RmseRecord]) -> list[AggregateRow]:
    """Mean RMSE per (system, method, size, T_p, T_f) over repetitions with a finite RMSE."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.system, r.method, r.historical_size, r.T_p, r.T_f)].append(r)
    rows = []
    for key, recs in groups.items():
        good = [r.rmse for r in recs if math.isfinite(r.rmse)]
        fails = sum(r.n_failures for r in recs)
        if good:
            rows.append(AggregateRow(*key, len(good), sum(good) / len(good), fails))
    rows.sort(key=lambda a: (a.system, METHODS.index(a.method), a.historical_size or 0, a.T_p, a.T_f))
    return rows


def write_results(records: list[RmseRecord], path: str | PathLike) -> None:
    """Results CSV: one row per record with a finite RMSE."""
    _write(
        Path(path),
        RESULT_FIELDS,
        ([getattr(r, f) for f in RESULT_FIELDS] for r in records if math.isfinite(r.rmse)),
    )


def write_failures(records: list[RmseRecord], path: str | PathLike) -> None:
    """Cells with no usable forecast (every window diverged)."""
    _write(
        Path(path),
        FAILURE_FIELDS,
        ([getattr(r, f) for f in FAILURE_FIELDS] for r in records if not math.isfinite(r.rmse)),
    )


def write_aggregate(records: list[RmseRecord], path: str | PathLike) -> None:
    _write(Path(path), AGGREGATE_FIELDS, ([getattr(a, f) for f in AGGREGATE_FIELDS] for a in aggregate(records)))


def write_param_convergence(records: list[ParamConvergenceRecord], path: str | PathLike) -> None:
    _write(Path(path), PARAM_FIELDS, ((r.level, r.repetition, r.t, r.mse) for r in records))


def read_results(path: str | PathLike) -> list[RmseRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            size = row["historical_size"]
            out.append(
                RmseRecord(
                    row["system"],
                    row["method"],
                    int(size) if size else None,
                    int(row["T_p"]),
                    int(row["T_f"]),
                    int(row["repetition"]),
                    float(row["rmse"]),
                    int(row["n_failures"]),
                )
            )
    return out


def cell_seeds(config: ExperimentConfig, cells) -> list[dict]:
    """Seed provenance of every cell, in cell order."""
    plan = config.plan
    out = []
    for sid, method, size, rep in cells:
        entry = {"system": sid, "method": method, "historical_size": size, "repetition": rep}
        entry["test_data"] = seed_record(cell_seed(plan.seed, sid, 0, rep, STREAM_TEST))
        if method == "svm":
            entry["history"] = seed_record(cell_seed(plan.seed, sid, size, rep, STREAM_HISTORY))
        else:
            entry["filter"] = seed_record(cell_seed(plan.seed, sid, 0, rep, STREAM_FILTER[method]))
        out.append(entry)
    return out


def versions() -> dict[str, str]:
    import numba
    import numpy
    import scipy

    from .. import __version__

    return {
        "chaoscast": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_manifest(path: str | PathLike, config: ExperimentConfig, cells=None, extra: dict | None = None) -> None:
    doc = {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "master_seed": config.plan.seed,
        "versions": versions(),
    }
    if cells is not None:
        doc["cells"] = cell_seeds(config, cells)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_results(records: list[RmseRecord], out_dir: str | PathLike, config: ExperimentConfig, cells=None) -> dict[str, Path]:
    """Write ``results.csv``, ``failures.csv``, ``aggregate.csv`` and ``manifest.json``."""
    if not records:
        raise ValueError("no records to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.csv",
        "failures": out / "failures.csv",
        "aggregate": out / "aggregate.csv",
        "manifest": out / "manifest.json",
    }
    write_results(records, paths["results"])
    write_failures(records, paths["failures"])
    write_aggregate(records, paths["aggregate"])
    write_manifest(paths["manifest"], config, cells)
    return paths
