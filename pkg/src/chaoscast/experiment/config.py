"""Experiment plan, configuration file ingestion and seed derivation."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from os import PathLike
from typing import Any, Mapping

import numpy as np

from ..dynamics import DEFAULT_DT
from ..filtering import FilterConfig
from ..svm import SvmConfig
from .systems import SYSTEM_IDS, SystemConfig, builtin_systems

METHODS = ("svm", "ukf_gaussian", "pf_laplace")
FILTER_METHODS = ("ukf_gaussian", "pf_laplace")

# historical size -> repetitions
TABLE1_REPETITIONS = ((500, 100), (1000, 100), (2000, 10), (4000, 10), (8000, 5), (16000, 5))

# seed streams within a (system, size, repetition) cell
STREAM_TEST = 0
STREAM_HISTORY = 1
STREAM_FILTER = {"ukf_gaussian": 2, "pf_laplace": 3}
STREAM_PARAM = 4


def _sorted_positive(name, values):
    v = tuple(int(x) for x in values)
    if not v:
        raise ValueError(f"{name} must be non-empty")
    if any(x <= 0 for x in v):
        raise ValueError(f"{name} must be positive, got {v}")
    if list(v) != sorted(set(v)):
        raise ValueError(f"{name} must be strictly ascending, got {v}")
    return v


@dataclass(frozen=True)
class ExperimentPlan:
    """Which cells to run and at what scale.

    ``size_repetitions`` lists (historical size, repetitions) pairs. The desk
    caps ``max_historical_size``, ``max_n_test`` and ``max_repetitions``
    trim the grid without changing the defaults it was drawn from; set a cap
    to None to lift it.
    """

    systems: tuple[str, ...] = SYSTEM_IDS
    methods: tuple[str, ...] = METHODS
    size_repetitions: tuple[tuple[int, int], ...] = TABLE1_REPETITIONS
    T_p: tuple[int, ...] = (5, 10, 20, 50, 100, 1000)
    T_f: tuple[int, ...] = (1, 5, 10, 20, 30, 40, 50)
    n_test: int = 1000
    seed: int = 0
    dt: float = DEFAULT_DT
    max_historical_size: int | None = 2000
    max_n_test: int | None = 100
    max_repetitions: int | None = 2
    filter_repetitions: int | None = None
    test_length: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "systems", tuple(self.systems))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.systems:
            raise ValueError("systems must be non-empty")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        pairs = tuple((int(s), int(r)) for s, r in self.size_repetitions)
        _sorted_positive("historical sizes", [s for s, _ in pairs])
        if any(r <= 0 for _, r in pairs):
            raise ValueError("repetition counts must be positive")
        object.__setattr__(self, "size_repetitions", pairs)
        object.__setattr__(self, "T_p", _sorted_positive("T_p", self.T_p))
        object.__setattr__(self, "T_f", _sorted_positive("T_f", self.T_f))
        if self.n_test <= 0 or not self.dt > 0:
            raise ValueError("n_test and dt must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not self.historical_sizes:
            raise ValueError("max_historical_size excludes every historical size")
        for cap in ("max_historical_size", "max_n_test", "max_repetitions", "filter_repetitions"):
            v = getattr(self, cap)
            if v is not None and v <= 0:
                raise ValueError(f"{cap} must be positive or None")
        if self.test_length is not None and self.test_length < self.min_test_length:
            raise ValueError(f"test_length must be at least {self.min_test_length}")

    @property
    def historical_sizes(self) -> tuple[int, ...]:
        cap = self.max_historical_size
        return tuple(s for s, _ in self.size_repetitions if cap is None or s <= cap)

    def repetitions(self, size: int) -> int:
        r = dict(self.size_repetitions)[size]
        return r if self.max_repetitions is None else min(r, self.max_repetitions)

    @property
    def n_filter_repetitions(self) -> int:
        if self.filter_repetitions is not None:
            return self.filter_repetitions
        return max(self.repetitions(s) for s in self.historical_sizes)

    @property
    def n_test_effective(self) -> int:
        return self.n_test if self.max_n_test is None else min(self.n_test, self.max_n_test)

    @property
    def min_test_length(self) -> int:
        return max(self.T_p) + max(self.T_f) + self.n_test_effective - 1

    @property
    def test_length_effective(self) -> int:
        """States in each test trajectory; by default ten admissible positions per test index."""
        if self.test_length is not None:
            return self.test_length
        return max(self.T_p) + max(self.T_f) - 1 + 10 * self.n_test_effective

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["size_repetitions"] = [list(p) for p in self.size_repetitions]
        for k in ("systems", "methods", "T_p", "T_f"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentPlan":
        d = dict(d)
        _check_keys("plan", d, {f.name for f in fields(cls)})
        if "size_repetitions" in d and isinstance(d["size_repetitions"], Mapping):
            d["size_repetitions"] = tuple(sorted((int(k), int(v)) for k, v in d["size_repetitions"].items()))
        for k in ("systems", "methods", "T_p", "T_f", "size_repetitions"):
            if k in d:
                d[k] = tuple(tuple(x) if isinstance(x, list) else x for x in d[k])
        return cls(**d)


@dataclass(frozen=True)
class ParamConvergencePlan:
    """Perturbed-prior study on DS1: levels scale the (+-2, +-1, +-3) offsets on (sigma, b, r)."""

    levels: tuple[int, ...] = (1, 2, 3, 4, 5)
    repetitions: int = 20
    n_steps: int = 1000
    method: str = "ukf_gaussian"
    system: str = "DS1"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(x) for x in self.levels))
        if not self.levels or any(x < 0 for x in self.levels):
            raise ValueError("levels must be non-empty and nonnegative")
        if self.repetitions <= 0 or self.n_steps <= 0:
            raise ValueError("repetitions and n_steps must be positive")
        if self.method not in FILTER_METHODS:
            raise ValueError(f"method must be one of {FILTER_METHODS}")

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d):
        _check_keys("param_convergence", d, {f.name for f in fields(cls)})
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    systems: dict[str, SystemConfig] = field(default_factory=builtin_systems)
    filter: FilterConfig = field(default_factory=FilterConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    param_convergence: ParamConvergencePlan = field(default_factory=ParamConvergencePlan)

    def system(self, system_id: str) -> SystemConfig:
        try:
            return self.systems[system_id]
        except KeyError:
            raise ValueError(f"unknown system {system_id!r}; configured: {sorted(self.systems)}") from None

    def with_plan(self, **changes) -> "ExperimentConfig":
        return replace(self, plan=replace(self.plan, **changes))

    def to_dict(self) -> dict[str, Any]:
        return {
            "plan": self.plan.to_dict(),
            "systems": {k: v.to_dict() for k, v in sorted(self.systems.items())},
            "filter": self.filter.to_dict(),
            "svm": asdict(self.svm),
            "param_convergence": self.param_convergence.to_dict(),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(section, d, allowed):
    extra = set(d) - set(allowed)
    if extra:
        raise ValueError(f"unknown keys in {section}: {sorted(extra)}")


def config_from_dict(doc: Mapping[str, Any]) -> ExperimentConfig:
    """Overlay a (possibly partial) config record on the defaults."""
    _check_keys("config", doc, {"plan", "systems", "filter", "svm", "param_convergence"})
    systems = builtin_systems()
    for sid, rec in (doc.get("systems") or {}).items():
        rec = dict(rec)
        rec.setdefault("id", sid)
        if rec["id"] != sid:
            raise ValueError(f"system record keyed {sid!r} has id {rec['id']!r}")
        systems[sid] = SystemConfig.from_dict(rec, systems.get(sid))
    filt = doc.get("filter") or {}
    _check_keys("filter", filt, {f.name for f in fields(FilterConfig)})
    filt = {k: tuple(v) if isinstance(v, list) else v for k, v in filt.items()}
    svm = doc.get("svm") or {}
    _check_keys("svm", svm, {f.name for f in fields(SvmConfig)})
    plan = ExperimentPlan.from_dict(doc.get("plan") or {})
    missing = set(plan.systems) - set(systems)
    if missing:
        raise ValueError(f"plan names unconfigured systems: {sorted(missing)}")
    return ExperimentConfig(
        plan,
        systems,
        FilterConfig(**filt),
        SvmConfig(**svm),
        ParamConvergencePlan.from_dict(doc.get("param_convergence") or {}),
    )


def load_config(path: str | PathLike | None) -> ExperimentConfig:
    """Read a JSON config file; None gives the defaults."""
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def system_key(system_id: str) -> int:
    return zlib.crc32(system_id.encode())


def cell_seed(master: int, system_id: str, size: int, repetition: int, stream: int) -> np.random.SeedSequence:
    """Seed of one cell, a pure function of (master seed, system, size, repetition, stream).

    Filter arms and test data use ``size = 0``.
    """
    return np.random.SeedSequence(int(master), spawn_key=(system_key(system_id), int(size), int(repetition), int(stream)))


def seed_record(ss: np.random.SeedSequence) -> dict[str, Any]:
    return {"entropy": int(ss.entropy), "spawn_key": [int(k) for k in ss.spawn_key]}
