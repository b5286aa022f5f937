"""The six benchmark systems: true Lorenz parameters, noise laws and filter knowledge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from ..dynamics import LorenzParams
from ..noise import Gaussian, Mixture, NoiseSpec, SignedExponential, Uniform, noise_from_dict, noise_to_dict

ALL_KNOWN = "AllKnown"
ALL_UNKNOWN = "AllUnknown"
KNOWLEDGE = (ALL_KNOWN, ALL_UNKNOWN)
SYSTEM_IDS = ("DS1", "DS2", "DS3", "DS4", "DS5", "DS6")


@dataclass(frozen=True)
class SystemConfig:
    """A data-generating system and what the filters are told about it.

    Attributes
    ----------
    id : str
    params : LorenzParams
        True parameters.
    stoch_noise : NoiseSpec or None
        Per-step forcing of the state; None means a deterministic system.
    obs_noise : NoiseSpec
        Observation error.
    filter_knowledge : {"AllKnown", "AllUnknown"}
        With ``AllKnown`` the filters run with the true parameters;
        otherwise they estimate them jointly with the state.
    """

    id: str
    params: LorenzParams
    stoch_noise: NoiseSpec | None
    obs_noise: NoiseSpec
    filter_knowledge: str

    def __post_init__(self):
        if self.filter_knowledge not in KNOWLEDGE:
            raise ValueError(f"filter_knowledge must be one of {KNOWLEDGE}, got {self.filter_knowledge!r}")
        if self.obs_noise is None:
            raise ValueError("obs_noise is required")

    @property
    def known(self) -> bool:
        return self.filter_knowledge == ALL_KNOWN

    def to_dict(self) -> dict[str, Any]:
        p = self.params
        return {
            "id": self.id,
            "params": {"sigma": p.sigma, "b": p.b, "r": p.r},
            "stoch_noise": noise_to_dict(self.stoch_noise),
            "obs_noise": noise_to_dict(self.obs_noise),
            "filter_knowledge": self.filter_knowledge,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base: "SystemConfig | None" = None) -> "SystemConfig":
        """Build from a record; keys missing from ``d`` fall back to ``base``."""
        allowed = {"id", "params", "stoch_noise", "obs_noise", "filter_knowledge"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown system keys: {sorted(extra)}")
        if base is None and not allowed - {"stoch_noise"} <= set(d):
            raise ValueError(f"a new system needs {sorted(allowed - {'stoch_noise'})}")
        sid = d.get("id", base.id if base else None)
        if "params" in d:
            pd = dict(d["params"])
            bp = base.params if base else None
            params = LorenzParams(
                float(pd.pop("sigma", bp.sigma if bp else None)),
                float(pd.pop("b", bp.b if bp else None)),
                float(pd.pop("r", bp.r if bp else None)),
            )
            if pd:
                raise ValueError(f"unknown parameter keys: {sorted(pd)}")
        else:
            params = base.params
        stoch = noise_from_dict(d["stoch_noise"]) if "stoch_noise" in d else (base.stoch_noise if base else None)
        obs = noise_from_dict(d["obs_noise"]) if "obs_noise" in d else base.obs_noise
        knowledge = d.get("filter_knowledge", base.filter_knowledge if base else None)
        return cls(sid, params, stoch, obs, knowledge)


def _table() -> dict[str, SystemConfig]:
    se = 0.25  # exp(1) draws scaled by 1/4
    return {
        "DS1": SystemConfig("DS1", LorenzParams(10.0, 8.0 / 3.0, 28.0), None, Gaussian(0.0, 0.80), ALL_KNOWN),
        "DS2": SystemConfig("DS2", LorenzParams(8.13, 0.53, 35.23), None, Gaussian(0.0, 1.13), ALL_UNKNOWN),
        "DS3": SystemConfig("DS3", LorenzParams(12.18, 0.52, 13.14), None, Uniform(-0.5, 0.5), ALL_UNKNOWN),
        "DS4": SystemConfig(
            "DS4",
            LorenzParams(4.82, 0.63, 20.09),
            None,
            Mixture((0.5, 0.5), (Gaussian(0.1, 0.25), Gaussian(-0.1, 0.5))),
            ALL_UNKNOWN,
        ),
        "DS5": SystemConfig(
            "DS5",
            LorenzParams(3.34, 0.54, 23.49),
            None,
            Mixture((0.8, 0.2), (Gaussian(0.1, 0.25), Uniform(-0.1, 0.5))),
            ALL_UNKNOWN,
        ),
        "DS6": SystemConfig(
            "DS6",
            LorenzParams(9.57, 3.04, 27.32),
            Gaussian(0.0, 0.1),
            Mixture((0.5, 0.5), (SignedExponential(1.0, se, 1), SignedExponential(1.0, se, -1))),
            ALL_UNKNOWN,
        ),
    }


def build_system(system_id: str) -> SystemConfig:
    """One of the built-in systems DS1 ... DS6."""
    table = _table()
    try:
        return table[system_id]
    except KeyError:
        raise ValueError(f"unknown system {system_id!r}; expected one of {SYSTEM_IDS}") from None


def builtin_systems() -> dict[str, SystemConfig]:
    return _table()
