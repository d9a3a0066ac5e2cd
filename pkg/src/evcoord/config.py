"""JSON run configuration: slot grid, generator, FQI and validation windows."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .qlearn import FqiConfig
from .sessions import GeneratorParams, SlotConfig


@dataclass
class RunConfig:
    slot: SlotConfig = field(default_factory=SlotConfig)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    fqi: FqiConfig = field(default_factory=FqiConfig)
    n_episodes: int = 300
    charger_kw: float = 7.0
    seed: int = 0
    E_values: tuple[int, ...] = (1, 5, 10)
    windows: dict = field(default_factory=lambda: {
        "increasing_step": 30, "increasing_max_train": 270,
        "rolling_train": 90, "rolling_test": 30, "rolling_stride": 30,
        "max_splits": None,
    })

    def to_dict(self) -> dict:
        return {
            "slot": self.slot.to_dict(),
            "generator": self.generator.to_dict(),
            "fqi": self.fqi.to_dict(),
            "n_episodes": self.n_episodes,
            "charger_kw": self.charger_kw,
            "seed": self.seed,
            "E_values": list(self.E_values),
            "windows": dict(self.windows),
        }


def _pick(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {name} key(s): {sorted(unknown)}")
    return data


def config_from_dict(d: dict) -> RunConfig:
    top = {"slot", "generator", "fqi", "n_episodes", "charger_kw", "seed", "E_values", "windows"}
    unknown = set(d) - top
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    cfg = RunConfig()
    if "slot" in d:
        cfg.slot = SlotConfig(**_pick(SlotConfig, d["slot"], "slot"))
    if "generator" in d:
        g = {k: tuple(v) if isinstance(v, list) else v
             for k, v in _pick(GeneratorParams, d["generator"], "generator").items()}
        cfg.generator = GeneratorParams(**g)
    if "fqi" in d:
        cfg.fqi = FqiConfig(**_pick(FqiConfig, d["fqi"], "fqi"))
    for key in ("n_episodes", "charger_kw", "seed"):
        if key in d:
            setattr(cfg, key, type(getattr(cfg, key))(d[key]))
    if "E_values" in d:
        cfg.E_values = tuple(int(e) for e in d["E_values"])
    if "windows" in d:
        unknown = set(d["windows"]) - set(cfg.windows)
        if unknown:
            raise ValueError(f"unknown windows key(s): {sorted(unknown)}")
        cfg.windows.update(d["windows"])
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return config_from_dict(json.loads(Path(path).read_text()))


def with_overrides(cfg: RunConfig, *, seed=None, iterations=None, trajectories=None) -> RunConfig:
    fqi = cfg.fqi
    if iterations is not None:
        fqi = replace(fqi, iterations=iterations)
    if trajectories is not None:
        fqi = replace(fqi, trajectories_per_episode=trajectories)
    if seed is not None:
        fqi = replace(fqi, seed=seed)
    return replace(cfg, fqi=fqi, seed=cfg.seed if seed is None else seed)
