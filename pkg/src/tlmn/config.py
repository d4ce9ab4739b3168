"""Run configuration: one JSON file describing a full pipeline run."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, DomainError
from .features import DEFAULT_UTC_OFFSET, SplitSpec
from .network import ModelConfig
from .solar_geometry import OMDURMAN, ClearSkyParams, GeoLocation
from .training import TrainConfig

PATH_KEYS = ("data", "cache_dir", "checkpoint", "report_dir", "epoch_log")


def _strict(d, allowed, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


@dataclass
class RunConfig:
    location: GeoLocation = OMDURMAN
    utc_offset_hours: float = DEFAULT_UTC_OFFSET
    clearsky: ClearSkyParams = field(default_factory=ClearSkyParams)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        _strict(self.paths, PATH_KEYS, "paths")
        if self.train.seed != self.seed:
            self.train = TrainConfig(**{**self.train.to_dict(), "seed": self.seed})

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "location": {
                "latitude": self.location.latitude,
                "longitude": self.location.longitude,
                "altitude": self.location.altitude,
            },
            "utc_offset_hours": self.utc_offset_hours,
            "clearsky": {
                "linke_turbidity": self.clearsky.linke_turbidity,
                "solar_constant": self.clearsky.solar_constant,
                "monthly_turbidity": list(self.clearsky.monthly_turbidity) if self.clearsky.monthly_turbidity else None,
            },
            "split": {"train_range": list(self.split.train_range), "test_range": list(self.split.test_range)},
            "model": self.model.to_dict(),
            "train": train,
            "paths": {k: str(v) for k, v in sorted(self.paths.items())},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _strict(d, [f.name for f in fields(cls)], "config")
        kw = {}
        try:
            if "location" in d:
                kw["location"] = GeoLocation(**_strict(d["location"], ("latitude", "longitude", "altitude"), "location"))
            if "utc_offset_hours" in d:
                kw["utc_offset_hours"] = float(d["utc_offset_hours"])
            if "clearsky" in d:
                cs = dict(_strict(d["clearsky"], ("linke_turbidity", "solar_constant", "monthly_turbidity"), "clearsky"))
                if cs.get("monthly_turbidity") is not None:
                    cs["monthly_turbidity"] = tuple(cs["monthly_turbidity"])
                kw["clearsky"] = ClearSkyParams(**cs)
            if "split" in d:
                sp = _strict(d["split"], ("train_range", "test_range"), "split")
                kw["split"] = SplitSpec(**{k: tuple(v) for k, v in sp.items()})
            if "model" in d:
                kw["model"] = ModelConfig.from_dict(_strict(d["model"], ModelConfig.__dataclass_fields__, "model"))
            seed = int(d.get("seed", 0))
            kw["seed"] = seed
            if "train" in d:
                tr = _strict(d["train"], [k for k in TrainConfig.__dataclass_fields__ if k != "seed"], "train")
                kw["train"] = TrainConfig(**tr, seed=seed)
            if "paths" in d:
                kw["paths"] = dict(_strict(d["paths"], PATH_KEYS, "paths"))
        except (TypeError, DomainError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
