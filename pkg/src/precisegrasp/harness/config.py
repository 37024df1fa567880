"""Flat ``key = value`` configuration with documented defaults.

Unknown keys are rejected so that a typo never silently falls back to a
default.  ``default.cfg`` next to this module lists every key.
"""

from __future__ import annotations

from dataclasses import fields
from importlib import resources

import numpy as np

from ..dataset import SensorParams
from ..errors import ConfigurationError
from ..physics import PhysicsParams

# key -> (type, default)
_SCHEMA: dict = {
    "seed": (int, 0),
    "workers": (int, 1),
    "output_dir": (str, "out"),
    "corpus.parts": (int, 200),
    "corpus.target_parts": (int, 0),
    "corpus.chunk": (int, 20),
    "corpus.seed": (int, 1),
    "corpus.grasps_per_part": (int, 1000),
    "corpus.val_fraction": (float, 0.15),
    "corpus.min_success_rate": (float, 0.05),
    "corpus.max_success_rate": (float, 0.40),
    "corpus.min_axis": (float, 0.02),
    "corpus.max_axis": (float, 0.15),
    "train.precision": (str, "float64"),
    "gqn.epochs": (int, 100),
    "gqn.lr": (float, 1e-5),
    "gqn.decay": (float, 1e-6),
    "gqn.batch_size": (int, 64),
    "gdn.epochs": (int, 100),
    "gdn.lr": (float, 1e-5),
    "gdn.decay": (float, 1e-6),
    "gdn.batch_size": (int, 64),
    "gdn.variants": (str, "GCIP-M,GCIP-M+V,OCFI-M,OCFI-M+V"),
    "planner.candidates": (int, 3200),
    "planner.top_fraction": (float, 0.03),
    "eval.trials_per_object": (int, 30),
    "eval.seed": (int, 0),
    "eval.noise": (bool, True),
}
for f in fields(PhysicsParams):
    _SCHEMA[f"physics.{f.name}"] = (type(f.default), f.default)
for f in fields(SensorParams):
    _SCHEMA[f"sensor.{f.name}"] = (type(f.default), f.default)


def _parse(key: str, raw: str):
    typ, _ = _SCHEMA[key]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        return typ(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r} (expected {typ.__name__})") from None


class Config:
    """Mapping of every known key to its value."""

    def __init__(self, values: dict | None = None):
        self.values = {k: v for k, (_, v) in _SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    @staticmethod
    def keys() -> list[str]:
        return list(_SCHEMA)

    def set(self, key: str, value):
        if key not in _SCHEMA:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else _SCHEMA[key][0](value)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        return self.values[key]

    def override(self, **pairs) -> "Config":
        """Copy with keys given as ``corpus__parts=10`` style arguments."""
        c = Config(dict(self.values))
        for k, v in pairs.items():
            c.set(k.replace("__", "."), v)
        return c

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        cfg = Config(dict(base.values)) if base else cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"line {lineno}: expected 'key = value'")
            cfg.set(key.strip(), value.strip())
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.values.items())

    def physics(self) -> PhysicsParams:
        return PhysicsParams(**{f.name: self[f"physics.{f.name}"] for f in fields(PhysicsParams)})

    def sensor(self) -> SensorParams:
        return SensorParams(**{f.name: self[f"sensor.{f.name}"] for f in fields(SensorParams)})

    def dtype(self):
        p = self["train.precision"]
        if p not in ("float64", "float32"):
            raise ConfigurationError(f"train.precision must be float64 or float32, got {p!r}")
        return np.float64 if p == "float64" else np.float32


def default_config_text() -> str:
    return resources.files(__package__).joinpath("default.cfg").read_text()
