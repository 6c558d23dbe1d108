"""INI-style run configuration with layered overrides.

Precedence is command-line ``--set section.key=value`` over the config
file over the built-in defaults below. Unknown sections or keys are
rejected. ``write_resolved`` records every final value with its origin.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from nsbandit.errors import ConfigurationError

DEFAULTS: dict[str, dict[str, str]] = {
    "experiment": {
        "scale": "0.1",
        "horizon": "100000",
        "changepoints": "30000, 45000, 60000, 90000",
        "gradual_starts": "30000, 60000",
        "gradual_duration": "10000",
        "num_runs": "3",
        "base_seed": "0",
        "record_stride": "100",
        "datasets": "ML, OBD",
        "dynamics": "stationary, abrupt, gradual",
        "workers": "1",
        "trajectories": "false",
    },
    "policies": {
        "names": "ucb1, ducb, swucb, fdsw-min, fdsw-mean, fdsw-max",
        "alpha": "1.0",
        "gamma": "0.999",
        "c": "1.0",
        "tau": "",
        "window_changepoints": "4",
    },
    "data": {
        "movielens_users": "",
        "movielens_ratings": "",
        "obd_log": "",
        "obd_item_column": "item_id",
        "obd_click_column": "click",
        "obd_expected_items": "80",
        "obd_strict": "false",
        "synthetic_pool_size": "2000",
        "synthetic_seed": "0",
    },
    "cluster": {
        "k": "9",
        "k_min": "2",
        "k_max": "15",
        "restarts": "10",
        "max_iter": "300",
        "seed": "0",
    },
    "drift": {
        "stride": "100",
    },
}


@dataclass
class Config:
    values: dict[str, dict[str, str]]
    origin: dict[tuple[str, str], str] = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def int(self, section: str, key: str) -> int:
        return self._conv(section, key, int)

    def float(self, section: str, key: str) -> float:
        return self._conv(section, key, float)

    def bool(self, section: str, key: str) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off", ""):
            return False
        raise ConfigurationError(f"{section}.{key}: {v!r} is not a boolean")

    def ints(self, section: str, key: str) -> list[int]:
        return [self._parse(section, key, x, int) for x in self.list(section, key)]

    def list(self, section: str, key: str) -> list[str]:
        return [x.strip() for x in self.get(section, key).split(",") if x.strip()]

    def optional_int(self, section: str, key: str):
        return None if not self.get(section, key).strip() else self.int(section, key)

    def _conv(self, section, key, fn):
        return self._parse(section, key, self.get(section, key), fn)

    @staticmethod
    def _parse(section, key, raw, fn):
        try:
            return fn(raw.strip())
        except ValueError:
            raise ConfigurationError(f"{section}.{key}: cannot read {raw!r} as {fn.__name__}") from None


def _merge(values, origin, section, key, value, source):
    if section not in DEFAULTS:
        raise ConfigurationError(f"unknown config section [{section}]")
    if key not in DEFAULTS[section]:
        raise ConfigurationError(f"unknown config key {section}.{key}")
    values[section][key] = value
    origin[(section, key)] = source


def load_config(path=None, overrides: Iterable[str] = ()) -> Config:
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    origin = {(s, k): "default" for s, kv in DEFAULTS.items() for k in kv}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        with open(path) as fh:
            cp.read_file(fh)
        for section in cp.sections():
            for key, value in cp.items(section):
                _merge(values, origin, section, key, value, f"file {Path(path).name}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _merge(values, origin, section, key, value.strip(), "command line")
    return Config(values, origin)


def write_resolved(cfg: Config, path) -> None:
    lines = ["; resolved configuration; the comment above each key names its origin", ""]
    for section, kv in cfg.values.items():
        lines.append(f"[{section}]")
        for key, value in kv.items():
            lines.append(f"; {cfg.origin[(section, key)]}")
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
