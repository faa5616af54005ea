"""Run configuration: an INI file with one section per component.

Every key has a default below; unknown sections or keys are rejected.  Values
are parsed according to the type of their default.  Overrides use the
``section.key=value`` form, e.g. ``loss.alpha=1.2``.

Example::

    [data]
    path = data/books.tsv.gz
    max_len = 20

    [loss]
    family = croloss_lambda
    kernel1 = sigmoid
    kernel2 = softplus
    alpha = 1.0
"""

from __future__ import annotations

import configparser
import copy
from pathlib import Path
from typing import Any, Iterable, Optional


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"run_id": "run", "output_dir": "runs"},
    "data": {
        "source": "file",  # file | synthetic
        "path": "",
        "delimiter": "\\t",
        "max_len": 20,
        "n_bs": 256,
        "n_rn": 10,
        "seed": 0,  # user split
        "eval_targets": "all",  # all | last
        "split": [8.0, 1.0, 1.0],
        "synthetic_users": 5000,
        "synthetic_items": 2000,
        "synthetic_clusters": 20,
        "synthetic_seed": 0,
    },
    "model": {"dim": 32, "hidden": 32, "out": 32, "tau": 10.0, "dtype": "float64"},
    "loss": {
        "family": "croloss",
        "kernel": "softplus",
        "kernel1": "sigmoid",
        "kernel2": "softplus",
        "alpha": 1.0,
        "margin": 5.0,
    },
    "train": {
        "lr": 0.02,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "epochs": 10,
        "max_steps": 0,
        "eval_every": 0,
        "patience": 3,
        "seed": 0,  # model initialisation and batch stream
        "average_loss": True,
    },
    "eval": {"ns": [50, 100, 200, 500], "pivot_n": 50, "exclude_history": False},
    "sweep": {
        "kernels": ["hinge", "sigmoid", "exponential", "softplus", "lambda:sigmoid/softplus"],
        "alphas": [0.6, 0.8, 1.0, 1.2],
        "seeds": [0],
    },
}


def _parse_value(default: Any, raw: str, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return [kind(s) for s in items]
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


class RunConfig:
    """Resolved configuration; ``cfg["loss"]["alpha"]`` style access."""

    def __init__(self, values: Optional[dict] = None):
        self.values = copy.deepcopy(DEFAULTS) if values is None else values

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def set(self, dotted: str, raw: str) -> None:
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        self.values[section][key] = _parse_value(DEFAULTS[section][key], raw, dotted)

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            key, raw = item.split("=", 1)
            self.set(key.strip(), raw)

    @property
    def delimiter(self) -> str:
        return self["data"]["delimiter"].encode().decode("unicode_escape")

    @property
    def run_dir(self) -> Path:
        return Path(self["run"]["output_dir"]) / self["run"]["run_id"]

    def dumps(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_format_value(v)}" for k, v in keys.items()]
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def load_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(f"{section}.{key}", raw)
    cfg.apply_overrides(overrides)
    return cfg
