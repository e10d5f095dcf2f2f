"""Run configuration: nested YAML file, strict keys, flag overrides.

Unknown keys are rejected before any compute happens.  ``--set a.b=value``
overrides any leaf; the value is parsed as YAML so numbers and lists work.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from sbnet.errors import ConfigError
from sbnet.losses import LossConfig
from sbnet.optim import LrSchedule
from sbnet.schedule import Strategy

DEFAULTS: dict[str, Any] = {
    "corpus": None,
    "variant": "single",
    "model": {"hidden": 256, "embed_dim": 128, "bn_momentum": 0.1, "bn_eps": 1e-5},
    "loss": {"loss": "fop", "alpha": 1.0, "alpha_c": 0.003, "alpha_g": 0.003, "center_lr": 0.5, "pair_reduction": "mean"},
    "optim": {"lr0": 1e-5, "gamma": 0.95, "beta1": 0.9, "beta2": 0.999, "eps_adam": 1e-8},
    "strategy": "random",
    "epochs": 50,
    "batch_size": 128,
    "seed": 0,
    "split": {"fractions": [0.7, 0.1, 0.2], "seed": 0},
    "eval": {
        "seed": 0,
        "n_trials": 10000,
        "strata": ["random"],
        "unimodal": True,
        "gallery_sizes": [2, 4, 6, 8, 10],
        "matching_trials": 2000,
    },
    "out": "runs/default",
    "resume": None,
}

VARIANTS = ("single", "two")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-5`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def parse_override(text: str) -> dict:
    """``"loss.alpha=0.5"`` -> ``{"loss": {"alpha": 0.5}}``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = _yaml(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from None
    out: dict = value
    for part in reversed(key.strip().split(".")):
        out = {part: out}
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data: dict | None = None, overrides: list[dict] | None = None) -> "RunConfig":
        merged = _merge(DEFAULTS, data or {})
        for ov in overrides or []:
            merged = _merge(merged, ov)
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[dict] | None = None) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                data = _yaml(Path(path).read_text(encoding="utf-8")) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must hold a mapping at top level")
        return cls.from_dict(data, overrides)

    def __getitem__(self, key):
        return self.raw[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def validate(self) -> None:
        r = self.raw
        if r["variant"] not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {r['variant']!r}")
        for key in ("epochs", "batch_size", "seed"):
            if not isinstance(r[key], int) or r[key] < 0:
                raise ConfigError(f"{key} must be a nonnegative integer")
        if r["batch_size"] < 2:
            raise ConfigError("batch_size must be >= 2")
        for key in ("hidden", "embed_dim"):
            if not isinstance(r["model"][key], int) or r["model"][key] < 1:
                raise ConfigError(f"model.{key} must be a positive integer")
        self.loss_config()
        self.schedule()
        Strategy.parse(r["strategy"])
        ev = r["eval"]
        if int(ev["n_trials"]) < 2 or int(ev["matching_trials"]) < 1:
            raise ConfigError("eval trial counts too small")
        if any(int(n) < 2 for n in ev["gallery_sizes"]):
            raise ConfigError("gallery sizes must be >= 2")
        fr = r["split"]["fractions"]
        if len(fr) != 3 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("split.fractions must be three numbers summing to 1")

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(**self.raw["loss"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self) -> LrSchedule:
        o = self.raw["optim"]
        return LrSchedule(float(o["lr0"]), float(o["gamma"]))

    def strategy(self) -> Strategy:
        return Strategy.parse(self.raw["strategy"])
