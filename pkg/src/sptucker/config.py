"""Training hyperparameters and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Tuple

from .exceptions import ConfigError, InvariantError
from .model import Ranks
from .scheduler import BALANCE_POLICIES, STRATEGIES


@dataclass
class HyperParams:
    """Everything that controls a training run.

    Defaults follow the published experimental setup: ``lambda = 0.01`` for
    both parameter groups, learning rates ``0.002`` (factors) and ``0.001``
    (core), ``N(0.5, 0.1^2)`` initialization and a core batch of one entry.
    """

    core_dims: Tuple[int, ...] = (5, 5, 5)
    r_core: int = 5
    lr_a: float = 0.002
    lr_b: float = 0.001
    reg_a: float = 0.01
    reg_b: float = 0.01
    batch_m: int = 1
    row_fraction: float = 1.0
    epochs: int = 10
    seed: int = 0
    strategy: str = "improved"
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    balance: str = "dynamic"
    init_mean: float = 0.5
    init_std: float = 0.1
    # one sampled core batch per epoch unless set
    resample_per_mode: bool = False
    incremental_residual: bool = False
    chunk: int = 32768

    def __post_init__(self):
        self.core_dims = tuple(int(j) for j in self.core_dims)
        self.validate()

    def validate(self) -> None:
        try:
            Ranks(self.core_dims, self.r_core)
        except InvariantError as exc:
            raise ConfigError(str(exc)) from None
        if self.lr_a < 0 or self.lr_b < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.reg_a < 0 or self.reg_b < 0:
            raise ConfigError("regularization must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_m < 1:
            raise ConfigError("batch_m must be >= 1")
        if not 0.0 < self.row_fraction <= 1.0:
            raise ConfigError("row_fraction must lie in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.balance not in BALANCE_POLICIES:
            raise ConfigError(f"balance must be one of {BALANCE_POLICIES}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.init_std > 0:
            raise ConfigError("init_std must be positive")
        if self.chunk < 1:
            raise ConfigError("chunk must be >= 1")

    @property
    def ranks(self) -> Ranks:
        return Ranks(self.core_dims, self.r_core)

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)

    def to_items(self):
        """``(key, text)`` pairs in field order, in config-file syntax."""
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            out.append((f.name, str(v)))
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(HyperParams)}


def coerce(key: str, text: str):
    """Convert config text to the type of field `key`."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = HyperParams.__dataclass_fields__[key].default
    try:
        if key == "core_dims":
            return tuple(int(v) for v in str(text).split(",") if v.strip())
        if key == "threads":
            return int(text)
        if isinstance(default, bool):
            low = str(text).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return str(text).strip()


def read_config_text(path) -> dict:
    """Raw ``key = value`` pairs as strings (``#`` starts a comment)."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            values[key.strip()] = val.strip()
    return values


def read_config(path) -> dict:
    """Parse a config file into typed hyperparameter values (lists comma-separated)."""
    return {k: coerce(k, v) for k, v in read_config_text(path).items()}


def write_config(hyper: HyperParams, path) -> None:
    with open(path, "w") as fh:
        for k, v in hyper.to_items():
            fh.write(f"{k} = {v}\n")
