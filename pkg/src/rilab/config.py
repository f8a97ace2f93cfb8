"""Run configuration: a YAML or JSON file validated against a typed schema.

Every key has an explicit default, and the resolved configuration (defaults
included) is echoed into each run manifest.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, RilabError
from .lattice import CompactSetSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Budgets(_Strict):
    replicas: int = Field(2000, ge=1)
    min_hits: int = Field(40, ge=1)
    ensembles: int = Field(100000, ge=1)
    mc_samples: int = Field(20000, ge=1)
    trials: int = Field(20, ge=1)
    wos_samples: int = Field(20000, ge=0)


class Tolerances(_Strict):
    green: float = Field(1e-8, gt=0)
    residual: float = Field(1e-10, gt=0)
    transport_slack: float = Field(1e-7, ge=0)
    stat_se: float = Field(3.0, gt=0)


class ToyScale(_Strict):
    L0: int = Field(2, ge=1)
    K: int = Field(5, ge=1)


class AppendixConfig(_Strict):
    L: int = Field(8, ge=1)
    Ks: list[float] = [8, 16, 32]
    Ls: list[int] = [4, 8, 16, 32]
    rs: list[float] = [0.05, 0.1, 0.2]
    n_boxes: int = Field(2, ge=1)

    @field_validator("rs")
    @classmethod
    def _r_range(cls, v):
        for r in v:
            if not 0 < r < 0.25:
                raise ValueError(f"r={r} outside (0, 1/4)")
        return v


class RunConfig(_Strict):
    d: int = Field(3, ge=3)
    u: float = Field(3.0, gt=0)
    u_bar: float | None = None
    N: int = Field(6, ge=1)
    M: float = Field(2.0, gt=0)
    R: float = Field(2.0, gt=0)
    epsilon: float = Field(0.25, gt=0, lt=1)
    gamma: float = Field(0.1, gt=0, le=1)
    A: dict = {"kind": "box", "lower": [-1.0, -1.0, -1.0], "upper": [1.0, 1.0, 1.0]}
    seed: int = Field(0, ge=0)
    backend: Literal["auto", "exact", "monte-carlo"] = "auto"
    truncation: Literal["exact", "radius"] = "exact"
    coarse_cells: int = Field(9, ge=1)
    budgets: Budgets = Budgets()
    tolerances: Tolerances = Tolerances()
    toy_scale: ToyScale = ToyScale()
    appendix: AppendixConfig = AppendixConfig()

    @field_validator("u_bar")
    @classmethod
    def _u_below_u_bar(cls, v, info):
        u = info.data.get("u")
        if v is not None and u is not None and not u < v:
            raise ValueError(f"u must be smaller than u_bar (u={u}, u_bar={v})")
        return v

    @field_validator("A")
    @classmethod
    def _set_spec(cls, v):
        try:
            CompactSetSpec.from_dict(v)
        except (KeyError, TypeError, ValueError, RilabError) as exc:
            raise ValueError(f"invalid set specification: {exc}") from exc
        return v

    @model_validator(mode="after")
    def _cross(self):
        if self.R < self.M:
            raise ValueError(f"R={self.R} must be at least M={self.M}")
        if self.set_spec().d != self.d:
            raise ValueError("dimension of A does not match d")
        return self

    def set_spec(self) -> CompactSetSpec:
        return CompactSetSpec.from_dict(self.A)


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {msg}")
    return "\n".join(lines)


def validate(data: dict | None) -> RunConfig:
    """Validate a mapping; raise :class:`ConfigError` with key-path diagnostics."""
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as err:
        raise ConfigError(_format(err)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON file (JSON is valid YAML) and apply top-level overrides."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"<file>: cannot read {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<root>: configuration must be a mapping")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(data)
