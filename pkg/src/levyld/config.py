"""Strict experiment configuration (unknown keys are errors, reported with their key path)."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

Vector = list[float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class QuadratureSection(_Strict):
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_panels: int = 4096


class CoefficientCurve(_Strict):
    coefficients: list[list[float]]


class ModelSection(_Strict):
    alpha: float = 0.5
    big_c: float = 1.0
    big_c_neg: Optional[float] = None
    d: int = 2
    cutoff_inner: float = 0.5
    gamma: Union[Literal["monomial"], CoefficientCurve] = "monomial"
    nu: Literal["quartic"] = "quartic"
    quadrature: QuadratureSection = Field(default_factory=QuadratureSection)

    def build_kwargs(self) -> dict:
        gamma = self.gamma if isinstance(self.gamma, str) else self.gamma.model_dump()
        return dict(alpha=self.alpha, big_c=self.big_c, big_c_neg=self.big_c_neg, d=self.d,
                    cutoff_inner=self.cutoff_inner, gamma=gamma, nu=self.nu,
                    quadrature=self.quadrature.model_dump())


class HamiltonianSection(_Strict):
    xi: Vector = [1.0, 1.0]


class RateSection(_Strict):
    alpha: Optional[Vector] = None
    x: Vector = [0.0, 0.0]
    y: Vector = [1.5, 1.0]
    center: Vector = [2.0, 0.0]
    radius: float = 0.3
    radii: list[float] = [2.0, 4.0, 8.0, 16.0]
    segments: int = 16


class SimulateSection(_Strict):
    h: float = 0.25
    t: float = 1.0
    n: int = 100_000
    eps_cut: Optional[float] = None
    tilt: Union[Literal["none", "auto"], Vector] = "none"
    x: Vector = [0.0, 0.0]
    target: Optional[Vector] = None
    format: Literal["csv", "json"] = "json"


class DensitySection(_Strict):
    x: Vector = [0.0, 0.0]
    y: Vector = [1.5, 1.0]
    h: float = 0.5
    r: float = 0.05
    n: int = 100_000


class VaradhanSection(_Strict):
    x: Vector = [0.0, 0.0]
    y: Vector = [1.5, 1.0]
    h_grid: list[float] = [0.5, 0.25, 0.125]
    n: int = 200_000
    chi_tol: float = 0.2


class WFSection(_Strict):
    x: Vector = [0.0, 0.0]
    center: Vector = [2.0, 0.0]
    radius: float = 0.3
    h_grid: list[float] = [0.5, 0.25, 0.125]
    n: int = 200_000
    chi_tol: float = 0.2


class MalliavinSection(_Strict):
    p: float = 1.0
    h_grid: list[float] = [0.5, 0.25, 0.125]
    n: int = 100_000
    t: float = 1.0


class TauberianSection(_Strict):
    family: Literal["poly"] = "poly"
    K: int = 4
    alpha: Optional[float] = None
    beta_grid: list[float] = [1e2, 1e3, 1e4, 1e5, 1e6]


class OutputSection(_Strict):
    dir: str = "levyld_out"
    format: Literal["csv", "json"] = "csv"


class ExperimentConfig(_Strict):
    model: ModelSection = Field(default_factory=ModelSection)
    hamiltonian: HamiltonianSection = Field(default_factory=HamiltonianSection)
    rate: RateSection = Field(default_factory=RateSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    density: DensitySection = Field(default_factory=DensitySection)
    varadhan: VaradhanSection = Field(default_factory=VaradhanSection)
    wf: WFSection = Field(default_factory=WFSection)
    malliavin: MalliavinSection = Field(default_factory=MalliavinSection)
    tauberian: TauberianSection = Field(default_factory=TauberianSection)
    seed: Optional[int] = None
    workers: int = 1
    output: OutputSection = Field(default_factory=OutputSection)

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, v):
        if v is not None and not 0 <= v < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


class ConfigError(ValueError):
    pass


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
