"""
Run configuration: flat key-value files with dotted section prefixes.

    reynolds=120
    mesh.h_max=8
    scheme.name=gdTH
    scheme.order=4
    analysis.t_start=280

Files are read with python-dotenv; the nested mapping is validated by
pydantic. Unknown keys are rejected.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from utils.form_utils import FluidParams
from utils.geometry_utils import DomainSpec, MeshParams
from utils.scheme_utils import NonlinearSolverParams, SchemeConfig, SchemeName

logger = logging.getLogger(__name__)

REYNOLDS_RANGE = (1e2, 1e4)


class ConfigError(ValueError):
    """Invalid run configuration."""


def default_output_dir() -> str:
    return os.getenv("NSBENCH_OUTPUT_DIR", "runs")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshSettings(_Section):
    h_max: float = Field(default=8.0, gt=0)
    grading_ratio: float = Field(default=250.0, ge=1.0)
    geometry_order: int = Field(default=4, ge=1)
    grading_law: Literal["linear", "log-linear"] = "log-linear"
    grading_slope: float = Field(default=0.3, gt=0)
    grading_distance: float = Field(default=30.0, gt=0)
    path: Optional[str] = None

    def params(self) -> MeshParams:
        return MeshParams(**self.model_dump(exclude={"path"}))


class SchemeSettings(_Section):
    name: SchemeName = "MCS"
    order: int = Field(default=4, ge=1)
    dt: float = Field(default=0.005, gt=0)
    initializer: Literal["stokes", "impulsive"] = "stokes"
    eps_elimination: bool = True
    gamma_gd: float = Field(default=1e3, ge=0)
    epsilon_mcs: Optional[float] = Field(default=None, gt=0)


class AnalysisSettings(_Section):
    t_start: float = Field(default=280.0, ge=0)
    t_end: float = Field(default=480.0, ge=0)
    initial_guess: float = Field(default=11.3, gt=0)
    scaling: Literal["standardize", "raw"] = "standardize"
    bins: int = Field(default=30, ge=1)
    extension: Literal["layer", "smooth"] = "layer"

    @model_validator(mode="after")
    def _check_window(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"analysis.t_start ({self.t_start}) must be below analysis.t_end ({self.t_end})")
        return self


class OutputSettings(_Section):
    directory: str = Field(default_factory=default_output_dir)
    name: Optional[str] = None
    stride: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    plots: bool = True


class RunConfig(_Section):
    reynolds: float = Field(gt=0)
    t_end: float = Field(default=500.0, ge=0)
    mesh: MeshSettings = Field(default_factory=MeshSettings)
    scheme: SchemeSettings = Field(default_factory=SchemeSettings)
    newton: NonlinearSolverParams = Field(default_factory=NonlinearSolverParams)
    analysis: AnalysisSettings = Field(default_factory=AnalysisSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)

    @model_validator(mode="after")
    def _check(self):
        if self.analysis.t_end > self.t_end:
            raise ValueError(f"analysis.t_end ({self.analysis.t_end}) lies beyond t_end ({self.t_end})")
        lo, hi = REYNOLDS_RANGE
        if not lo <= self.reynolds <= hi:
            logger.warning(f"Reynolds number {self.reynolds:g} outside the benchmark range [{lo:g}, {hi:g}]")
        self.scheme_config()
        return self

    @property
    def nu(self) -> float:
        return 2.0 / self.reynolds

    @property
    def run_name(self) -> str:
        if self.output.name:
            return self.output.name
        return f"{self.scheme.name}_{self.scheme.order}_re{self.reynolds:g}_h{self.mesh.h_max:g}_dt{self.scheme.dt:g}"

    def fluid(self) -> FluidParams:
        kwargs: Dict[str, Any] = {"nu": self.nu, "gamma_gd": self.scheme.gamma_gd}
        if self.scheme.epsilon_mcs is not None:
            kwargs["epsilon_mcs"] = self.scheme.epsilon_mcs
        return FluidParams(**kwargs)

    def scheme_config(self) -> SchemeConfig:
        s = self.scheme
        try:
            return SchemeConfig(
                scheme=s.name,
                order=s.order,
                dt=s.dt,
                t_end=self.t_end,
                fluid=self.fluid(),
                newton=self.newton,
                initializer=s.initializer,
                eps_elimination=s.eps_elimination,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid scheme settings: {e}") from e

    def domain(self) -> DomainSpec:
        return DomainSpec()

    def hash_payload(self) -> Dict[str, Any]:
        """Everything that determines the computed trajectory."""
        return self.model_dump(mode="json", exclude={"t_end", "output", "analysis"})

    def with_reynolds(self, reynolds: float) -> "RunConfig":
        data = self.model_dump()
        data["reynolds"] = reynolds
        data["output"]["name"] = None
        return RunConfig.model_validate(data)


def nest_keys(flat: Mapping[str, Optional[str]]) -> Dict[str, Any]:
    """{'mesh.h_max': '8'} -> {'mesh': {'h_max': '8'}}"""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            raise ConfigError(f"Key '{key}' has no value")
        parts = key.strip().split(".")
        if any(not p for p in parts):
            raise ConfigError(f"Malformed key '{key}'")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Key '{key}' conflicts with a plain value")
            node = child
        if parts[-1] in node and isinstance(node[parts[-1]], dict):
            raise ConfigError(f"Key '{key}' conflicts with section '{parts[-1]}'")
        node[parts[-1]] = value.strip()
    return nested


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def build_run_config(values: Mapping[str, Optional[str]]) -> RunConfig:
    try:
        return RunConfig.model_validate(nest_keys(values))
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def load_run_config(path: Union[str, Path], overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = dict(dotenv_values(path))
    values.update(overrides or {})
    config = build_run_config(values)
    logger.info(f"Loaded run config {path}: {config.run_name}")
    return config


def parse_overrides(items) -> Dict[str, str]:
    """['scheme.dt=0.01', ...] -> {'scheme.dt': '0.01'}"""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
