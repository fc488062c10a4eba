# config/settings.py
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import toml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.errors import ConfigError


class Settings(BaseSettings):
    """Process-level knobs, read from WEDGE_LAB_* variables and .env."""

    model_config = SettingsConfigDict(env_prefix="WEDGE_LAB_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    output_dir: Path = Path("runs")
    n_jobs: int = 1
    progress: bool = True


class GasSection(BaseModel):
    gamma: float = 1.4

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not v > 1.0:
            raise ValueError(f"gamma must exceed 1, got {v}")
        return v


class UpstreamSection(BaseModel):
    q0: float = 1.1
    theta_i_deg: float = 90.0
    perturbation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bump_amplitude: float = 0.0
    bump_center: Tuple[float, float, float] = (2.0, 1.0, 0.0)
    bump_width: float = 0.5

    @field_validator("theta_i_deg")
    @classmethod
    def _theta_i(cls, v):
        if not 0.0 < v < 180.0:
            raise ValueError(f"theta_i must lie in (0, 180) degrees, got {v}")
        return v

    @property
    def theta_i(self) -> float:
        return math.radians(self.theta_i_deg)


class WedgeSection(BaseModel):
    theta_w_deg: Optional[float] = None
    window_fraction: float = 0.5
    branch: Literal["weak", "strong"] = "weak"

    @field_validator("window_fraction")
    @classmethod
    def _fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"window_fraction must lie in (0, 1), got {v}")
        return v

    @property
    def theta_w(self) -> Optional[float]:
        return None if self.theta_w_deg is None else math.radians(self.theta_w_deg)


class BumpSection(BaseModel):
    amplitude: float
    center1: float = 0.0
    width1: Optional[float] = None
    center3: float = 0.0
    width3: Optional[float] = None

    @field_validator("width1", "width3")
    @classmethod
    def _width(cls, v):
        if v is not None and not v > 0.0:
            raise ValueError(f"bump widths must be positive, got {v}")
        return v


class GeometrySection(BaseModel):
    w: List[BumpSection] = Field(default_factory=list)
    e1: List[BumpSection] = Field(default_factory=list)

    @field_validator("e1")
    @classmethod
    def _edge(cls, v):
        for bump in v:
            if bump.width1 is not None:
                raise ValueError("edge bumps depend on x3 only; leave width1 unset")
        return v


class SolverSection(BaseModel):
    grid: List[int] = Field(default_factory=lambda: [256, 128])
    radius: float = 64.0
    r_in: Optional[float] = None
    r_out: Optional[float] = None
    z_length: float = 2.0 * math.pi
    periodic: bool = True
    outer_cut: Literal["dirichlet", "neumann"] = "dirichlet"
    tangential: Literal["central", "upwind"] = "central"
    rtol: float = 1e-10
    restart: int = 200
    maxiter: int = 2000
    drop_tol: float = 1e-5
    fill_factor: float = 20.0
    direct_fallback: bool = True

    @field_validator("grid")
    @classmethod
    def _grid(cls, v):
        if len(v) not in (2, 3) or min(v) < 3:
            raise ValueError(f"grid must be [ns, nt] or [ns, nt, nz] with at least 3 nodes each, got {v}")
        return v

    @field_validator("radius")
    @classmethod
    def _radius(cls, v):
        if not v > 4.0:
            raise ValueError(f"radius must exceed 4, got {v}")
        return v

    @property
    def planar(self) -> bool:
        return len(self.grid) == 2

    def solver_kwargs(self) -> Dict[str, Any]:
        return {
            "tangential": self.tangential,
            "rtol": self.rtol,
            "restart": self.restart,
            "maxiter": self.maxiter,
            "drop_tol": self.drop_tol,
            "fill_factor": self.fill_factor,
            "direct_fallback": self.direct_fallback,
        }


class IterationSection(BaseModel):
    tol: float = 1e-8
    max_iter: int = 50
    epsilon: float = 1e-3
    c0: Optional[float] = None
    patience: int = 5
    far_field: Literal["zero", "polar"] = "zero"


class LinearSection(BaseModel):
    data: Literal["barrier", "bump"] = "bump"
    barrier: Literal["decay", "regularity"] = "decay"
    amplitude: float = 1.0
    center: Tuple[float, float] = (2.0, 0.5)
    width: float = 0.8
    g_edge: float = 0.0


class SweepSection(BaseModel):
    amplitudes: List[float] = Field(default_factory=lambda: [1e-4, 2e-4, 5e-4, 1e-3])
    target: Literal["wedge", "upstream"] = "wedge"

    @field_validator("amplitudes")
    @classmethod
    def _amplitudes(cls, v):
        if not v or min(v) <= 0.0:
            raise ValueError("sweep amplitudes must be a non-empty list of positive numbers")
        return sorted(v)


class OutputSection(BaseModel):
    directory: Optional[Path] = None
    write_binary: bool = True
    write_fields: bool = True


class ExperimentConfig(BaseModel):
    mode: Literal["polar", "certify", "solve-linear", "run", "sweep", "truncation"] = "run"
    seed: int = 0
    gas: GasSection = Field(default_factory=GasSection)
    upstream: UpstreamSection = Field(default_factory=UpstreamSection)
    wedge: WedgeSection = Field(default_factory=WedgeSection)
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    solver: SolverSection = Field(default_factory=SolverSection)
    iteration: IterationSection = Field(default_factory=IterationSection)
    linear: LinearSection = Field(default_factory=LinearSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _consistency(self):
        planar_data = all(b.width3 is None for b in self.geometry.w + self.geometry.e1)
        if self.solver.planar and not planar_data:
            raise ValueError("planar grid requires x3-invariant bumps (width3 unset)")
        if self.solver.planar and self.upstream.bump_amplitude != 0.0:
            raise ValueError("planar grid cannot carry the 3D upstream Gaussian bump")
        return self

    def canonical(self) -> Dict[str, Any]:
        """JSON-ready dump used for the config hash; output location excluded."""
        payload = self.model_dump(mode="json")
        payload["output"].pop("directory", None)
        return payload


def parse_grid(text: str) -> List[int]:
    """'256x128' or '96x48x48' -> list of node counts."""
    try:
        dims = [int(p) for p in text.lower().split("x")]
    except ValueError as exc:
        raise ConfigError(f"Bad grid spec {text!r}; expected NSxNT[xNZ]") from exc
    if len(dims) not in (2, 3):
        raise ConfigError(f"Bad grid spec {text!r}; expected NSxNT[xNZ]")
    return dims


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<config>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def build_config(data: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    data = dict(data or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if name:
            data.setdefault(section, {})
            data[section] = dict(data[section], **{name: value})
        else:
            data[section] = value
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_format_errors(e)}") from e


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = toml.load(str(path))
        except (OSError, toml.TomlDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
    return build_config(data, overrides)
