"""
Configuration Management
Process settings from .env / environment, run configuration from INI files
"""

import configparser
import io
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from bloomgs.errors import ConfigError


class Settings(BaseSettings):
    """Process-level settings loaded from the environment or .env file."""

    log_level: str = Field(default="INFO", alias="BLOOMGS_LOG_LEVEL")
    log_format: Literal["plain", "kv"] = Field(default="plain", alias="BLOOMGS_LOG_FORMAT")

    # Directory provider polling
    provider_poll_interval: float = Field(default=0.5, gt=0, alias="BLOOMGS_PROVIDER_POLL_INTERVAL")
    provider_timeout: float = Field(default=300.0, gt=0, alias="BLOOMGS_PROVIDER_TIMEOUT")

    default_out_dir: str = Field(default="runs/default", alias="BLOOMGS_OUT_DIR")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        populate_by_name=True,
        extra="ignore",
    )


def get_settings() -> Settings:
    """Get process settings."""
    return Settings()


# ==================== Run configuration sections ====================

def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RunSection(_Section):
    """[run]: what to generate and where to put it."""
    prompt: str = "a cozy living room with a couch and warm lamps"
    seed: int = Field(default=0, ge=0, lt=2**64)
    out_dir: str = "runs/default"
    provider: str = "synthetic:room"
    initial_image: str = ""
    width: int = Field(default=64, gt=0)
    height: int = Field(default=64, gt=0)
    fov_degrees: float = Field(default=60.0, gt=0, lt=180)


class TrajectoryConfig(_Section):
    """[trajectory]: predefined cameras and support views."""
    num_cameras: int = Field(default=7, ge=1)
    rotation_step: float = Field(default=0.63, gt=0)
    pivot: Optional[Tuple[float, float, float]] = None
    support_count: int = Field(default=14, ge=0)
    support_shift: float = 5.0
    support_elevation: bool = False
    min_overlap: int = Field(default=16, ge=1)

    @field_validator("pivot", mode="before")
    @classmethod
    def _parse_pivot(cls, value):
        if value in ("", "none", "None"):
            return None
        return _split_csv(value)

    @field_validator("rotation_step")
    @classmethod
    def _check_step(cls, value):
        if not 0 < value < 3.141592653589793:
            raise ValueError("rotation_step must lie in (0, pi)")
        return value

    @model_validator(mode="after")
    def _check_support(self):
        if self.support_count > 2 * self.num_cameras:
            raise ValueError("support_count cannot exceed 2 * num_cameras")
        return self


class DprConfig(_Section):
    """[dpr]: depth prior regularization weights and kernels."""
    lambda_pixel: float = Field(default=0.7, gt=0)
    lambda_dist: float = Field(default=0.1, gt=0)
    lambda_smooth: float = Field(default=1.0, gt=0)
    cmd_order: int = Field(default=5, ge=1)
    sigma_s: float = Field(default=2.0, gt=0)
    sigma_c: float = Field(default=0.1, gt=0)
    window: int = Field(default=5, ge=3)
    huber_fraction: float = Field(default=0.2, gt=0, le=1)
    strict_cmd: bool = False
    alpha_threshold: float = Field(default=0.5, ge=0, le=1)

    @field_validator("window")
    @classmethod
    def _check_window(cls, value):
        if value % 2 == 0:
            raise ValueError("window must be odd")
        return value


class SccConfig(_Section):
    """[scc]: anchor sizes, hash grid, quantization and rate weights."""
    feature_dim: int = Field(default=50, gt=0)
    offsets_per_anchor: int = Field(default=10, gt=0)
    hash_resolutions: Tuple[int, ...] = (16, 32, 64, 128)
    hash_table_size: int = Field(default=2**13, gt=0)
    hash_features: int = Field(default=4, gt=0)
    hidden_width: int = Field(default=32, gt=0)
    eta_feature: float = Field(default=2.5e-1, gt=0)
    eta_scaling: float = Field(default=2.5e-4, gt=0)
    eta_offset: float = Field(default=5e-2, gt=0)
    tau: float = Field(default=1.0, gt=0)
    lambda_volume: float = Field(default=1e-2, ge=0)
    lambda_entropy: float = Field(default=2e-3, ge=0)
    train_noise: Literal["gaussian", "uniform"] = "gaussian"
    render_quantized: bool = True

    @field_validator("hash_resolutions", mode="before")
    @classmethod
    def _parse_resolutions(cls, value):
        return _split_csv(value)

    @field_validator("hash_resolutions")
    @classmethod
    def _check_increasing(cls, value):
        if not value or any(b <= a for a, b in zip(value, value[1:])) or value[0] <= 0:
            raise ValueError("hash_resolutions must be positive and strictly increasing")
        return value

    @property
    def etas(self) -> Tuple[float, float, float]:
        return (self.eta_feature, self.eta_scaling, self.eta_offset)

    @property
    def attribute_dim(self) -> int:
        """D^a + 6 + 3K."""
        return self.feature_dim + 6 + 3 * self.offsets_per_anchor


class OptimizerConfig(_Section):
    """[optimizer]: Adam settings and per-group learning rates."""
    lr_anchor: float = Field(default=1e-2, ge=0)
    lr_feature: float = Field(default=5e-3, ge=0)
    lr_grid: float = Field(default=5e-3, ge=0)
    lr_network: float = Field(default=2e-3, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class TrainConfig(_Section):
    """[train]: iteration schedule and anchor initialization."""
    iterations: int = Field(default=500, ge=0)
    log_every: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=100, ge=1)
    max_anchors: int = Field(default=192, ge=1)
    voxel_fraction: float = Field(default=0.01, gt=0)
    offset_init_scale: float = Field(default=0.1, ge=0)
    ablation: Literal["none", "no_dpr", "no_scc", "no_pixel", "no_dist", "no_smooth"] = "none"
    holdout_every: int = Field(default=5, ge=0)
    pixel_chunk: int = Field(default=1024, gt=0)


class RenderConfig(_Section):
    """[render]: background color used when compositing."""
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("background", mode="before")
    @classmethod
    def _parse_background(cls, value):
        return _split_csv(value)

    @field_validator("background")
    @classmethod
    def _check_background(cls, value):
        if any(not 0.0 <= c <= 1.0 for c in value):
            raise ValueError("background channels must lie in [0, 1]")
        return value


class RunConfig(_Section):
    """Complete, reproducible description of a run."""
    run: RunSection = Field(default_factory=RunSection)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    dpr: DprConfig = Field(default_factory=DprConfig)
    scc: SccConfig = Field(default_factory=SccConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)


SECTIONS = ("run", "trajectory", "dpr", "scc", "optimizer", "train", "render")


def parse_run_config(text: str, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """Parse INI text into a validated RunConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive

    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Malformed config file: {e}")

    data: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"Unknown config section: [{section}]")
        data[section] = dict(parser.items(section))

    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid run configuration: {problems}")


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
) -> RunConfig:
    """Load a run config file; with no path, defaults plus overrides."""
    if path is None:
        return parse_run_config("", overrides)

    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")

    return parse_run_config(config_path.read_text(encoding="utf-8"), overrides)


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def dump_run_config(config: RunConfig) -> str:
    """Render the full effective config as INI text."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str

    for section in SECTIONS:
        values = getattr(config, section).model_dump()
        parser[section] = {key: _format_value(value) for key, value in values.items()}

    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def config_overrides(seed: Optional[int] = None, out_dir: Optional[str] = None,
                     provider: Optional[str] = None, prompt: Optional[str] = None,
                     initial_image: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """Build the override mapping applied by CLI flags."""
    run: Dict[str, Any] = {}
    if prompt is not None:
        run["prompt"] = prompt
    if initial_image is not None:
        run["initial_image"] = initial_image
    if seed is not None:
        run["seed"] = seed
    if out_dir is not None:
        run["out_dir"] = out_dir
    if provider is not None:
        run["provider"] = provider
    return {"run": run} if run else {}


def describe_config(config: RunConfig) -> List[str]:
    """One-line summaries of the sections, for startup logging."""
    return [
        f"run: seed={config.run.seed} provider={config.run.provider} "
        f"{config.run.width}x{config.run.height}",
        f"trajectory: N={config.trajectory.num_cameras} M={config.trajectory.support_count} "
        f"step={config.trajectory.rotation_step}",
        f"train: iterations={config.train.iterations} ablation={config.train.ablation} "
        f"max_anchors={config.train.max_anchors}",
    ]
