from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional, Dict
from pathlib import Path
import logging

from app.core.exceptions import ConfigError
from app.schemas.experiment import ExperimentConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    # ==================== Application ====================
    APP_NAME: str = "RankingMatch Studio"
    DEBUG: bool = False

    # ==================== Numerics ====================
    PRECISION: str = "float64"  # float32 is the opt-in speed mode
    STRICT_FINITE: bool = True

    # ==================== Output ====================
    OUTPUT_DIR: Optional[str] = None  # overrides output_dir of every experiment

    # ==================== Workers ====================
    AUGMENT_WORKERS: int = 1
    SHOW_PROGRESS: bool = False

    # ==================== Logging ====================
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


def validate_settings(current: Optional[Settings] = None) -> bool:
    """Validate process settings, logging every problem found"""
    current = current or settings
    errors = []

    if current.PRECISION not in ("float64", "float32"):
        errors.append(f"PRECISION must be float64 or float32, got {current.PRECISION!r}")

    if current.AUGMENT_WORKERS < 1:
        errors.append("AUGMENT_WORKERS must be at least 1")

    if current.PRECISION == "float32":
        logger.warning("Running in float32 mode; gradient checks expect float64")

    for error in errors:
        logger.error("Configuration error: %s", error)

    return len(errors) == 0


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse a flat `key = value` document; `#` starts a comment"""
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_number}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{line_number}: duplicate key {key!r}")
        values[key] = value
    return values


def build_experiment_config(values: Dict[str, str], source: str = "<config>") -> ExperimentConfig:
    """Validate raw key/values into an ExperimentConfig, applying the OUTPUT_DIR override"""
    try:
        config = ExperimentConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(loc) for loc in err['loc']) or 'config'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e

    # Re-read so an OUTPUT_DIR exported after import still applies
    override = Settings().OUTPUT_DIR
    if override:
        config = config.model_copy(update={"output_dir": override})
    return config


def load_experiment_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment config file"""
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return build_experiment_config(parse_key_values(text, source=str(config_path)), source=str(config_path))
