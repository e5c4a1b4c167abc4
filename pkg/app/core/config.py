from pathlib import Path
from typing import Any, Optional, Union

import yaml
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError
from app.schemas.run import RunConfig


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "runs"

    # Remote chain-of-thought backend
    COT_API_KEY_ENV: str = "COT_API_KEY"  # name of the variable holding the key, not the key
    COT_ENDPOINT: Optional[str] = None

    model_config = SettingsConfigDict(env_file=".env", extra="allow")


settings = Settings()


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        location = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key '{location}'")
        else:
            parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def parse_run_config(data: Optional[dict[str, Any]]) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(f"Invalid run config: {_format_validation_error(exc)}") from exc


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> RunConfig:
    """Read the YAML run config (all defaults when ``path`` is None) and apply CLI overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"Config file {path} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must contain a mapping at the top level")
        data = loaded or {}
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return parse_run_config(data)
