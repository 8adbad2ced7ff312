import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.exceptions import ConfigError
from models.request import RUN_CONFIG_SECTIONS, RunConfig

load_dotenv()

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    # Application Configuration
    app_name: str = "PV Architecture Search API"
    app_version: str = "1.0.0"
    host: str = "0.0.0.0"
    port: int = 8090
    environment: str = "development"

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = "pvnas.log"

    # Search runs
    output_dir: Path = Path("runs")
    workers: int = 1

    # Directory holding finished run artifacts served by the API
    artifacts_dir: Path = Path("runs")

    def ensure_dirs(self) -> None:
        """Create the output directory and warn on settings that will bite later"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"Output directory is not writable: {self.output_dir}")
        if self.workers < 1:
            logger.warning(f"workers={self.workers} is not usable, falling back to 1")
            self.workers = 1
        if not self.artifacts_dir.exists():
            logger.warning(f"Artifacts directory does not exist yet: {self.artifacts_dir}")


settings = Settings()


def _nest(flat: Dict[str, Optional[str]]) -> Dict[str, object]:
    nested: Dict[str, object] = {}
    for key, value in flat.items():
        if value is None:
            raise ConfigError(f"Config key '{key}' has no value")
        if "." not in key:
            nested[key] = value
            continue
        section, name = key.split(".", 1)
        if section not in RUN_CONFIG_SECTIONS:
            raise ConfigError(f"Unknown config section '{section}' in key '{key}'")
        nested.setdefault(section, {})[name] = value
    return nested


def parse_run_config(flat: Dict[str, Optional[str]]) -> RunConfig:
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(f"Invalid config key '{key}': {first['msg']}")


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a `key = value` run file with dotted sections into a RunConfig"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    cfg = parse_run_config(dict(dotenv_values(path, interpolate=False)))
    # process settings fill in what the run file leaves out
    update = {}
    if "workers" not in cfg.model_fields_set:
        update["workers"] = max(settings.workers, 1)
    if "output_dir" not in cfg.model_fields_set:
        update["output_dir"] = settings.output_dir
    return cfg.model_copy(update=update) if update else cfg
