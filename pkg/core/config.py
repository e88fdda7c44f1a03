import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Type, TypeVar

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings

from core.errors import ConfigError

load_dotenv()

ModelT = TypeVar("ModelT", bound=BaseModel)


class Settings(BaseSettings):
    # Output directory override; --out still wins
    NAGUMO_OUTPUT_DIR: Optional[str] = os.getenv("NAGUMO_OUTPUT_DIR")

    def output_dir(self, subcommand: str, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if self.NAGUMO_OUTPUT_DIR:
            return Path(self.NAGUMO_OUTPUT_DIR) / subcommand
        return Path("runs") / subcommand


settings = Settings()


# --- Helper Functions ---

def parse_value(raw: Optional[str]) -> Any:
    """
    Interpret one config value.

    - JSON literals (numbers, lists, true/false/null) are decoded.
    - Bare comma-separated text becomes a list of strings; pydantic coerces the items.
    - Anything else stays a string.
    """
    if raw is None:
        return None
    text = raw.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def nest_keys(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """Turn dotted keys (``sim.params.a``) into nested dictionaries."""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"empty config key {key!r}")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"config key {key!r} conflicts with a scalar value")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"config key {key!r} conflicts with a section")
        node[parts[-1]] = value
    return nested


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value
    return overrides


def read_config_file(path: Path) -> Dict[str, Optional[str]]:
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return dict(dotenv_values(path))


def load_run_config(
    model: Type[ModelT],
    config_path: Optional[Path] = None,
    overrides: Iterable[str] = (),
) -> ModelT:
    """Merge a key-value config file with ``key=value`` overrides and validate into ``model``."""
    flat: Dict[str, Optional[str]] = {}
    if config_path is not None:
        flat.update(read_config_file(Path(config_path)))
    flat.update(parse_overrides(overrides))
    data = nest_keys({k: parse_value(v) for k, v in flat.items()})
    return validate_config(model, data)


def validate_config(model: Type[ModelT], data: Mapping[str, Any]) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
