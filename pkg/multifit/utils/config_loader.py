# utils/config_loader.py
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Mapping

import yaml
from dotenv import load_dotenv

from multifit.exception import ConfigError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network.config import DropoutProfile, ModelConfig
from multifit.utils.text_io import read_utf8

if TYPE_CHECKING:
    from multifit.training.config import TrainConfig

SEED_ENV = "MULTIFIT_SEED"

# list-valued keys whose items are integers; every other list holds floats
_INT_LISTS = {"model.qrnn_widths"}


def _package_root() -> Path:
    # .../multifit/utils/config_loader.py -> parents[1] == .../multifit
    return Path(__file__).resolve().parents[1]


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def load_defaults(config_path: str | None = None) -> dict[str, Any]:
    """
    Packaged YAML defaults flattened to dotted keys.
    Priority: explicit arg > CONFIG_PATH env > <package>/config/config.yaml
    """
    env_path = os.getenv("CONFIG_PATH")
    if config_path is None:
        config_path = env_path or str(_package_root() / "config" / "config.yaml")

    path = Path(config_path)
    if not path.is_absolute() and not path.exists():
        path = _package_root() / path

    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    return _flatten(yaml.safe_load(read_utf8(path, ConfigError)) or {})


# ----------------------------------------------------------------------------------------------------------------------
def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, raw: str, default: Any, where: str = "") -> Any:
    """Parse ``raw`` with the type of ``default``; errors name the key and location."""
    raw = raw.strip()
    at = f"{where}: " if where else ""
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            item = int if key in _INT_LISTS else float
            return [item(part) for part in raw.split(",") if part.strip()]
        return raw.strip('"')
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"{at}cannot parse value {raw!r} for key {key!r} (expected {kind})")


@dataclass
class RunConfig:
    """Effective settings of one run, keyed by dotted names."""

    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}")

    def __contains__(self, key: str) -> bool:
        return key in self.values

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def with_overrides(self, overrides: Mapping[str, Any], source: str = "flag") -> "RunConfig":
        values, sources = dict(self.values), dict(self.sources)
        for key, value in overrides.items():
            if key not in values:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            values[key] = parse_value(key, value, values[key], source) if isinstance(value, str) else value
            sources[key] = source
        return RunConfig(values, sources)

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def model_config(self) -> ModelConfig:
        return build_model_config(self.values)

    def train_config(self) -> "TrainConfig":
        from multifit.training.config import TrainConfig

        train = self.section("train")
        train.update(self.section("schedule"))
        try:
            return TrainConfig(**train)
        except TypeError as e:
            raise ConfigError(f"train/schedule settings do not match TrainConfig: {e}")

    def settings(self) -> dict[str, str]:
        return {k: format_value(v) for k, v in sorted(self.values.items())}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.settings().items())


def build_model_config(values: Mapping[str, Any]) -> ModelConfig:
    model = {k[len("model."):]: v for k, v in values.items() if k.startswith("model.")}
    dropout = {k[len("dropout."):]: model.pop(k) for k in list(model) if k.startswith("dropout.")}
    widths = model.pop("qrnn_widths", None)
    try:
        return ModelConfig(
            qrnn_widths=tuple(widths) if widths else None,
            dropout=DropoutProfile(**dropout),
            **model,
        )
    except TypeError as e:
        raise ConfigError(f"model settings do not match ModelConfig: {e}")


def model_settings(config: ModelConfig) -> dict[str, Any]:
    """The ``model.*`` keys describing ``config`` (inverse of build_model_config)."""
    out: dict[str, Any] = {
        "model.vocab_size": config.vocab_size,
        "model.emb_dim": config.emb_dim,
        "model.hidden_dim": config.hidden_dim,
        "model.n_layers": config.n_layers,
        "model.qrnn_widths": list(config.qrnn_widths),
        "model.cell": config.cell,
        "model.head_hidden": config.head_hidden,
        "model.bn_momentum": config.bn_momentum,
        "model.init_range": config.init_range,
    }
    for name in ("embedding", "input", "hidden", "output"):
        out[f"model.dropout.{name}"] = getattr(config.dropout, name)
    return out


def parse_settings_text(text: str, source: str) -> list[tuple[int, str, str]]:
    """``key = value`` lines -> (line number, key, raw value); ``#`` starts a comment."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if " #" in stripped:
            stripped = stripped.split(" #", 1)[0].rstrip()
        key, sep, raw = stripped.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {line!r}")
        entries.append((lineno, key.strip(), raw.strip()))
    return entries


# ----------------------------------------------------------------------------------------------------------------------
def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | Iterable[str] | None = None,
    defaults_path: str | None = None,
) -> RunConfig:
    """
    Effective run configuration.
    Precedence: YAML defaults < run file < MULTIFIT_SEED (seed only) < flag overrides.
    Overrides are a mapping or ``key=value`` strings.
    """
    load_dotenv()
    values = load_defaults(defaults_path)
    sources = {k: "default" for k in values}
    config = RunConfig(values, sources)

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Run config file not found: {path}")
        text = read_utf8(path, ConfigError)
        for lineno, key, raw in parse_settings_text(text, str(path)):
            where = f"{path} line {lineno}"
            if key not in config.values:
                log.error("Unknown config key", key=key, line=lineno, path=str(path))
                raise ConfigError(f"{where}: unknown config key {key!r}")
            config.values[key] = parse_value(key, raw, config.values[key], where)
            config.sources[key] = where

    env_seed = os.getenv(SEED_ENV)
    if env_seed:
        config = config.with_overrides({"seed": env_seed}, source=SEED_ENV)

    if overrides:
        if not isinstance(overrides, Mapping):
            pairs = {}
            for item in overrides:
                key, sep, raw = item.partition("=")
                if not sep:
                    raise ConfigError(f"override {item!r} is not of the form key=value")
                pairs[key.strip()] = raw.strip()
            overrides = pairs
        config = config.with_overrides(overrides, source="flag")

    log.info("Configuration resolved", overridden={k: v for k, v in config.sources.items() if v != "default"})
    return config
