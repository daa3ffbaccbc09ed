"""
Schema backed run configuration.

Values resolve in order of precedence: command line overrides, then the JSON config file, then
the schema defaults.

"""

from __future__ import annotations

from collections.abc import Mapping
import copy
from dataclasses import dataclass
from functools import cached_property
import json
import logging
from pathlib import Path
from typing import Required, Sequence, TypedDict

import rich.repr

from gmmpc.model import Link, ModelKind
from gmmpc.mpc import Backend
from gmmpc.optim import InvalidTrainConfig, Optimizer, TrainConfig

log = logging.getLogger("gmmpc.config")


class SchemaDict(TypedDict, total=False):
    """Typing for schema data structure."""

    key: Required[str]
    title: Required[str]
    type: Required[str]
    help: str
    choices: list[str]
    default: object
    fields: list[SchemaDict]


type SettingsType = dict[str, object]


class ConfigError(Exception):
    """Base class for config related errors."""


class InvalidKey(ConfigError):
    """The key is not in the schema."""


class InvalidValue(ConfigError):
    """The value was not of the expected type."""


def parse_key(key: str) -> Sequence[str]:
    return key.split(".")


class Schema:
    def __init__(self, schema: list[SchemaDict]) -> None:
        self.schema = schema

    @cached_property
    def leaves(self) -> dict[str, SchemaDict]:
        """Every non-object entry, by dotted key."""
        leaves: dict[str, SchemaDict] = {}

        def collect(schema: list[SchemaDict], prefix: str) -> None:
            for sub_schema in schema:
                key = f"{prefix}{sub_schema['key']}"
                if sub_schema["type"] == "object":
                    collect(sub_schema.get("fields", []), f"{key}.")
                else:
                    leaves[key] = sub_schema

        collect(self.schema, "")
        return leaves

    @property
    def keys(self) -> list[str]:
        return list(self.leaves)

    @cached_property
    def defaults(self) -> SettingsType:
        settings: SettingsType = {}

        def set_defaults(schema: list[SchemaDict], settings: SettingsType) -> None:
            for sub_schema in schema:
                key = sub_schema["key"]
                if sub_schema["type"] == "object":
                    if fields := sub_schema.get("fields"):
                        sub_settings: SettingsType = {}
                        settings[key] = sub_settings
                        set_defaults(fields, sub_settings)
                elif (default := sub_schema.get("default")) is not None:
                    settings[key] = default

        set_defaults(self.schema, settings)
        return settings

    def get_default(self, key: str) -> object | None:
        """Get a default for the given key.

        Args:
            key: Key in dotted notation

        Returns:
            Default, or `None`.
        """
        try:
            return self.leaves[key].get("default")
        except KeyError:
            raise InvalidKey(f"Unknown config key {key!r}") from None

    def coerce(self, key: str, value: object) -> object:
        """Convert a value (possibly a string from the command line) to the key's type.

        Raises:
            InvalidKey: If the key is not in the schema.
            InvalidValue: If the value can't be converted.
        """
        try:
            schema = self.leaves[key]
        except KeyError:
            raise InvalidKey(f"Unknown config key {key!r}") from None
        value_type = schema["type"]
        try:
            match value_type:
                case "integer":
                    if isinstance(value, bool) or isinstance(value, float):
                        raise ValueError(value)
                    return int(value)  # type: ignore[call-overload]
                case "number":
                    if isinstance(value, bool):
                        raise ValueError(value)
                    return float(value)  # type: ignore[arg-type]
                case "boolean":
                    if isinstance(value, bool):
                        return value
                    if isinstance(value, str) and value.lower() in ("true", "false"):
                        return value.lower() == "true"
                    raise ValueError(value)
                case "choices":
                    choices = schema.get("choices", [])
                    if value not in choices:
                        raise InvalidValue(
                            f"{key!r} should be one of {', '.join(choices)}; found {value!r}"
                        )
                    return value
                case _:
                    if not isinstance(value, str):
                        raise ValueError(value)
                    return value
        except (TypeError, ValueError):
            raise InvalidValue(
                f"{key!r} should be of type {value_type}; found {value!r}"
            ) from None


class Settings:
    """Stores schema backed settings."""

    def __init__(self, schema: Schema, settings: SettingsType | None = None) -> None:
        self._schema = schema
        self._settings: SettingsType = {}
        for key, value in _flatten(settings or {}).items():
            self.set(key, value)

    @property
    def schema(self) -> Schema:
        return self._schema

    @property
    def json(self) -> str:
        """Resolved settings in JSON form."""
        resolved: SettingsType = {}
        for key in self._schema.keys:
            _set_nested(resolved, key, self.get(key))
        return json.dumps(resolved, indent=4, sort_keys=True, separators=(",", ": "))

    def get[ExpectType](self, key: str, expect_type: type[ExpectType] = object) -> ExpectType:
        """Get a value, or its default.

        Raises:
            InvalidKey: If the key is not in the schema.
            InvalidValue: If the value is not the expected type.
        """
        default = self._schema.get_default(key)
        sub_settings: object = self._settings
        for sub_key in parse_key(key):
            if not isinstance(sub_settings, dict) or sub_key not in sub_settings:
                sub_settings = default
                break
            sub_settings = sub_settings[sub_key]
        value = sub_settings
        if expect_type is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expect_type):
            raise InvalidValue(
                f"{key!r} is not of expected type {expect_type.__name__}; found {value!r}"
            )
        return value

    def set(self, key: str, value: object) -> None:
        """Set a value, converting it to the schema type.

        Args:
            key: Key in dot notation.
            value: New value.
        """
        value = self._schema.coerce(key, value)
        updated_settings = copy.deepcopy(self._settings)
        _set_nested(updated_settings, key, value)
        self._settings = updated_settings

    def update(self, overrides: Mapping[str, object]) -> None:
        """Apply overrides by dotted key, skipping `None` values."""
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)


def _set_nested(settings: SettingsType, key: str, value: object) -> None:
    *path, last = parse_key(key)
    for sub_key in path:
        sub_settings = settings.setdefault(sub_key, {})
        assert isinstance(sub_settings, dict)
        settings = sub_settings
    settings[last] = value


def _flatten(settings: Mapping[str, object], prefix: str = "") -> dict[str, object]:
    flat: dict[str, object] = {}
    for key, value in settings.items():
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


@rich.repr.auto
@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs to run."""

    graph: str
    data: str
    output_dir: Path
    seed: int
    kind: ModelKind
    link: Link
    gmm_branches: int
    gmm_bias_spread: float
    mpc_backend: Backend
    train: TrainConfig
    early_stopping: bool
    folds: int
    eval_epsilon: float
    jobs: int

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise InvalidValue(f"Cross validation needs at least 2 folds; found {self.folds}")
        if self.jobs < 1:
            raise InvalidValue(f"Jobs must be at least 1; found {self.jobs}")
        if self.gmm_branches < 1:
            raise InvalidValue(
                f"Ordinary GMM needs at least 1 branch; found {self.gmm_branches}"
            )
        if self.train.optimizer == "full-em" and self.link != "linear":
            raise ConfigError(
                "The full-em optimizer needs the linear link; closed-form updates"
                " only exist when branch means are linear in their inputs"
            )

    @classmethod
    def from_settings(cls, settings: Settings) -> RunConfig:
        """Build a run configuration from resolved settings.

        Raises:
            ConfigError: If the settings are inconsistent.
        """
        get = settings.get
        try:
            train = TrainConfig(
                outer_iterations=get("train.outer_iterations", int),
                inner_iterations=get("train.inner_iterations", int),
                batch_size=get("train.batch_size", int),
                learning_rate=get("train.learning_rate", float),
                epsilon=get("train.epsilon", float),
                seed=get("seed", int),
                adam_beta1=get("train.adam_beta1", float),
                adam_beta2=get("train.adam_beta2", float),
                adam_eps=get("train.adam_eps", float),
                optimizer=get("train.optimizer", str),  # type: ignore[arg-type]
                patience=get("train.patience", int),
            )
        except InvalidTrainConfig as error:
            raise ConfigError(f"Invalid training settings; {error}") from None
        return cls(
            graph=get("graph", str),
            data=get("data", str),
            output_dir=Path(get("output_dir", str)),
            seed=get("seed", int),
            kind=get("model.kind", str),  # type: ignore[arg-type]
            link=get("model.link", str),  # type: ignore[arg-type]
            gmm_branches=get("model.gmm_branches", int),
            gmm_bias_spread=get("model.gmm_bias_spread", float),
            mpc_backend=get("model.mpc_backend", str),  # type: ignore[arg-type]
            train=train,
            early_stopping=get("train.early_stopping", bool),
            folds=get("eval.folds", int),
            eval_epsilon=get("eval.epsilon", float),
            jobs=get("eval.jobs", int),
        )

    @property
    def optimizer(self) -> Optimizer:
        return self.train.optimizer

    def require(self, *names: str) -> None:
        """Check that path settings (`"graph"`, `"data"`) are given.

        Raises:
            ConfigError: If a path is missing.
        """
        for name in names:
            if not getattr(self, name):
                raise ConfigError(
                    f"No {name} given; set {name!r} in the config file, or use --{name}"
                )
        if "data" in names and not Path(self.data).is_file():
            raise ConfigError(f"Data file {self.data!r} does not exist")


def read_config_file(path: Path | str) -> SettingsType:
    """Read a JSON config file.

    Raises:
        ConfigError: If the file can't be read, or is not a JSON object.
    """
    path = Path(path)
    try:
        config_json = json.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise ConfigError(f"Failed to read config {str(path)!r}; {error}") from None
    except json.JSONDecodeError as error:
        raise ConfigError(
            f"Config {str(path)!r} is not valid JSON; {error.msg} (line {error.lineno})"
        ) from None
    if not isinstance(config_json, dict):
        raise ConfigError(f"Config {str(path)!r} should contain a JSON object")
    return config_json


def load_settings(
    path: Path | str | None = None, overrides: Mapping[str, object] | None = None
) -> Settings:
    """Resolve settings from the schema, an optional config file, and overrides."""
    from gmmpc.config_schema import SCHEMA

    schema = Schema(SCHEMA)
    settings = Settings(schema, read_config_file(path) if path is not None else None)
    if overrides:
        settings.update(overrides)
    return settings


def load_config(
    path: Path | str | None = None, overrides: Mapping[str, object] | None = None
) -> RunConfig:
    """Load a run configuration.

    Args:
        path: Optional JSON config file.
        overrides: Values by dotted key that take precedence over the file (`None` values
            are ignored).

    Raises:
        ConfigError: If the configuration is invalid.
    """
    run_config = RunConfig.from_settings(load_settings(path, overrides))
    log.debug("config %r", run_config)
    return run_config
