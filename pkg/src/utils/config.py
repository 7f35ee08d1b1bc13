"""Configuration management for the TODM Supernet toolkit."""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.supernet.search_space import SearchSpace
from src.utils.errors import ConfigError


class _Section(BaseModel):
    """Base for config sections: unknown keys are errors, not silently ignored."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class AppConfig(_Section):
    """Application configuration."""

    name: str = Field(default="TODM Supernet")
    version: str = Field(default="0.1.0")
    debug: bool = Field(default=False)


class PathsConfig(_Section):
    """Path configuration."""

    data_dir: Path = Field(default=Path("data"))
    corpus_dir: Path = Field(default=Path("data/corpus"))
    runs_dir: Path = Field(default=Path("runs"))
    logs_dir: Path = Field(default=Path("logs"))
    benchmark_dir: Path = Field(default=Path("benchmark_results"))

    def ensure_directories(self) -> None:
        """Create all required directories if they don't exist."""
        for field_name in type(self).model_fields:
            path = getattr(self, field_name)
            if field_name.endswith("_dir"):
                path.mkdir(parents=True, exist_ok=True)


class CorpusConfig(_Section):
    """Synthetic corpus configuration."""

    seed: int = Field(default=7)
    vocab_size: int = Field(default=17, description="Including blank at index 0")
    d_in: int = Field(default=16)
    noise_std: float = Field(default=0.3)
    frames_per_token: Tuple[int, int] = Field(default=(2, 4))
    tokens_per_utterance: Tuple[int, int] = Field(default=(3, 8))
    n_train: int = Field(default=2000)
    n_dev: int = Field(default=200)
    n_test: int = Field(default=200)

    @field_validator("frames_per_token", "tokens_per_utterance")
    @classmethod
    def _ordered_range(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        low, high = value
        if low < 1 or high < low:
            raise ValueError(f"range must satisfy 1 <= low <= high, got {value}")
        return value


class ModelConfig(_Section):
    """Encoder/predictor/joiner dimensions."""

    d_model: int = Field(default=64, ge=1)
    predictor_dim: int = Field(default=64, ge=1)
    joiner_dim: int = Field(default=64, ge=1)
    init_seed: int = Field(default=0)


class TrainConfig(_Section):
    """Supernet training schedule and loss configuration."""

    run_name: str = Field(default="supernet")
    mode: Literal["supernet", "individual"] = Field(default="supernet")
    individual_config: str = Field(
        default="max", description="Config key trained alone when mode is individual"
    )
    epochs: int = Field(default=18, ge=1)
    lr: float = Field(default=0.006, gt=0)
    anneal_start_epoch: int = Field(default=6, ge=0)
    anneal_factor: float = Field(default=0.96, gt=0, le=1)
    lambda_initial: float = Field(default=1.0, ge=0)
    lambda_late: float = Field(default=0.1, ge=0)
    optimizer_switch_fraction: float = Field(default=2 / 3, ge=0, le=1)
    kd_mode: Literal["none", "kld", "alphaD"] = Field(default="alphaD")
    kd_j: int = Field(default=10, ge=2)
    alpha_minus: float = Field(default=-1.0)
    alpha_plus: float = Field(default=1.0)
    alpha_beta: float = Field(default=5.0, gt=1)
    batch_size: int = Field(default=16, ge=4)
    seed: int = Field(default=0)
    base_dropout: float = Field(default=0.1, ge=0, le=1)
    adaptive_dropout: bool = Field(default=True)
    weight_decay: float = Field(default=0.01, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    rms_min: float = Field(default=1e-5, gt=0)
    grad_clip_norm: Optional[float] = Field(default=5.0)
    eval_every_epoch: bool = Field(default=True)
    eval_max_utterances: Optional[int] = Field(default=None)

    @field_validator("batch_size")
    @classmethod
    def _divisible_by_four(cls, value: int) -> int:
        if value % 4 != 0:
            raise ValueError(f"batch_size must be divisible by 4, got {value}")
        return value


class SearchParams(_Section):
    """Evolutionary search configuration."""

    population_size: int = Field(default=32, ge=2)
    generations: int = Field(default=20, ge=0)
    mutation_rate: float = Field(default=0.2, ge=0, le=1)
    crossover_rate: float = Field(default=0.5, ge=0, le=1)
    seed: int = Field(default=0)
    constraints: List[Union[int, str]] = Field(
        default_factory=lambda: ["30%", "50%", "100%"],
        description="Byte budgets; entries ending in '%' are percent of the max config size",
    )
    fitness_decoder: Literal["greedy", "beam5"] = Field(default="greedy")
    report_decoder: Literal["greedy", "beam5"] = Field(default="beam5")
    beam_size: int = Field(default=5, ge=1)
    max_symbols_per_frame: int = Field(default=3, ge=1)
    exhaustive_cap: int = Field(default=10000, ge=1)
    penalty: float = Field(default=10.0, gt=0)
    max_utterances: Optional[int] = Field(default=None)
    workers: int = Field(default=1, ge=1, description="Threads evaluating population members")

    @field_validator("constraints")
    @classmethod
    def _nonempty(cls, value: List[Union[int, str]]) -> List[Union[int, str]]:
        if not value:
            raise ValueError("at least one size constraint is required")
        for item in value:
            if isinstance(item, str):
                text = item.strip()
                number = text[:-1] if text.endswith("%") else text
                try:
                    float(number)
                except ValueError as exc:
                    raise ValueError(f"unparseable size constraint {item!r}") from exc
        return value


class BenchmarkConfig(_Section):
    """Benchmark configuration."""

    enabled: bool = Field(default=True, description="Write the pipeline profile JSON")


class Config(BaseSettings):
    """Main configuration class that loads from YAML and environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="TODM_",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="forbid",
    )

    app: AppConfig = Field(default_factory=AppConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    search_space: SearchSpace = Field(default_factory=SearchSpace)
    train: TrainConfig = Field(default_factory=TrainConfig)
    search: SearchParams = Field(default_factory=SearchParams)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    @model_validator(mode="after")
    def _cross_section_checks(self) -> "Config":
        if self.train.kd_j >= self.corpus.vocab_size:
            raise ValueError(
                f"train.kd_j={self.train.kd_j} must be smaller than "
                f"corpus.vocab_size={self.corpus.vocab_size}"
            )
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        """Validate a nested dictionary, reporting the first bad key by dotted path.

        Args:
            data: Nested configuration mapping

        Returns:
            Config instance

        Raises:
            ConfigError: If any value is missing, unknown or malformed
        """
        try:
            return cls(**(data or {}))
        except ValidationError as exc:
            first = exc.errors()[0]
            key = ".".join(str(part) for part in first["loc"]) or None
            raise ConfigError(first["msg"], key=key) from exc

    @classmethod
    def from_yaml(cls, config_path: str = "config/config.yaml") -> "Config":
        """Load configuration from YAML file and merge with environment variables.

        Args:
            config_path: Path to the YAML configuration file

        Returns:
            Config instance with merged settings

        Raises:
            FileNotFoundError: If the file does not exist
            ConfigError: If the file is not valid YAML or fails validation
        """
        config_file = Path(config_path)

        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        try:
            with open(config_file, "r") as f:
                yaml_config = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {config_path}: {exc}") from exc

        if yaml_config is not None and not isinstance(yaml_config, dict):
            raise ConfigError(f"top level of {config_path} must be a mapping")

        return cls.from_dict(yaml_config or {})

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible nested dictionary of every setting."""
        return self.model_dump(mode="json")

    def to_yaml(self, config_path: Union[str, Path]) -> Path:
        """Write the configuration as YAML.

        Args:
            config_path: Destination file

        Returns:
            Path written
        """
        path = Path(config_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        return path

    def setup_directories(self) -> None:
        """Create all required directories."""
        self.paths.ensure_directories()

    def run_dir(self, run_name: Optional[str] = None) -> Path:
        """Directory holding checkpoints and logs of one training run."""
        return self.paths.runs_dir / (run_name or self.train.run_name)


def apply_overrides(config: Config, overrides: Sequence[str]) -> Config:
    """Return a copy of ``config`` with ``section.key=value`` overrides applied.

    Values are parsed as YAML scalars, so ``train.epochs=2`` yields an int and
    ``search.constraints=[10%, 100%]`` a list.

    Args:
        config: Base configuration
        overrides: Override expressions

    Returns:
        New validated Config

    Raises:
        ConfigError: If an expression is malformed or names an unknown key
    """
    data = config.to_dict()
    for expression in overrides:
        if "=" not in expression:
            raise ConfigError(f"override must look like section.key=value, got {expression!r}")
        dotted, raw_value = expression.split("=", 1)
        dotted = dotted.strip()
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError("unknown configuration key", key=dotted)
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError("unknown configuration key", key=dotted)
        try:
            node[parts[-1]] = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"unparseable value {raw_value!r}", key=dotted) from exc
    return Config.from_dict(data)


# Global configuration instance
_config: Optional[Config] = None


def get_config(reload: bool = False, config_path: str = "config/config.yaml") -> Config:
    """Get the global configuration instance.

    Args:
        reload: If True, reload configuration from file
        config_path: YAML file to read when (re)loading

    Returns:
        Config instance
    """
    global _config

    if _config is None or reload:
        try:
            _config = Config.from_yaml(config_path)
        except FileNotFoundError:
            # Fallback to default configuration
            _config = Config()
        _config.setup_directories()

    return _config


def set_config(config: Config) -> Config:
    """Install ``config`` as the global instance (used by the CLI after overrides)."""
    global _config
    _config = config
    return _config
