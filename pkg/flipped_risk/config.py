"""Pipeline configuration: an INI file with one section per stage, overridable from the command line."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Type, TypeVar

from flipped_risk.errors import ConfigError
from flipped_risk.hbart import HbartConfig

T = TypeVar("T")

DEFAULT_SWEEP = (0.10, 0.15, 0.20, 0.25)


@dataclass(frozen=True)
class PathsConfig:
    data: Optional[Path] = None
    schema: Optional[Path] = None
    out: Path = Path("out")


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class FlagSettings:
    alpha: float = 0.1
    sweep: Tuple[float, ...] = DEFAULT_SWEEP


@dataclass(frozen=True)
class Stage2Config:
    """Lasso grid, cross-validation and design settings."""

    grid_size: int = 100
    lambda_min_ratio: float = 1e-4
    folds: int = 10
    seed: int = 0
    rule: str = "one-se"
    bound_weights: bool = False
    interactions: Tuple[Tuple[str, str], ...] = ()
    exclude: Tuple[str, ...] = ()
    workers: int = 0


@dataclass(frozen=True)
class EvaluateConfig:
    bins: int = 5
    geweke_first: float = 0.1
    geweke_last: float = 0.5


@dataclass(frozen=True)
class SynthConfig:
    n: int = 5_000
    seed: int = 0
    leak: float = 15.0
    noise_irrelevant: int = 0
    stem: str = "synth"


SECTIONS: Dict[str, type] = {
    "paths": PathsConfig,
    "split": SplitConfig,
    "stage1": HbartConfig,
    "flag": FlagSettings,
    "stage2": Stage2Config,
    "evaluate": EvaluateConfig,
    "synth": SynthConfig,
}

# [stage1] seed is the MCMC seed; it is not a sampler setting.
_STAGE1_SEED = "seed"


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in {"true", "yes", "1", "on"}:
        return True
    if lowered in {"false", "no", "0", "off"}:
        return False
    raise ConfigError(f"Setting {key!r} expects true/false, got {raw!r}")


def _split_list(raw: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in raw.replace("\n", ",").split(",") if part.strip())


def _coerce(key: str, raw: Any, default: Any) -> Any:
    """Convert an INI string to the type of the field's default."""
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if key == "scale_lambda":
            return None if raw.strip().lower() in {"", "auto"} else float(raw)
        if isinstance(default, Path) or key in {"data", "schema"}:
            return Path(raw.strip()) if raw.strip() else None
        if key == "interactions":
            pairs = []
            for item in _split_list(raw):
                left, sep, right = item.partition("*")
                if not sep or not left.strip() or not right.strip():
                    raise ConfigError(f"Interaction {item!r} must look like FACTOR_A*FACTOR_B")
                pairs.append((left.strip(), right.strip()))
            return tuple(pairs)
        if key == "sweep":
            return tuple(float(part) for part in _split_list(raw))
        if isinstance(default, tuple):
            return _split_list(raw)
        return raw.strip()
    except ValueError as error:
        raise ConfigError(f"Setting {key!r} could not be parsed from {raw!r}") from error


def build_section(cls: Type[T], section: str, values: Mapping[str, Any]) -> T:
    """Instantiate a section dataclass from raw values, rejecting unknown keys."""
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"Unknown setting [{section}] {key}")
        kwargs[key] = _coerce(key, raw, getattr(defaults, key))
    return replace(defaults, **kwargs)


@dataclass(frozen=True)
class Seeds:
    split: int = 0
    mcmc: int = 0
    cv: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    """All settings of one pipeline run."""

    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    stage1: HbartConfig = field(default_factory=HbartConfig)
    flag: FlagSettings = field(default_factory=FlagSettings)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    mcmc_seed: int = 0

    @property
    def seeds(self) -> Seeds:
        return Seeds(split=self.split.seed, mcmc=self.mcmc_seed, cv=self.stage2.seed)

    @classmethod
    def load(
        cls, path: Optional[Path | str] = None, overrides: Optional[Mapping[str, Any]] = None
    ) -> "PipelineConfig":
        """Read `path` (if given) and apply `section.key` overrides on top.

        Raises:
            ConfigError: Missing file, unknown section or key, or an unparseable value.
        """
        raw: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"Config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as error:
                raise ConfigError(f"Could not parse {path}: {error}") from error
            for section in parser.sections():
                if section not in SECTIONS:
                    raise ConfigError(f"Unknown config section [{section}] in {path}")
                raw[section].update(parser[section])
        for dotted, value in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or not key:
                raise ConfigError(f"Override {dotted!r} must look like section.key with a known section")
            raw[section][key] = value

        stage1 = dict(raw["stage1"])
        mcmc_seed = stage1.pop(_STAGE1_SEED, 0)
        try:
            mcmc_seed = int(mcmc_seed)
        except (TypeError, ValueError) as error:
            raise ConfigError(f"[stage1] seed must be an integer, got {mcmc_seed!r}") from error
        raw["stage1"] = stage1
        built = {name: build_section(SECTIONS[name], name, raw[name]) for name in SECTIONS}
        return cls(mcmc_seed=mcmc_seed, **built)

    def validate(self, need_data: bool = True) -> "PipelineConfig":
        """Check ranges and that referenced input files exist."""
        if need_data:
            for label, value in (("data", self.paths.data), ("schema", self.paths.schema)):
                if value is None:
                    raise ConfigError(f"[paths] {label} is not set")
                if not Path(value).is_file():
                    raise ConfigError(f"[paths] {label} file not found: {value}")
        if not 0.0 < self.flag.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.flag.alpha}")
        for alpha in self.flag.sweep:
            if not 0.0 < alpha < 1.0:
                raise ConfigError(f"sweep alpha must lie in (0, 1), got {alpha}")
        if not 0.0 < self.split.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.split.train_fraction}")
        if self.stage2.folds < 2:
            raise ConfigError(f"folds must be at least 2, got {self.stage2.folds}")
        if self.stage2.grid_size < 1:
            raise ConfigError("grid_size must be at least 1")
        if self.stage2.rule not in {"one-se", "max"}:
            raise ConfigError(f"rule must be 'one-se' or 'max', got {self.stage2.rule!r}")
        if self.evaluate.bins < 2:
            raise ConfigError("evaluate bins must be at least 2")
        self.stage1.validate()
        return self

    def with_alpha(self, alpha: float) -> "PipelineConfig":
        return replace(self, flag=replace(self.flag, alpha=alpha))

    def effective(self) -> Dict[str, Dict[str, Any]]:
        """JSON-ready view of every setting."""
        out: Dict[str, Dict[str, Any]] = {}
        for name in SECTIONS:
            out[name] = {key: _jsonable(value) for key, value in asdict(getattr(self, name)).items()}
        out["stage1"]["seed"] = self.mcmc_seed
        return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_jsonable(item) for item in value]
    return value


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """Turn repeated `section.key=value` strings into a mapping."""
    out: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out
