"""Run configuration module."""
import os
import re
from copy import deepcopy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from dotenv import load_dotenv

from subspaceops.errors import ConfigError, DataError
from subspaceops.lowrank import LrrConfig
from subspaceops.oos import DEFAULT_GAMMA, MODES
from subspaceops.sparse_coding import SparseSelfRepConfig
from subspaceops.spectral import EIGENSOLVERS

ALGORITHMS = ("sssc", "slrr", "ssc", "lrr")
WHOLE_DATA_CAP = 3000
_VARIABLE = re.compile(r"\$\{([^}]*)\}")


def resolve_value(value: Any, env_vars: Dict[str, str]) -> Any:
    """Replace ``${VAR}`` placeholders in strings, recursing into dicts and lists."""
    if isinstance(value, dict):
        return {key: resolve_value(item, env_vars) for key, item in value.items()}
    if isinstance(value, list):
        return [resolve_value(item, env_vars) for item in value]
    if isinstance(value, str) and "${" in value:
        def substitute(match):
            var_name = match.group(1)
            if var_name not in env_vars:
                raise ConfigError(f"env var {var_name} not found")
            return env_vars[var_name]
        return _VARIABLE.sub(substitute, value)
    return value


_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0", "")


def parse_flag(value: Any, name: str) -> bool:
    """Boolean setting; strings from ``${VAR}`` substitution are parsed by value."""
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        text = value.strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
    raise ConfigError(f"{name} must be true or false, got {value!r}")


@dataclass
class SpectralSettings:
    """Spectral clustering settings."""

    restarts: int = 20
    eigensolver: str = "auto"
    row_normalize: bool = True

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SpectralSettings':
        """Create settings from a dictionary."""
        settings = cls(
            restarts=int(data.get('restarts', cls.restarts)),
            eigensolver=str(data.get('eigensolver', cls.eigensolver)),
            row_normalize=parse_flag(
                data.get('row_normalize', cls.row_normalize), 'spectral.row_normalize'
            ),
        )
        if settings.eigensolver not in EIGENSOLVERS:
            raise ConfigError(f"unknown eigensolver {settings.eigensolver!r}")
        if settings.restarts < 1:
            raise ConfigError("spectral.restarts must be at least 1")
        return settings


@dataclass
class OutOfSampleSettings:
    """Out-of-sample coding settings."""

    gamma: float = DEFAULT_GAMMA
    mode: str = "ridge"
    regularized: bool = True
    delta: float = 1e-3

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OutOfSampleSettings':
        """Create settings from a dictionary."""
        settings = cls(
            gamma=float(data.get('gamma', cls.gamma)),
            mode=str(data.get('mode', cls.mode)),
            regularized=parse_flag(
                data.get('regularized', cls.regularized), 'oos.regularized'
            ),
            delta=float(data.get('delta', cls.delta)),
        )
        if settings.mode not in MODES:
            raise ConfigError(f"oos.mode must be one of {MODES}, got {settings.mode!r}")
        if not settings.gamma > 0:
            raise ConfigError("oos.gamma must be positive")
        return settings


@dataclass
class RunConfig:
    """Everything one clustering run needs."""

    algorithm: str
    k: int
    seed: int
    p: Optional[int] = None
    input: Optional[str] = None
    labels: Optional[str] = None
    output: Optional[str] = None
    has_header: bool = False
    pca_energy: Optional[float] = None
    ssc: Dict[str, Any] = field(default_factory=dict)
    lrr: Dict[str, Any] = field(default_factory=dict)
    spectral: SpectralSettings = field(default_factory=SpectralSettings)
    oos: OutOfSampleSettings = field(default_factory=OutOfSampleSettings)
    whole_data_cap: int = WHOLE_DATA_CAP
    n_jobs: int = 1
    name: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm must be one of {', '.join(ALGORITHMS)}, "
                f"got {self.algorithm!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.algorithm in ("sssc", "slrr") and self.p is None:
            raise ConfigError(f"{self.algorithm} needs the in-sample size p")
        if self.p is not None and self.p < 1:
            raise ConfigError(f"p must be positive, got {self.p}")
        if self.pca_energy is not None and not 0 < self.pca_energy <= 1:
            raise ConfigError(f"pca_energy must lie in (0, 1], got {self.pca_energy}")
        # fail fast on solver settings
        try:
            self.sparse_config()
            if self.lrr.get('lambda') != 'auto':
                self.lrr_config()
        except DataError as e:
            raise ConfigError(str(e)) from e

    def sparse_config(self) -> SparseSelfRepConfig:
        """Sparse coder settings."""
        return SparseSelfRepConfig.from_dict(self.ssc)

    def lrr_config(self, lambda_: Optional[float] = None) -> LrrConfig:
        """LRR solver settings; ``lambda_`` overrides an ``auto`` weight."""
        settings = dict(self.lrr)
        if lambda_ is not None:
            settings['lambda'] = lambda_
        if settings.get('lambda') == 'auto':
            raise ConfigError("lrr.lambda is 'auto' but no weight was derived")
        settings.pop('outlier_fraction', None)
        settings['seed'] = self.seed
        return LrrConfig.from_dict(settings)

    @property
    def auto_lambda(self) -> bool:
        """True when the LRR weight is derived from the outlier fraction."""
        return self.lrr.get('lambda') == 'auto'

    @property
    def outlier_fraction(self) -> float:
        """Assumed fraction of corrupted samples for the derived LRR weight."""
        return float(self.lrr.get('outlier_fraction', 0.05))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Create a RunConfig from a (merged, resolved) configuration dictionary."""
        missing = [key for key in ('k', 'seed') if data.get(key) is None]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
        data_section = data.get('data', {}) or {}
        preprocess = data.get('preprocess', {}) or {}
        p = data.get('p')
        pca_energy = preprocess.get('pca_energy')
        return cls(
            name=data.get('name'),
            algorithm=str(data.get('algorithm', 'sssc')),
            k=int(data['k']),
            seed=int(data['seed']),
            p=None if p is None else int(p),
            input=data_section.get('input'),
            labels=data_section.get('labels'),
            output=data_section.get('output'),
            has_header=parse_flag(
                data_section.get('has_header', False), 'data.has_header'
            ),
            pca_energy=None if pca_energy is None else float(pca_energy),
            ssc=dict(data.get('ssc', {}) or {}),
            lrr=dict(data.get('lrr', {}) or {}),
            spectral=SpectralSettings.from_dict(data.get('spectral', {}) or {}),
            oos=OutOfSampleSettings.from_dict(data.get('oos', {}) or {}),
            whole_data_cap=int(data.get('whole_data_cap', WHOLE_DATA_CAP)),
            n_jobs=int(data.get('n_jobs', 1)),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Echo of the configuration in a fixed key order."""
        return {
            'name': self.name,
            'algorithm': self.algorithm,
            'k': self.k,
            'p': self.p,
            'seed': self.seed,
            'data': {
                'input': self.input,
                'labels': self.labels,
                'output': self.output,
                'has_header': self.has_header,
            },
            'preprocess': {'pca_energy': self.pca_energy},
            'ssc': dict(self.ssc),
            'lrr': dict(self.lrr),
            'spectral': asdict(self.spectral),
            'oos': asdict(self.oos),
            'whole_data_cap': self.whole_data_cap,
            'n_jobs': self.n_jobs,
        }


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Deep merge two dictionaries, with override taking precedence."""
    result = deepcopy(base)

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        elif (
            key in result
            and isinstance(result[key], list)
            and isinstance(value, list)
            and result[key]
            and isinstance(result[key][0], dict)
            and 'name' in result[key][0]
        ):
            # lists of named items merge by name
            merged_list = deepcopy(result[key])
            override_map = {item['name']: item for item in value}
            for i, item in enumerate(merged_list):
                if item['name'] in override_map:
                    merged_list[i] = deep_merge(item, override_map[item['name']])
            for override_item in value:
                if not any(item['name'] == override_item['name'] for item in merged_list):
                    merged_list.append(override_item)
            result[key] = merged_list
        else:
            result[key] = deepcopy(value)
    return result


def load_config(
    base_path: Union[str, Path],
    env_path: Optional[Union[str, Path]] = None
) -> Dict[str, Any]:
    """Load and merge configuration from base and environment YAML files."""
    try:
        with open(base_path, 'r', encoding='utf-8') as f:
            base_config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {base_path}: {e}") from e

    if env_path:
        try:
            with open(env_path, 'r', encoding='utf-8') as f:
                env_config = yaml.safe_load(f) or {}
            return deep_merge(base_config, env_config)
        except FileNotFoundError:
            return base_config
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {env_path}: {e}") from e
    return base_config


def load_settings(
    filename: Optional[str] = None,
    base_path: Optional[str] = None,
    env: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """Merged settings: defaults < experiment file < env overlay < overrides.

    Without a file name only the overrides are used.
    """
    settings: Dict[str, Any] = {}
    if filename is not None:
        safe_base_path = base_path or ""
        file_parts = os.path.splitext(filename)
        if not file_parts[1]:
            raise ConfigError(f"Invalid experiment file '{filename}'")
        config_path = os.path.join(safe_base_path, filename)
        if not os.path.exists(config_path):
            raise ConfigError(f"Could not open experiment file {config_path}")
        env_path = (
            os.path.join(safe_base_path, f"{file_parts[0]}.{env}{file_parts[1]}")
            if env else None
        )
        settings = load_config(config_path, env_path)

    settings = deep_merge(settings, _drop_none(overrides or {}))
    load_dotenv()
    return resolve_value(settings, dict(os.environ))


def load_run_config(
    filename: Optional[str] = None,
    base_path: Optional[str] = None,
    env: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Load a run configuration from a YAML file plus command-line overrides."""
    return RunConfig.from_dict(load_settings(filename, base_path, env, overrides))


def _drop_none(values: Dict[str, Any]) -> Dict[str, Any]:
    """Remove unset flags so they do not mask config-file values."""
    cleaned: Dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, dict):
            nested = _drop_none(value)
            if nested:
                cleaned[key] = nested
        elif value is not None:
            cleaned[key] = value
    return cleaned


def parse_grid(text: str) -> List[float]:
    """Comma-separated numbers, e.g. ``"1e-7,1e-6,1e-5"``."""
    try:
        values = [float(item) for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid number list {text!r}") from e
    if not values:
        raise ConfigError("empty number list")
    return values
