import glob
import logging
import math
import os
import re
from typing import Any, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator

from engawa._utils import update_dict
from engawa.core import ConfigError
from engawa.densities import preset
from engawa.generator import ObservableError, observable
from engawa.geometry import make_geometry
from engawa.simulator import Girsanov, Layout, Scheme, SimConfig

logger = logging.getLogger('engawa.config')

SCHEMA_VERSION = 1
OUTPUT_DIR_VARIABLE = 'ENGAWA_OUTPUT_DIR'


class MissingEnvVarError(ConfigError):
    pass


class ConfigIssue(ConfigError):
    """A problem with one key of the configuration document."""

    def __init__(self, key: str, message: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        self.detail = message
        where = f' (line {line})' if line is not None else ''
        super().__init__(f'{key}{where}: {message}')


class UnknownKey(ConfigIssue):
    pass


class DuplicateKey(UnknownKey):
    def __init__(self, key: str, first_line: int, second_line: int):
        self.lines = (first_line, second_line)
        super().__init__(key, f'duplicate key, first defined on line {first_line}', second_line)


class MissingKey(ConfigIssue):
    pass


class RangeError(ConfigIssue):
    pass


class ConfigErrors(ConfigError):
    def __init__(self, errors: list[ConfigIssue]):
        self.errors = errors
        super().__init__('\n'.join(str(e) for e in errors))


class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    schema_version: int = Field(default=SCHEMA_VERSION, description='Version of the configuration schema')

    # geometry
    geometry: Literal['interval', 'ball'] = Field(description='Kind of domain')
    dimension: int = Field(default=2, description='Space dimension of a ball (an interval is always 1-d)')
    radius: float = Field(default=1.0, description='Radius of the ball')
    center: Optional[list[float]] = Field(default=None, description='Center of the ball, the origin if not given')
    a: float = Field(default=0.0, description='Left endpoint of the interval')
    b: float = Field(default=1.0, description='Right endpoint of the interval')
    tolerance: float = Field(default=1e-9, description='Absolute tolerance of every is-on-boundary decision')

    # particles and densities
    n_particles: int = Field(default=1, description='Number of particles')
    density: Literal['uniform', 'gaussian-alpha', 'lj', 'soft'] = Field(default='uniform', description='Density preset')
    alpha: float = Field(default=1.0, description='Constant interior density')
    beta: float = Field(default=1.0, description='Constant boundary density, raised to beta_floor if smaller')
    beta_floor: float = Field(default=1e-12, description='Smallest boundary density used, the reflecting limit')
    lj_epsilon: float = Field(default=0.1, description='Lennard-Jones well depth')
    lj_c: float = Field(default=0.1, description='Lennard-Jones length scale')
    r_min: Optional[float] = Field(default=None, description='Lennard-Jones cutoff floor, 0.05 * lj_c if not given')
    clamp_at_cutoff: bool = Field(default=False, description='Clamp the Lennard-Jones force below r_min instead of failing')
    soft_amplitude: float = Field(default=1.0, description='Amplitude of the smooth bounded pair potential')
    soft_width: float = Field(default=0.3, description='Width of the smooth bounded pair potential')
    delta: Literal[0, 1] = Field(default=0, description='Tangential diffusion on the boundary (1) or not (0)')

    # scheme
    horizon: float = Field(description='Time horizon T')
    seed: int = Field(description='Seed of the random streams')
    scheme: Literal['regularized_euler', 'time_change'] = Field(default='regularized_euler', description='Time stepping engine')
    dt: float = Field(default=1e-3, description='Time step')
    epsilon: float = Field(default=1e-2, description='Width of the sticky layer of the regularized scheme')
    stride: int = Field(default=10, description='Store every stride-th step')
    paths: int = Field(default=1, description='Number of independent paths')
    layout: Literal['grid', 'uniform-interior'] = Field(default='grid', description='Initial layout when no start is given')
    start: Optional[list[list[float]]] = Field(default=None, description='Explicit start positions, one list per particle')
    girsanov: Literal['off', 'reweight'] = Field(default='off', description='Put the interaction into Girsanov weights instead of the drift')
    freeze_escape_drift: bool = Field(default=False, description='Switch off the inward escape drift (test hook)')
    debug: bool = Field(default=False, description='Check the state invariants after every step')

    # outputs
    observables: list[str] = Field(default_factory=list, description='Catalog observables to average and test')
    martingale_horizon: Optional[float] = Field(default=None, description='Time t of the martingale residual table, the horizon if not given')
    histogram_bins: int = Field(default=36, description='Bins of the boundary sojourn histogram')
    output_dir: str = Field(default='output', description='Directory the artifacts are written to')

    @field_validator('*', mode='before')
    @classmethod
    def set_env_vars(cls, value: Any) -> Any:
        if isinstance(value, str):
            variables = re.findall(r'\${env:([^ }]+)}', value)
            try:
                for variable in variables:
                    value = value.replace(f'${{env:{variable}}}', os.environ[variable])
            except KeyError as e:
                raise MissingEnvVarError(f'The environment variable {e.args[0]} is not defined') from e
        return value

    @field_validator('schema_version')
    @classmethod
    def check_version(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema version {value}, this tool reads version {SCHEMA_VERSION}')
        return value

    @field_validator('dimension', 'n_particles', 'stride', 'paths', 'histogram_bins')
    @classmethod
    def check_positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError('must be a positive integer')
        return value

    @field_validator('radius', 'tolerance', 'alpha', 'beta_floor', 'lj_epsilon', 'lj_c', 'soft_width', 'dt')
    @classmethod
    def check_positive(cls, value: float) -> float:
        if not (value > 0 and math.isfinite(value)):
            raise ValueError('must be a positive number')
        return value

    @field_validator('beta', 'horizon', 'soft_amplitude')
    @classmethod
    def check_non_negative(cls, value: float) -> float:
        if not (value >= 0 and math.isfinite(value)):
            raise ValueError('must be a non-negative number')
        return value

    @field_validator('seed')
    @classmethod
    def check_seed(cls, value: int) -> int:
        if not 0 <= value < 2 ** 64:
            raise ValueError('must be a 64-bit unsigned integer')
        return value

    @field_validator('b')
    @classmethod
    def check_interval(cls, value: float, info: ValidationInfo) -> float:
        if 'a' in info.data and not info.data['a'] < value:
            raise ValueError('the interval needs a < b')
        return value

    @field_validator('center')
    @classmethod
    def check_center(cls, value: Optional[list[float]], info: ValidationInfo) -> Optional[list[float]]:
        if value is not None and 'dimension' in info.data and len(value) != info.data['dimension']:
            raise ValueError(f'needs {info.data["dimension"]} components')
        return value

    @field_validator('r_min')
    @classmethod
    def check_r_min(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError('must be a positive number')
        return value

    @field_validator('delta')
    @classmethod
    def check_delta(cls, value: int, info: ValidationInfo) -> int:
        if value == 1 and info.data.get('geometry') == 'interval':
            raise ValueError('tangential boundary diffusion (delta=1) needs a ball in dimension d >= 2')
        return value

    @field_validator('dimension')
    @classmethod
    def check_dimension(cls, value: int, info: ValidationInfo) -> int:
        if info.data.get('geometry') == 'ball' and value < 2:
            raise ValueError('a ball needs dimension d >= 2')
        return value

    @field_validator('dt')
    @classmethod
    def check_dt(cls, value: float, info: ValidationInfo) -> float:
        horizon = info.data.get('horizon')
        if horizon is not None and horizon > 0 and value > horizon:
            raise ValueError(f'must not exceed the horizon T={horizon}')
        return value

    @field_validator('epsilon')
    @classmethod
    def check_epsilon(cls, value: float, info: ValidationInfo) -> float:
        if not value > 0:
            raise ValueError('must be a positive number')
        if info.data.get('geometry') == 'ball' and 'radius' in info.data and not value < info.data['radius']:
            raise ValueError('the sticky layer must be thinner than the radius')
        if info.data.get('geometry') == 'interval' and 'a' in info.data and 'b' in info.data and not value < 0.5 * (info.data['b'] - info.data['a']):
            raise ValueError('the sticky layer must be thinner than half the interval')
        return value

    @field_validator('scheme')
    @classmethod
    def check_scheme(cls, value: str, info: ValidationInfo) -> str:
        if value == 'time_change':
            if info.data.get('n_particles', 1) != 1:
                raise ValueError('the time change construction covers a single particle only')
            if info.data.get('delta', 0) != 0:
                raise ValueError('the time change construction needs delta=0')
        return value

    @field_validator('start')
    @classmethod
    def check_start(cls, value: Optional[list[list[float]]], info: ValidationInfo) -> Optional[list[list[float]]]:
        if value is None:
            return value
        n = info.data.get('n_particles')
        d = 1 if info.data.get('geometry') == 'interval' else info.data.get('dimension')
        if n is not None and len(value) != n:
            raise ValueError(f'needs one position per particle ({n})')
        if d is not None and any(len(p) != d for p in value):
            raise ValueError(f'every position needs {d} components')
        return value

    @field_validator('girsanov')
    @classmethod
    def check_girsanov(cls, value: str, info: ValidationInfo) -> str:
        if value == 'reweight' and info.data.get('scheme') == 'time_change':
            raise ValueError('reweighting needs the regularized scheme')
        return value

    @field_validator('martingale_horizon')
    @classmethod
    def check_martingale_horizon(cls, value: Optional[float], info: ValidationInfo) -> Optional[float]:
        if value is None:
            return value
        if value < 0:
            raise ValueError('must be a non-negative number')
        horizon = info.data.get('horizon')
        if horizon is not None and value > horizon:
            raise ValueError(f'must not exceed the horizon T={horizon}')
        return value

    @field_validator('observables')
    @classmethod
    def check_observables(cls, value: list[str], info: ValidationInfo) -> list[str]:
        n = info.data.get('n_particles')
        d = 1 if info.data.get('geometry') == 'interval' else info.data.get('dimension')
        if n is None or d is None:
            return value
        for name in value:
            try:
                observable(name, n, d)
            except ObservableError as e:
                raise ValueError(str(e)) from e
        return value

    @property
    def space_dimension(self) -> int:
        return 1 if self.geometry == 'interval' else self.dimension

    @property
    def effective_beta(self) -> float:
        return max(self.beta, self.beta_floor)


REQUIRED_EXAMPLE = {'geometry': 'ball', 'horizon': 1.0, 'seed': 0}


def _key_lines(text: str) -> tuple[dict[str, int], list[ConfigIssue]]:
    """Line of every top-level key, plus diagnostics for duplicated keys."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    lines: dict[str, int] = {}
    duplicates: list[ConfigIssue] = []
    if not isinstance(root, yaml.MappingNode):
        return lines, duplicates

    for key_node, _ in root.value:
        key = str(key_node.value)
        line = key_node.start_mark.line + 1
        if key in lines:
            duplicates.append(DuplicateKey(key, lines[key], line))
        else:
            lines[key] = line
    return lines, duplicates


def _issue_from(error: dict, lines: dict[str, int]) -> ConfigIssue:
    key = str(error['loc'][0]) if error['loc'] else '<document>'
    line = lines.get(key)
    kind = error['type']
    if kind == 'missing':
        return MissingKey(key, 'required key is missing', line)
    if kind == 'extra_forbidden':
        return UnknownKey(key, 'unknown key', line)
    message = error['msg']
    if message.startswith('Value error, '):
        message = message[len('Value error, '):]
    return RangeError(key, message, line)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Every problem found is reported, not just the first one: the raised
    :class:`ConfigErrors` lists them all with key and line.
    """
    try:
        data = yaml.safe_load(text)
        lines, issues = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        where = f' on line {mark.line + 1}' if mark is not None else ''
        raise ConfigError(f'Invalid YAML{where}: {getattr(e, "problem", e)}') from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError('The configuration must be a mapping of keys to values')

    try:
        config = RunConfig(**{str(k): v for k, v in data.items()})
    except ValidationError as e:
        issues.extend(_issue_from(error, lines) for error in e.errors())
        config = None

    if issues:
        for issue in issues:
            logger.debug('Config issue: %s', issue)
        raise ConfigErrors(issues)
    return config


def load_config(path: str) -> RunConfig:
    _, ext = os.path.splitext(path.lower())
    if ext not in {'.yaml', '.yml'}:
        raise ConfigError(f'Invalid config extension: {ext}')

    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f'Cannot read the configuration {path}: {e.strerror}') from e
    except UnicodeDecodeError as e:
        raise ConfigError(f'{path} is not valid UTF-8: {e}') from e

    logger.debug('Loaded configuration from %s', path)
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode='json'), sort_keys=False)


def defaults_document() -> str:
    """A complete, valid configuration with every default spelled out."""
    values = {name: f.get_default(call_default_factory=True) for name, f in RunConfig.model_fields.items() if not f.is_required()}
    document = update_dict(dict(REQUIRED_EXAMPLE), values)
    return yaml.safe_dump(RunConfig(**document).model_dump(mode='json'), sort_keys=False)


def load_dotenv_files(path: str) -> None:
    """Load the dotenv files of a directory (``.env`` and ``*.env``).

    Files whose name starts with an underscore are skipped.
    """
    dotenv_paths = sorted(set(glob.glob(os.path.join(path, '*.env')) + glob.glob(os.path.join(path, '.env'))))
    for dotenv_path in dotenv_paths:
        if os.path.basename(dotenv_path).startswith('_'):
            logger.debug('Environment file %s starts with "_", it will be ignored', dotenv_path)
        elif load_dotenv(dotenv_path):
            logger.debug('Environment variables loaded from %s', dotenv_path)


def resolve_output_dir(cfg: RunConfig) -> str:
    override = os.environ.get(OUTPUT_DIR_VARIABLE)
    if override:
        logger.info('Output directory overridden by %s: %s', OUTPUT_DIR_VARIABLE, override)
        return override
    return cfg.output_dir


def to_sim_config(cfg: RunConfig) -> SimConfig:
    """Build the simulator configuration (geometry, densities, scheme) of a run."""
    geometry = make_geometry(cfg.geometry, cfg.dimension, a=cfg.a, b=cfg.b, radius=cfg.radius, center=cfg.center, tol=cfg.tolerance)
    if cfg.beta < cfg.beta_floor:
        logger.warning('Boundary density %s is below the floor, using %s', cfg.beta, cfg.beta_floor)
    densities = preset(
        cfg.density,
        cfg.n_particles,
        delta=cfg.delta,
        alpha=cfg.alpha,
        beta=cfg.effective_beta,
        lj_epsilon=cfg.lj_epsilon,
        lj_c=cfg.lj_c,
        r_min=cfg.r_min,
        clamp_at_cutoff=cfg.clamp_at_cutoff,
        soft_amplitude=cfg.soft_amplitude,
        soft_width=cfg.soft_width,
    )
    start: Optional[tuple] = None
    if cfg.start is not None:
        start = tuple(tuple(p) for p in cfg.start)

    return SimConfig(
        geometry=geometry,
        densities=densities,
        horizon=cfg.horizon,
        dt=cfg.dt,
        epsilon=cfg.epsilon,
        scheme=Scheme(cfg.scheme),
        seed=cfg.seed,
        stride=cfg.stride,
        girsanov=Girsanov(cfg.girsanov),
        paths=cfg.paths,
        layout=Layout(cfg.layout),
        start=start,
        freeze_escape_drift=cfg.freeze_escape_drift,
        debug=cfg.debug,
    )


def config_from_mapping(values: dict[str, Union[str, int, float, bool, list, None]]) -> RunConfig:
    """Validate a configuration given as a Python mapping, with the same diagnostics as :func:`parse_config`."""
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigErrors([_issue_from(error, {}) for error in e.errors()]) from e
