"""
Config - JSON run configuration parsed into dataclass sections

A config file holds the sections model, observable, estimator, run, spectral,
tail and output. Every section is optional except model; unknown keys are
rejected with the full key path.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .chain import ChainSpec, FiniteChain, IncrementLaw, Model, make_queue_increments
from .errors import ConfigError
from .lyapunov import LyapunovData, Observable, mm1_exponential_lyapunov, reflected_walk_lyapunov
from .spectral import SmallPair, TruncatedKernel, center_observable

logger = logging.getLogger(__name__)

MODEL_TYPES = ('mm1', 'queue', 'atoms', 'kernel')
OBSERVABLE_TYPES = ('identity', 'exponential', 'tabulated')


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass
class ModelSection:
    type: str
    alpha: Optional[float] = None
    mu: Optional[float] = None
    kappa: Optional[float] = None
    atoms: Optional[List[List[float]]] = None
    matrix: Optional[List[List[float]]] = None
    lattice_step: Optional[float] = None

    def __post_init__(self):
        _require(self.type in MODEL_TYPES, f"model.type must be one of {MODEL_TYPES}, got {self.type!r}")
        needed = {'mm1': ('alpha',), 'queue': ('mu', 'alpha', 'kappa'), 'atoms': ('atoms',),
                  'kernel': ('matrix',)}[self.type]
        for name in needed:
            _require(getattr(self, name) is not None, f"model.{name} is required for type {self.type!r}")
        if self.atoms is not None:
            _require(all(isinstance(atom, (list, tuple)) and len(atom) == 2 for atom in self.atoms),
                     "model.atoms must be a list of [value, probability] pairs")


@dataclass
class ObservableSection:
    type: str = 'identity'
    beta: float = 0.0
    values: Optional[List[float]] = None
    centered: bool = False

    def __post_init__(self):
        _require(self.type in OBSERVABLE_TYPES,
                 f"observable.type must be one of {OBSERVABLE_TYPES}, got {self.type!r}")
        _require(self.type != 'tabulated' or bool(self.values),
                 "observable.values is required for a tabulated observable")


@dataclass
class EstimatorSection:
    theta_minus: float = 1.05
    theta_plus: float = 1.0
    epsilon: float = 0.0
    control: str = 'quadratic'
    beta: Optional[float] = None

    def __post_init__(self):
        _require(self.epsilon >= 0, f"estimator.epsilon must be nonnegative, got {self.epsilon}")
        _require(self.control in ('quadratic', 'exponential'),
                 f"estimator.control must be 'quadratic' or 'exponential', got {self.control!r}")
        _require(self.control != 'exponential' or self.beta is not None,
                 "estimator.beta is required for the exponential control")


@dataclass
class RunSection:
    n: int = 10_000
    replications: int = 1000
    master_seed: int = 1
    x0: float = 0.0
    n_grid: Optional[int] = None

    def __post_init__(self):
        _require(isinstance(self.n, int) and self.n >= 1, f"run.n must be a positive integer, got {self.n}")
        _require(isinstance(self.replications, int) and self.replications >= 1,
                 f"run.replications must be a positive integer, got {self.replications}")
        _require(isinstance(self.master_seed, int) and 0 <= self.master_seed < 2 ** 64,
                 f"run.master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        _require(self.x0 >= 0, f"run.x0 must be nonnegative, got {self.x0}")
        _require(self.n_grid is None or (isinstance(self.n_grid, int) and self.n_grid >= 1),
                 f"run.n_grid must be a positive integer, got {self.n_grid}")


@dataclass
class SmallSection:
    s_state: int = 0
    nu_state: int = 0


@dataclass
class SpectralSection:
    N: int = 400
    a_min: float = -1.0
    a_max: float = 0.25
    a_points: int = 201
    tol: float = 1e-12
    cross_check: bool = False
    c_values: Optional[List[float]] = None
    small: SmallSection = field(default_factory=SmallSection)

    def __post_init__(self):
        _require(isinstance(self.N, int) and self.N >= 1, f"spectral.N must be a positive integer, got {self.N}")
        _require(self.a_min <= 0 <= self.a_max, "spectral.a_min <= 0 <= spectral.a_max is required")
        _require(isinstance(self.a_points, int) and self.a_points >= 3,
                 f"spectral.a_points must be at least 3, got {self.a_points}")
        _require(self.tol > 0, f"spectral.tol must be positive, got {self.tol}")

    def a_grid(self) -> np.ndarray:
        """Linear grid over [a_min, a_max], with 0 inserted if it is not a node"""
        grid = np.linspace(self.a_min, self.a_max, self.a_points)
        grid[np.abs(grid) <= 1e-12 * (self.a_max - self.a_min)] = 0.0
        return np.union1d(grid, [0.0])


@dataclass
class TailSection:
    n_list: List[int] = field(default_factory=lambda: [20, 40, 60, 80])
    c: float = 0.0
    side: str = 'lower'
    budget: float = 1e9

    def __post_init__(self):
        _require(bool(self.n_list) and all(isinstance(n, int) and n >= 1 for n in self.n_list),
                 "tail.n_list must be a nonempty list of positive integers")
        _require(self.side in ('lower', 'upper'), f"tail.side must be 'lower' or 'upper', got {self.side!r}")
        _require(self.budget > 0, "tail.budget must be positive")


@dataclass
class OutputSection:
    directory: str = 'output'
    precision: int = 17

    def __post_init__(self):
        _require(isinstance(self.precision, int) and 1 <= self.precision <= 17,
                 f"output.precision must be between 1 and 17, got {self.precision}")


@dataclass
class RunConfig:
    """Configuration for one toolkit run"""

    model: ModelSection
    observable: ObservableSection = field(default_factory=ObservableSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    run: RunSection = field(default_factory=RunSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    tail: TailSection = field(default_factory=TailSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def build_model(self) -> Model:
        """Model of the config; model preconditions raise ModelError"""
        section = self.model
        x0 = self.run.x0
        if section.type == 'mm1':
            return ChainSpec.mm1(section.alpha, x0)
        if section.type == 'queue':
            return ChainSpec.reflected_rw(make_queue_increments(section.mu, section.alpha, section.kappa), x0)
        if section.type == 'atoms':
            law = IncrementLaw.from_atoms([tuple(atom) for atom in section.atoms], section.lattice_step)
            return ChainSpec.reflected_rw(law, x0)
        return FiniteChain(np.array(section.matrix, dtype=float), section.lattice_step or 1.0, x0)

    def build_observable(self, model: Model, kernel: Optional[TruncatedKernel] = None) -> Observable:
        """Observable of the config, centered when observable.centered is set"""
        section = self.observable
        if section.type == 'identity':
            F = Observable.identity()
        elif section.type == 'exponential':
            F = Observable.exponential(section.beta)
        else:
            F = Observable.tabulated(section.values, model.lattice_step)
        if section.centered:
            F = center_observable(F, model, kernel)
        return F

    def build_lyapunov(self, model: Model) -> LyapunovData:
        if not isinstance(model, ChainSpec):
            raise ConfigError("Control variates need a reflected random walk model (mm1, queue or atoms)")
        if self.estimator.control == 'exponential':
            if model.kind != 'mm1':
                raise ConfigError("The exponential control is only available for model.type 'mm1'")
            return mm1_exponential_lyapunov(model.alpha, self.estimator.beta)
        return reflected_walk_lyapunov(model.law)

    def build_small(self, n_states: int) -> SmallPair:
        small = self.spectral.small
        for name in ('s_state', 'nu_state'):
            state = getattr(small, name)
            _require(0 <= state < n_states, f"spectral.small.{name}={state} outside 0..{n_states - 1}")
        return SmallPair.at(n_states, small.s_state, small.nu_state)


SECTIONS = {
    'model': ModelSection,
    'observable': ObservableSection,
    'estimator': EstimatorSection,
    'run': RunSection,
    'spectral': SpectralSection,
    'tail': TailSection,
    'output': OutputSection,
}


def _build_section(cls, data: Any, path: str):
    _require(isinstance(data, dict), f"{path} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key {path}.{unknown[0]}")
    values = dict(data)
    if cls is SpectralSection and 'small' in values:
        values['small'] = _build_section(SmallSection, values['small'], f"{path}.small")
    for name, value in values.items():
        if isinstance(value, bool) and known[name].type not in (bool, 'bool'):
            raise ConfigError(f"{path}.{name} must not be a boolean")
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{path}.{name} must be finite")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid {path} section: {e}") from e


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """
    Validate a parsed config document

    Args:
        data: Parsed JSON object

    Returns:
        RunConfig
    """
    _require(isinstance(data, dict), "Config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown key {unknown[0]}")
    _require('model' in data, "Config needs a model section")
    sections = {name: _build_section(cls, data[name], name) for name, cls in SECTIONS.items() if name in data}
    return RunConfig(**sections)


def load_config(path: str) -> RunConfig:
    """
    Load and validate a JSON config file

    Args:
        path: Path to the config file

    Returns:
        RunConfig
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e

    config = config_from_dict(data)
    logger.info(f"Loaded config from {Path(path)} (model type {config.model.type})")
    return config


def apply_overrides(config: RunConfig, seed: Optional[int] = None, n: Optional[int] = None) -> RunConfig:
    """Apply the --seed and --n flags"""
    run = config.run
    if seed is not None:
        run = replace(run, master_seed=seed)
    if n is not None:
        run = replace(run, n=n)
    return replace(config, run=run)
