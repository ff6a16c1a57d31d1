import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

from dotenv import load_dotenv

from kfplab.errors import ConfigError
from kfplab.landscape import ModelSpec, get_model

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

# Constants
DEFAULT_OUT_DIR = "out"
DEFAULT_SEED = 42


@dataclass
class ModelConfig:
    name: str = "DW1"
    gamma: float = 1.0
    inline: dict = None


@dataclass
class GridConfig:
    half_width: float = 2.5
    multiplier: float = 1.0


@dataclass
class SolverConfig:
    basis: int = 40
    count: int = 6
    tol: float = 1e-8
    max_restarts: int = 40
    window: float = 2.0


@dataclass
class SweepConfig:
    h: list = field(default_factory=lambda: [0.14, 0.12, 0.10, 0.08, 0.07, 0.06])


@dataclass
class HypothesesConfig:
    T0: float = 10.0
    ring_radius: float = 0.5
    ring_count: int = 16
    exclusion: float = 0.1
    threshold: float = 1e-3
    eps_grid: list = field(default_factory=lambda: [0.5, 0.1, 0.05])
    bump_radius: float = 0.3
    far_radius: float = 2.0


@dataclass
class PrefactorConfig:
    r0: float = 0.2
    trust_angle: float = 0.35


@dataclass
class ResolventConfig:
    probes: int = 8
    radius_factor: float = 2.0
    C: float = 10.0


@dataclass
class OutputConfig:
    directory: str = DEFAULT_OUT_DIR
    triplets: bool = False


@dataclass
class RunConfig:
    """
    Complete run configuration. Layers, lowest first: defaults, KFPLAB_*
    environment variables, the JSON document, command-line flags.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    hypotheses: HypothesesConfig = field(default_factory=HypothesesConfig)
    prefactor: PrefactorConfig = field(default_factory=PrefactorConfig)
    resolvent: ResolventConfig = field(default_factory=ResolventConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    h: float = 0.1
    degree: int = 0
    seed: int = DEFAULT_SEED
    log_level: str = "INFO"

    def to_dict(self):
        return asdict(self)

    def validate(self):
        """
        Check the value constraints.

        Raises:
            ConfigError: on the first violated constraint
        """
        positive = {
            "solver.tol": self.solver.tol,
            "grid.half_width": self.grid.half_width,
            "hypotheses.T0": self.hypotheses.T0,
            "hypotheses.threshold": self.hypotheses.threshold,
            "hypotheses.exclusion": self.hypotheses.exclusion,
            "prefactor.r0": self.prefactor.r0,
            "prefactor.trust_angle": self.prefactor.trust_angle,
            "resolvent.C": self.resolvent.C,
            "resolvent.radius_factor": self.resolvent.radius_factor,
            "solver.window": self.solver.window,
            "h": self.h,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.grid.multiplier < 1:
            raise ConfigError(f"grid.multiplier must be at least 1, got {self.grid.multiplier}")
        hs = list(self.sweep.h)
        if len(hs) < 5:
            raise ConfigError("sweep.h needs at least 5 values")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("sweep.h must be strictly decreasing")
        if any(v <= 0 for v in hs):
            raise ConfigError("sweep.h values must be positive")
        if any(e <= 0 for e in self.hypotheses.eps_grid):
            raise ConfigError("hypotheses.eps_grid values must be positive")
        if self.degree not in (0, 1):
            raise ConfigError(f"degree must be 0 or 1, got {self.degree}")
        if self.solver.count < 1 or self.solver.basis < 1 or self.resolvent.probes < 1:
            raise ConfigError("solver.count, solver.basis and resolvent.probes must be at least 1")
        return self


def _apply(section, data, path):
    # Overwrite dataclass fields from a mapping, rejecting unknown keys
    names = {f.name: f for f in fields(section)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown configuration key '{where}'")
        current = getattr(section, key)
        if hasattr(current, "__dataclass_fields__"):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            _apply(current, value, where)
        else:
            setattr(section, key, _coerce(current, value, where))


def _coerce(current, value, where):
    if current is None or value is None:
        return value
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(current, list):
            return [float(v) for v in value]
        if isinstance(current, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"'{where}' has the wrong type: {value!r}")
    return value


def _environment():
    env = {}
    if os.getenv("KFPLAB_OUT_DIR"):
        env.setdefault("output", {})["directory"] = os.getenv("KFPLAB_OUT_DIR")
    if os.getenv("KFPLAB_MODEL"):
        env.setdefault("model", {})["name"] = os.getenv("KFPLAB_MODEL")
    if os.getenv("KFPLAB_SEED"):
        try:
            env["seed"] = int(os.getenv("KFPLAB_SEED"))
        except ValueError:
            raise ConfigError(f"KFPLAB_SEED must be an integer, got {os.getenv('KFPLAB_SEED')!r}")
    if os.getenv("KFPLAB_LOG_LEVEL"):
        env["log_level"] = os.getenv("KFPLAB_LOG_LEVEL").upper()
    return env


def parse_config_text(text):
    """
    Parse a JSON config document.

    Raises:
        ConfigError: with the decoder's line and column on malformed JSON
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config: {e.msg}", line=e.lineno, col=e.colno)
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    return data


def load_config(path=None, overrides=None):
    """
    Build the run configuration from every layer.

    Args:
        path (str, optional): JSON config document
        overrides (dict, optional): nested mapping from command-line flags

    Returns:
        RunConfig: validated configuration
    """
    config = RunConfig()
    _apply(config, _environment(), "")
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r") as f:
            _apply(config, parse_config_text(f.read()), "")
    if overrides:
        _apply(config, overrides, "")
    return config.validate()


def resolve_model(config):
    """The ModelSpec named (or given inline) by the configuration."""
    if config.model.inline is not None:
        try:
            return ModelSpec.from_dict(config.model.inline)
        except ValueError as e:
            raise ConfigError(f"inline model: {e}")
    try:
        return get_model(config.model.name, config.model.gamma)
    except KeyError as e:
        raise ConfigError(str(e.args[0]))
