"""
Scenario configuration: the line-based `key = value` format, built-in presets
and typed field validation.
"""
import logging
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

from modules.plants import PLANTS, get_plant
from modules.simulation import ScenarioConfig
from modules.smlc import SMLCConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """
    Configuration problem, optionally tied to a line of the config file.

    Attributes:
        line_number: 1-based line of the offending entry, or None for whole-file errors
    """

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        super().__init__(f'line {line_number}: {message}' if line_number is not None else message)


# type, lower bound, whether the bound itself is excluded
CONFIG_FIELDS: Dict[str, Dict[str, Any]] = {
    'name': {'type': 'string'},
    'plant': {'type': 'plant'},
    'dt': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'horizon': {'type': 'number', 'min': 0.0},
    'x0': {'type': 'vector'},
    'lambda': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'gamma_k': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'gamma_alpha': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'chi': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'epsilon': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'denom_clamp': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'sigma_floor': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'sigma_ceiling': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'k0': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'alpha0': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'q0': {'type': 'number'},
    'un0': {'type': 'number'},
    'qden0': {'type': 'number'},
    'input_range': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'snr_db': {'type': 'snr'},
    'seed': {'type': 'integer', 'min': 0},
    'disturbance': {'type': 'flag'},
    'headway_h': {'type': 'number', 'min': 0.0},
    'n_mfs': {'type': 'integer', 'min': 1},
    'mass': {'type': 'number', 'min': 0.0, 'exclusive': True},
    'drag': {'type': 'number', 'min': 0.0},
    'tau': {'type': 'number', 'min': 0.0, 'exclusive': True},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    'scenario1': {
        'name': 'scenario1', 'plant': 'acc', 'dt': 0.01, 'horizon': 60.0, 'x0': (0.0, 0.0, 0.0),
        'lambda': 1.0, 'gamma_k': 0.1, 'gamma_alpha': 0.1, 'chi': 0.05, 'epsilon': 0.001,
        'denom_clamp': 0.001, 'sigma_floor': 1e-6, 'sigma_ceiling': 1e3,
        'k0': 1.0, 'alpha0': 3.0, 'q0': 0.5, 'un0': -2.0, 'qden0': 1.0, 'input_range': 0.4, 'snr_db': None,
        'seed': 1, 'disturbance': True, 'headway_h': 0.0, 'n_mfs': 3, 'mass': 9.0, 'drag': 0.26, 'tau': 0.1,
    },
    'scenario2': {
        'name': 'scenario2', 'plant': 'numeric2', 'dt': 0.01, 'horizon': 20.0, 'x0': (1.0, -1.0),
        'lambda': 2.0, 'gamma_k': 1.0, 'gamma_alpha': 0.1, 'chi': 0.05, 'epsilon': 0.001,
        'denom_clamp': 0.001, 'sigma_floor': 1e-6, 'sigma_ceiling': 1e3,
        'k0': 1.0, 'alpha0': 0.03, 'q0': 0.5, 'un0': 0.0, 'qden0': 1.0, 'input_range': 0.4, 'snr_db': 50.0,
        'seed': 1, 'disturbance': False, 'headway_h': 0.5, 'n_mfs': 3, 'mass': 9.0, 'drag': 0.26, 'tau': 0.1,
    },
}

# Defaults for a config file come from the preset of its plant.
PLANT_PRESETS = {'acc': 'scenario1', 'numeric2': 'scenario2'}

FLAG_VALUES = {'on': True, 'off': False, 'true': True, 'false': False, 'yes': True, 'no': False, '1': True, '0': False}


def validate_field_type(value: str, field_type: str) -> Tuple[bool, str]:
    """
    Check that a raw config value parses as the expected type.

    Args:
        value: Raw text from the config file
        field_type: One of string, plant, number, integer, vector, snr, flag

    Returns:
        Tuple of (is_valid, reason)
    """
    if value is None or value == '':
        return False, 'Value is required'
    try:
        if field_type == 'string':
            return True, 'Valid string'
        elif field_type == 'plant':
            if value in PLANTS:
                return True, 'Registered plant'
            return False, f"Unknown plant '{value}' (registered: {', '.join(sorted(PLANTS))})"
        elif field_type == 'number':
            if not math.isfinite(float(value)):
                return False, f'Expected a finite number, got {value}'
            return True, 'Valid number'
        elif field_type == 'integer':
            int(value)
            return True, 'Valid integer'
        elif field_type == 'vector':
            parts = [p.strip() for p in value.split(',')]
            if not parts or any(not math.isfinite(float(p)) for p in parts):
                return False, f'Expected a comma list of finite numbers, got {value}'
            return True, 'Valid vector'
        elif field_type == 'snr':
            if value.lower() in ('off', 'inf', '+inf', 'none'):
                return True, 'Noise disabled'
            if not math.isfinite(float(value)):
                return False, f'Expected a finite SNR in dB or off, got {value}'
            return True, 'Valid SNR'
        elif field_type == 'flag':
            if value.lower() in FLAG_VALUES:
                return True, 'Valid flag'
            return False, f'Expected on/off, got {value}'
        return False, f'Unknown field type: {field_type}'
    except (ValueError, TypeError) as e:
        return False, f'Expected {field_type}, got {value!r} ({str(e)})'


def coerce_field(key: str, value: str) -> Any:
    """
    Convert a validated raw value to its typed form and check its range.

    Raises:
        ValueError: If the value is malformed or out of range
    """
    spec = CONFIG_FIELDS[key]
    field_type = spec['type']
    is_valid, reason = validate_field_type(value, field_type)
    if not is_valid:
        raise ValueError(f"{key}: {reason}")
    if field_type in ('string', 'plant'):
        return value
    if field_type == 'vector':
        return tuple(float(p) for p in value.split(','))
    if field_type == 'flag':
        return FLAG_VALUES[value.lower()]
    if field_type == 'snr':
        if value.lower() in ('off', 'inf', '+inf', 'none'):
            return None
        return float(value)
    typed = int(value) if field_type == 'integer' else float(value)
    if 'min' in spec:
        lower = spec['min']
        if spec.get('exclusive') and not typed > lower:
            raise ValueError(f'{key}: must be > {lower}, got {typed}')
        if not typed >= lower:
            raise ValueError(f'{key}: must be >= {lower}, got {typed}')
    return typed


def scenario_from_values(values: Dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig from typed field values."""
    plant = get_plant(values['plant'], disturbance_on=values['disturbance'])
    smlc = SMLCConfig(
        lam=values['lambda'], n=plant.order_n, gamma_k=values['gamma_k'], gamma_alpha=values['gamma_alpha'],
        chi=values['chi'], epsilon=values['epsilon'], denom_clamp=values['denom_clamp'],
        sigma_floor=values['sigma_floor'], sigma_ceiling=values['sigma_ceiling'],
    )
    return ScenarioConfig(
        plant_name=values['plant'], smlc=smlc, x0=values['x0'], dt=values['dt'], horizon=values['horizon'],
        k0=values['k0'], alpha0=values['alpha0'], q0=values['q0'], un0=values['un0'], qden0=values['qden0'],
        input_range=values['input_range'],
        snr_db=values['snr_db'], seed=values['seed'], disturbance_on=values['disturbance'],
        headway_h=values['headway_h'], n_mfs=values['n_mfs'], mass=values['mass'], drag=values['drag'],
        tau=values['tau'], name=values['name'],
    )


def config_values(cfg: ScenarioConfig) -> Dict[str, Any]:
    """Typed field values of a ScenarioConfig, keyed like the config file."""
    return {
        'name': cfg.name, 'plant': cfg.plant_name, 'dt': cfg.dt, 'horizon': cfg.horizon, 'x0': tuple(cfg.x0),
        'lambda': cfg.smlc.lam, 'gamma_k': cfg.smlc.gamma_k, 'gamma_alpha': cfg.smlc.gamma_alpha,
        'chi': cfg.smlc.chi, 'epsilon': cfg.smlc.epsilon, 'denom_clamp': cfg.smlc.denom_clamp,
        'sigma_floor': cfg.smlc.sigma_floor, 'sigma_ceiling': cfg.smlc.sigma_ceiling,
        'k0': cfg.k0, 'alpha0': cfg.alpha0, 'q0': cfg.q0, 'un0': cfg.un0, 'qden0': cfg.qden0,
        'input_range': cfg.input_range,
        'snr_db': cfg.snr_db, 'seed': cfg.seed, 'disturbance': cfg.disturbance_on,
        'headway_h': cfg.headway_h, 'n_mfs': cfg.n_mfs, 'mass': cfg.mass, 'drag': cfg.drag, 'tau': cfg.tau,
    }


def _format_value(value: Any) -> str:
    if value is None:
        return 'off'
    if isinstance(value, bool):
        return 'on' if value else 'off'
    if isinstance(value, tuple):
        return ', '.join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ScenarioConfig) -> List[str]:
    """`key = value` lines that parse back to the same config."""
    return [f'{key} = {_format_value(value)}' for key, value in config_values(cfg).items()]


def load_preset(name: str) -> ScenarioConfig:
    """
    Raises:
        ConfigError: If the preset is unknown
    """
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}' (available: {', '.join(sorted(PRESETS))})")
    return scenario_from_values(dict(PRESETS[name]))


def parse_config_text(text: str, source: str = '<config>') -> ScenarioConfig:
    """
    Parse config text. Missing keys take the preset defaults of the chosen plant.

    Raises:
        ConfigError: For malformed lines, unknown keys, bad values or a missing plant
    """
    parsed: Dict[str, Any] = {}
    seen: Dict[str, int] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Malformed line (expected 'key = value'): {raw_line.strip()}", line_number)
        key, value = (part.strip() for part in line.split('=', 1))
        if not key or not value:
            raise ConfigError(f"Malformed line (expected 'key = value'): {raw_line.strip()}", line_number)
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"Unknown key '{key}'", line_number)
        if key in seen:
            logger.warning(f'{source}: key {key} on line {line_number} overrides line {seen[key]}')
        try:
            parsed[key] = coerce_field(key, value)
        except ValueError as e:
            raise ConfigError(f'Type mismatch: {str(e)}', line_number) from e
        seen[key] = line_number

    if 'plant' not in parsed:
        raise ConfigError(f'{source}: plant is mandatory')
    values = dict(PRESETS[PLANT_PRESETS[parsed['plant']]])
    if 'name' not in parsed:
        values['name'] = os.path.splitext(os.path.basename(source))[0]
    values.update(parsed)
    try:
        cfg = scenario_from_values(values)
    except ValueError as e:
        raise ConfigError(f'{source}: {str(e)}') from e
    if len(cfg.x0) != get_plant(cfg.plant_name).state_dim:
        line = seen.get('x0')
        raise ConfigError(f'x0 needs {get_plant(cfg.plant_name).state_dim} entries for plant {cfg.plant_name}, got {len(cfg.x0)}', line)
    return cfg


def parse_config(path: str) -> ScenarioConfig:
    """
    Read a config file.

    Raises:
        ConfigError: If the file is missing or its contents are invalid
    """
    if not os.path.isfile(path):
        raise ConfigError(f'Config file not found: {path}')
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    return parse_config_text(text, source=path)


def apply_overrides(cfg: ScenarioConfig, seed: Optional[int] = None, dt: Optional[float] = None, horizon: Optional[float] = None) -> ScenarioConfig:
    """Command-line overrides for seed, step size and horizon."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes['seed'] = seed
    if dt is not None:
        changes['dt'] = dt
    if horizon is not None:
        changes['horizon'] = horizon
    try:
        return replace(cfg, **changes) if changes else cfg
    except ValueError as e:
        raise ConfigError(str(e)) from e


def parse_vary(spec: str) -> Tuple[str, List[str]]:
    """
    Split `KEY=a,b,c` into the key and its raw values.

    Raises:
        ConfigError: If the spec is malformed or the key cannot be swept
    """
    if '=' not in spec:
        raise ConfigError(f"--vary expects KEY=a,b,c, got '{spec}'")
    key, raw = (part.strip() for part in spec.split('=', 1))
    if key not in CONFIG_FIELDS:
        raise ConfigError(f"Unknown key '{key}' in --vary")
    if CONFIG_FIELDS[key]['type'] in ('vector', 'plant'):
        raise ConfigError(f"Key '{key}' cannot be swept")
    values = [v.strip() for v in raw.split(',') if v.strip()]
    if not values:
        raise ConfigError(f"--vary {key} has no values")
    return key, values


def vary_config(cfg: ScenarioConfig, key: str, raw_value: str) -> ScenarioConfig:
    """Copy of cfg with one field replaced by a raw config value."""
    values = config_values(cfg)
    try:
        values[key] = coerce_field(key, raw_value)
        values['name'] = f'{cfg.name}_{key}={raw_value}'
        return scenario_from_values(values)
    except ValueError as e:
        raise ConfigError(f'--vary {key}={raw_value}: {str(e)}') from e


@dataclass
class RunManifest:
    """One invocation of the run command."""
    scenario_name: str
    output_dir: str
    config_path: Optional[str] = None
    seed_override: Optional[int] = None
    dt_override: Optional[float] = None
    horizon_override: Optional[float] = None
    emit_plots: bool = False
    render: bool = False
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat(timespec='seconds'))

    def resolve(self) -> ScenarioConfig:
        """
        Load the preset or config file and apply the overrides.

        Raises:
            ConfigError: On any configuration problem
        """
        cfg = parse_config(self.config_path) if self.config_path else load_preset(self.scenario_name)
        return apply_overrides(cfg, self.seed_override, self.dt_override, self.horizon_override)

    def prepare_output(self) -> str:
        """
        Create the output directory and check that it is writable.

        Raises:
            ConfigError: If the directory cannot be written
        """
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f'Cannot create output directory {self.output_dir}: {str(e)}') from e
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f'Output directory {self.output_dir} is not writable')
        return self.output_dir
