"""
Settings Management Module
Handles loading, saving, layering and validation of experiment settings
"""

import json
import os
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

from array_model import DEFAULT_SOUND_SPEED, resolve_spacing
from errors import ConfigError
from weights import NULL_TABLE, PatternSpec, parse_pattern

UNQUANTIZED = "unquantized"
MAX_SETTINGS_BYTES = 1024 * 1024


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings; spacing is in metres"""

    patterns: Tuple[str, ...]
    orders: Tuple[int, ...]
    bits: Tuple[int, ...]
    include_unquantized: bool
    frequency: float
    sample_rate: float
    spacing: float
    sound_speed: float
    amplitude: float
    full_scale: float
    runs: int
    seed: int
    num_samples: int
    resolution_deg: float
    refine_tolerance_deg: float
    null_threshold_db: float
    lobe_prominence_db: float
    depths_db: Tuple[float, ...]
    width_runs: int
    workers: int
    cardioid3_double_null_deg: float
    bandpass_half_width_hz: float
    bandpass_ripple_db: float
    hilbert_taps: int
    output_dir: str

    def pattern_specs(self):
        """Every requested (pattern, order) pair, ordered by order then pattern"""
        specs = []
        for order in self.orders:
            for name in self.patterns:
                specs.append(PatternSpec(parse_pattern(name), order, self.cardioid3_double_null_deg))
        return specs

    def bit_columns(self) -> Tuple[Optional[int], ...]:
        """Quantizer columns of a table; None stands for the unquantized column"""
        return tuple(self.bits) + ((None,) if self.include_unquantized else ())

    def to_dict(self) -> Dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value
                for key, value in asdict(self).items()}


class SettingsManager:
    """Manages experiment settings with validation and fallbacks"""

    DEFAULT_SETTINGS = {
        # Experiment grid
        'patterns': ['dipole', 'cardioid', 'hypercardioid', 'supercardioid'],
        'orders': [1, 2, 3],
        'bits': [12, 16, 20, 24],
        'include_unquantized': True,

        # Source, sampling and geometry
        'frequency': 997.0,
        'sample_rate': 44100.0,
        'spacing': 0.04,
        'spacing_in_wavelengths': True,
        'sound_speed': DEFAULT_SOUND_SPEED,
        'amplitude': 1.0,
        'full_scale': 1.0,

        # Monte Carlo
        'runs': 5000,
        'seed': 0,
        'num_samples': 8192,
        'width_runs': 4,
        'workers': 1,

        # Beampattern analysis
        'resolution_deg': 0.1,
        'refine_tolerance_deg': 0.001,
        'null_threshold_db': -10.0,
        'lobe_prominence_db': 3.0,
        'depths_db': [-10.0, -20.0, -30.0, -40.0, -50.0, -60.0],
        'cardioid3_double_null_deg': 90.0,

        # Measurement pipeline
        'bandpass_half_width_hz': 50.0,
        'bandpass_ripple_db': 80.0,
        'hilbert_taps': 1001,

        # Output
        'output_dir': 'results',
    }

    def __init__(self, settings_file: Optional[str] = 'Config/experiment_settings.json',
                 strict: bool = False):
        self.settings_file = settings_file
        self.strict = strict
        self.settings = self._defaults()
        if settings_file:
            self.load_settings()

    def _defaults(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, list) else v for k, v in self.DEFAULT_SETTINGS.items()}

    def load_settings(self) -> None:
        """Load settings from file.

        Lenient managers keep defaults when the file is unusable. Strict managers
        (a file named on the command line) raise ConfigError instead.
        """
        try:
            if not os.path.exists(self.settings_file):
                self._reject(f"settings file {self.settings_file} not found", level=logging.INFO)
                return

            if os.path.getsize(self.settings_file) > MAX_SETTINGS_BYTES:
                self._reject(f"settings file {self.settings_file} is too large")
                return

            with open(self.settings_file, 'r', encoding='utf-8') as f:
                loaded_settings = json.load(f)

            if not isinstance(loaded_settings, dict):
                self._reject(f"settings file {self.settings_file} does not hold a JSON object",
                             level=logging.ERROR)
                return

            self._validate_and_merge_settings(loaded_settings)
            logging.info(f"Settings loaded from {self.settings_file}")

        except json.JSONDecodeError as e:
            if self.strict:
                raise ConfigError('config', f"invalid JSON in {self.settings_file}: {e}") from e
            logging.error(f"Invalid JSON in settings file: {e}")
        except PermissionError as e:
            if self.strict:
                raise ConfigError('config', f"permission denied reading {self.settings_file}") from e
            logging.error(f"Permission denied reading settings file")

    def _reject(self, message: str, level: int = logging.WARNING) -> None:
        if self.strict:
            raise ConfigError('config', message)
        logging.log(level, f"{message}, using defaults")

    def save_settings(self, path: Optional[str] = None) -> bool:
        """Save current settings to file"""
        target = path or self.settings_file
        try:
            if os.path.exists(target):
                os.replace(target, f"{target}.backup")

            directory = os.path.dirname(target)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self.settings, f, indent=2, ensure_ascii=False)
                f.write('\n')

            logging.info(f"Settings saved to {target}")
            return True

        except PermissionError:
            logging.error(f"Permission denied writing settings file")
            return False
        except OSError as e:
            logging.error(f"Error saving settings: {e}")
            return False

    def _validate_and_merge_settings(self, loaded_settings: Dict[str, Any]) -> None:
        """Merge file values; bad entries raise when strict, else are logged and the default kept"""
        for key, value in loaded_settings.items():
            if self.strict:
                self.settings[key] = self._coerce(key, value)
                continue
            try:
                self.settings[key] = self._coerce(key, value)
            except ConfigError as e:
                logging.warning(f"Ignoring setting {e}")

    def _coerce(self, key: str, value: Any) -> Any:
        """Check value against the type of the default; ints are accepted as floats"""
        if key not in self.DEFAULT_SETTINGS:
            raise ConfigError(key, "unknown setting")
        default = self.DEFAULT_SETTINGS[key]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected bool, got {type(value).__name__}")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected float, got {type(value).__name__}")
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(key, f"expected list, got {type(value).__name__}")
            item_type = type(default[0])
            items = []
            for item in value:
                if item_type is float and isinstance(item, int) and not isinstance(item, bool):
                    item = float(item)
                if not isinstance(item, item_type) or isinstance(item, bool):
                    raise ConfigError(key, f"expected list of {item_type.__name__}, got {item!r}")
                items.append(item)
            return items
        expected_type = type(default)
        if isinstance(value, bool) or not isinstance(value, expected_type):
            raise ConfigError(key, f"expected {expected_type.__name__}, got {type(value).__name__}")
        return value

    def apply_overrides(self, overrides: Mapping[str, Any]) -> None:
        """Command-line values win over the file; None means 'not given'"""
        for key, value in overrides.items():
            if value is None:
                continue
            self.settings[key] = self._coerce(key, value)

    def get(self, key: str, default: Any = None) -> Any:
        """Get a setting value"""
        return self.settings.get(key, default if default is not None else self.DEFAULT_SETTINGS.get(key))

    def set(self, key: str, value: Any) -> bool:
        """Set a setting value with validation"""
        try:
            self.settings[key] = self._coerce(key, value)
        except ConfigError as e:
            logging.error(f"Invalid setting {e}")
            return False
        return True

    def reset_to_defaults(self) -> None:
        """Reset all settings to defaults"""
        self.settings = self._defaults()
        logging.info("Settings reset to defaults")

    def get_all(self) -> Dict[str, Any]:
        """Get all current settings"""
        return dict(self.settings)

    def experiment_config(self) -> ExperimentConfig:
        """Resolve the settings into an ExperimentConfig, validating ranges"""
        s = self.settings
        for name in s['patterns']:
            try:
                parse_pattern(name)
            except ValueError as e:
                raise ConfigError('patterns', str(e)) from None
        for order in s['orders']:
            for name in s['patterns']:
                if (parse_pattern(name), order) not in NULL_TABLE:
                    raise ConfigError('orders', f"unsupported pattern/order pair ({name}, {order})")
        if any(b < 1 for b in s['bits']):
            raise ConfigError('bits', f"bit depths must be at least 1: {s['bits']}")
        if not s['bits'] and not s['include_unquantized']:
            raise ConfigError('bits', "no bit depth requested and the unquantized column is off")
        if any(d >= 0.0 for d in s['depths_db']):
            raise ConfigError('depths_db', f"depths must be negative: {s['depths_db']}")
        for key in ('frequency', 'sample_rate', 'spacing', 'sound_speed', 'amplitude',
                    'full_scale', 'resolution_deg', 'refine_tolerance_deg',
                    'bandpass_half_width_hz', 'bandpass_ripple_db'):
            if not s[key] > 0.0:
                raise ConfigError(key, f"must be positive, got {s[key]}")
        for key in ('runs', 'num_samples', 'workers', 'hilbert_taps'):
            if s[key] < 1:
                raise ConfigError(key, f"must be at least 1, got {s[key]}")
        if s['width_runs'] < 0:
            raise ConfigError('width_runs', f"must not be negative, got {s['width_runs']}")
        if s['frequency'] >= s['sample_rate'] / 2.0:
            raise ConfigError('frequency', f"{s['frequency']} Hz is not below Nyquist")
        if s['amplitude'] > s['full_scale']:
            raise ConfigError('amplitude', f"{s['amplitude']} exceeds full scale {s['full_scale']}")

        return ExperimentConfig(
            patterns=tuple(parse_pattern(p).value for p in s['patterns']),
            orders=tuple(s['orders']),
            bits=tuple(s['bits']),
            include_unquantized=s['include_unquantized'],
            frequency=s['frequency'],
            sample_rate=s['sample_rate'],
            spacing=resolve_spacing(s['spacing'], s['spacing_in_wavelengths'],
                                    s['frequency'], s['sound_speed']),
            sound_speed=s['sound_speed'],
            amplitude=s['amplitude'],
            full_scale=s['full_scale'],
            runs=s['runs'],
            seed=s['seed'],
            num_samples=s['num_samples'],
            resolution_deg=s['resolution_deg'],
            refine_tolerance_deg=s['refine_tolerance_deg'],
            null_threshold_db=s['null_threshold_db'],
            lobe_prominence_db=s['lobe_prominence_db'],
            depths_db=tuple(s['depths_db']),
            width_runs=s['width_runs'],
            workers=s['workers'],
            cardioid3_double_null_deg=s['cardioid3_double_null_deg'],
            bandpass_half_width_hz=s['bandpass_half_width_hz'],
            bandpass_ripple_db=s['bandpass_ripple_db'],
            hilbert_taps=s['hilbert_taps'],
            output_dir=s['output_dir'],
        )


def load_config(settings_file: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> Tuple[SettingsManager, ExperimentConfig]:
    """defaults < settings file < overrides; a named file must be valid"""
    manager = SettingsManager(settings_file, strict=settings_file is not None)
    if overrides:
        manager.apply_overrides(overrides)
    return manager, manager.experiment_config()
