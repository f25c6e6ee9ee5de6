from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import logging
import os

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path(__file__).resolve().parent.parent / "data" / "config" / "hf_lab.yaml"


@dataclass(frozen=True)
class ScfDefaults:
    """Defaults for the Roothaan iteration"""
    max_iter: int = 500
    tol_energy: float = 1e-10
    tol_commutator: float = 1e-8
    damping: float = 0.0
    degeneracy_tol: float = 1e-9
    oscillation_window: int = 10
    oscillation_tol: float = 1e-8


@dataclass(frozen=True)
class SurveyDefaults:
    """Defaults for multistart surveys"""
    n_starts: int = 100
    seed: int = 0
    epsilon: float = 0.01
    cluster_tol: float = 1e-6


@dataclass(frozen=True)
class RadialDefaults:
    """Defaults for the radial grid solver"""
    r_min: float = 1e-5
    r_max: float = 120.0
    n_points: int = 2000
    window_lo: float = 0.6
    window_hi: float = 0.9
    tol_energy: float = 1e-11
    max_iter: int = 200
    mixing: float = 0.25
    far_field_r: float = 20.0


@dataclass(frozen=True)
class LoggingDefaults:
    level: str = "INFO"
    format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class Settings:
    scf: ScfDefaults = ScfDefaults()
    survey: SurveyDefaults = SurveyDefaults()
    radial: RadialDefaults = RadialDefaults()
    logging: LoggingDefaults = LoggingDefaults()


def _coerce(section, data: Dict[str, Any]):
    """Overlay a YAML mapping on a defaults dataclass, casting to the declared field types.

    PyYAML reads literals such as 1e-10 as strings, hence the explicit casts.
    """
    if not isinstance(data, dict):
        raise ValueError(f"Config section for {type(section).__name__} must be a mapping")
    known = {f.name: f for f in fields(section)}
    values = {}
    for key, value in data.items():
        if key not in known:
            logger.warning(f"Ignoring unknown config key {type(section).__name__}.{key}")
            continue
        default = getattr(section, key)
        try:
            values[key] = type(default)(value)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Invalid config value {key}={value!r}: {e}") from e
    return replace(section, **values)


class SettingsManager:
    """Loads lab settings from YAML"""

    def __init__(self, config_file: Optional[Path] = None):
        env_file = os.environ.get("HF_LAB_CONFIG")
        self._config_file = Path(config_file or env_file or DEFAULT_CONFIG_FILE)
        self._settings = Settings()
        self.load_settings()

    @property
    def settings(self) -> Settings:
        return self._settings

    @property
    def config_file(self) -> Path:
        return self._config_file

    def load_settings(self) -> Settings:
        """Load settings from file"""
        if not self._config_file.exists():
            logger.info(f"No config file at {self._config_file}, using built-in defaults")
            self._settings = Settings()
            return self._settings
        with open(self._config_file, "r") as f:
            data = yaml.safe_load(f) or {}
        defaults = Settings()
        self._settings = Settings(
            scf=_coerce(defaults.scf, data.get("scf", {})),
            survey=_coerce(defaults.survey, data.get("survey", {})),
            radial=_coerce(defaults.radial, data.get("radial", {})),
            logging=_coerce(defaults.logging, data.get("logging", {})),
        )
        logger.debug(f"Loaded settings from {self._config_file}")
        return self._settings

    def window_fractions(self) -> Tuple[float, float]:
        radial = self._settings.radial
        return radial.window_lo, radial.window_hi


settings_manager = SettingsManager()
