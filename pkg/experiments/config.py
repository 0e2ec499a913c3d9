"""
Effective run configuration.

🔍 EXPLANATION:
Three layers, later ones win:
1. defaults in settings.RANGEFACE
2. an INI file passed with --config ([section] + key = value)
3. command-line flags

The effective configuration is hashed; every artifact of the run carries
that hash so a result file can always be traced back to its settings.
"""
import configparser
import copy
import hashlib
import json
import math

from django.conf import settings

from normalization.normalize import GridConfig
from rangeface.errors import GenerationError
from recognition.fusion import NormalizationScope
from recognition.matcher import Metric
from scans.facegen import CaptureParams
from scans.mesh import PoseTag

TRUE_WORDS = {'1', 'true', 'yes', 'on'}
FALSE_WORDS = {'0', 'false', 'no', 'off'}


class ConfigError(ValueError):
    """Unknown section/key or a value of the wrong type (usage error)."""


def default_config():
    return copy.deepcopy(settings.RANGEFACE)


def _coerce(value, default, where):
    if isinstance(default, bool):
        word = str(value).strip().lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ConfigError(f'{where}: expected a boolean, got {value!r}')
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            number = float(value)
            if not math.isfinite(number):
                raise ValueError
            return number
    except (TypeError, ValueError):
        raise ConfigError(f'{where}: expected a number, got {value!r}') from None
    return str(value).strip()


def merge(config, section, key, value):
    if section not in config:
        raise ConfigError(f'unknown config section [{section}]')
    if key not in config[section]:
        raise ConfigError(f'unknown config key {section}.{key}')
    config[section][key] = _coerce(value, config[section][key], f'{section}.{key}')


def load_config(path=None, overrides=None):
    """
    Build the effective configuration.

    ``overrides`` maps (section, key) to a value; None values are ignored
    so unset flags fall through to the file and the defaults.
    """
    config = default_config()
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as handle:
                parser.read_file(handle)
        except configparser.Error as exc:
            raise ConfigError(f'cannot parse {path}: {exc}') from exc
        for section in parser.sections():
            for key, value in parser.items(section):
                merge(config, section, key, value)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            merge(config, section, key, value)
    return config


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def metrics(config):
    return [name.strip() for name in config['matcher']['metrics'].split(',') if name.strip()]


def capture_params(config, pose):
    """CaptureParams for one pose from the [facegen] section."""
    section = config['facegen']
    prefix = 'gallery' if PoseTag(pose) == PoseTag.GALLERY else 'probe'
    return CaptureParams(
        seed=section[f'{prefix}_seed'],
        max_rotation_deg=section[f'{prefix}_max_rotation_deg'],
        max_translation=section['max_translation'],
        sampling=section[f'{prefix}_sampling'],
        void_count=section['void_count'],
        void_radius=section['void_radius'],
        depth_noise=section['depth_noise'],
        color_noise=section['color_noise'],
        landmark_noise=section['landmark_noise'],
    )


def grid_config(config):
    section = config['normalize']
    return GridConfig(
        resolution=section['resolution'],
        x_half_extent=section['x_half_extent'],
        y_extent_below=section['y_extent_below'],
        y_extent_above=section['y_extent_above'],
        color_mode=section['color_mode'],
    )


def validate(config):
    """Build every typed parameter object once so bad values fail as usage errors."""
    try:
        capture_params(config, PoseTag.GALLERY)
        capture_params(config, PoseTag.PROBE)
        grid_config(config)
        chosen = metrics(config)
        if not chosen:
            raise ValueError('matcher.metrics is empty')
        for name in chosen:
            Metric(name)
        NormalizationScope(config['fusion']['scope'])
        if config['run']['subjects'] < 2:
            raise ValueError('run.subjects must be at least 2')
        if config['subspace']['n_components'] < 0:
            raise ValueError('subspace.n_components must be >= 0')
        far = config['evalkit']['far_operating_point']
        if not 0.0 <= far <= 1.0:
            raise ValueError('evalkit.far_operating_point must lie in [0, 1]')
    except (ValueError, GenerationError) as exc:
        raise ConfigError(str(exc)) from exc
    return config
