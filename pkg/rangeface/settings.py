"""
Django settings for rangeface project.

🔍 EXPLANATION:
This file is the "control center" for the whole pipeline. It tells Django:
- Which apps make up the pipeline (scans, normalization, recognition, ...)
- Where run records are stored (SQLite database)
- How logging is routed
- The default experiment configuration (RANGEFACE dict below)

Every value in RANGEFACE can be overridden per run with an INI file
(``--config``) or a command-line flag; flags win.

For more information on this file, see
https://docs.djangoproject.com/en/5.0/topics/settings/
"""
import os
from pathlib import Path

# BASE_DIR = the root folder of the project (where manage.py lives)
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: nothing here is served over the network, but Django
# still expects a key to exist.
SECRET_KEY = os.environ.get(
    'RANGEFACE_SECRET_KEY',
    'rangeface-insecure-0c1f5d2b8e7a4f3c9d6b1a0e8f7c2d4b',
)

DEBUG = os.environ.get('RANGEFACE_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition
# Each app owns one stage of the pipeline
INSTALLED_APPS = [
    'scans',            # Mesh/landmark formats and the synthetic scan generator
    'normalization',    # Crop, canonical alignment and range-grid resampling
    'recognition',      # PCA subspace, distances, score/image fusion
    'evaluation',       # CMC / ROC metrics and report emission
    'experiments',      # Configuration, run records and management commands
]


# Database
# Only used to record experiment runs (``eval --record``)
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging
# All pipeline apps log through the standard logging module; the level can be
# changed without touching code: RANGEFACE_LOG_LEVEL=DEBUG python manage.py ...
LOG_LEVEL = os.environ.get('RANGEFACE_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'pipeline': {
            'format': '{asctime} {levelname:<7} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'pipeline',
        },
    },
    'loggers': {
        name: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for name in ('rangeface', 'scans', 'normalization', 'recognition', 'evaluation', 'experiments')
    },
}


# Parallelism cap for per-subject / per-row work
# RANGEFACE_THREADS=4 python manage.py pipeline ...
RANGEFACE_THREADS = max(1, int(os.environ.get('RANGEFACE_THREADS', '1')))


# Default experiment configuration
# 🔍 EXPLANATION:
# One section per pipeline module. Lengths in facegen are multiples of the
# subject's inter-infraorbitale distance d unless noted otherwise.
RANGEFACE = {
    'run': {
        'subjects': 100,
        'seed': 7,
    },
    'facegen': {
        'gallery_seed': 1,
        'probe_seed': 2,
        'gallery_max_rotation_deg': 10.0,
        'probe_max_rotation_deg': 10.0,
        'max_translation': 0.5,
        'gallery_sampling': 0.95,       # standing scans are denser
        'probe_sampling': 0.8,          # sitting scans are sparser
        'void_count': 2,
        'void_radius': 0.12,
        'depth_noise': 0.005,
        'color_noise': 0.01,
        'landmark_noise': 0.0,
    },
    'normalize': {
        'resolution': 128,
        'x_half_extent': 1.25,
        'y_extent_below': 1.5,
        'y_extent_above': 1.5,
        'color_mode': 'luminance',      # or 'rgb'
    },
    'subspace': {
        'n_components': 0,              # 0 = keep every component above the floor
    },
    'matcher': {
        'metrics': 'l1,mahalanobis',
    },
    'fusion': {
        'scope': 'global',              # or 'per_probe'
        'standardize_image_fusion': True,
        'allow_signed_product': False,
    },
    'evalkit': {
        'far_operating_point': 0.01,
    },
}
