"""
Django settings for the event_detection_backend project.

The project has no HTTP surface: Django provides configuration, the
management-command CLI, the run ledger database and the test runner.
"""

import os
from pathlib import Path

try:
    from dotenv import load_dotenv
except ImportError:  # pragma: no cover - local fallback when dependency missing
    def load_dotenv():
        return None

load_dotenv()
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'evdet-local-only-not-a-secret')

DEBUG = os.getenv('DJANGO_DEBUG', 'false').lower() == 'true'

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'event_detection',
    'labeling',
]

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

EVDET_LOG_LEVEL = os.getenv('EVDET_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'event_detection': {'handlers': ['console'], 'level': EVDET_LOG_LEVEL, 'propagate': False},
        'labeling': {'handlers': ['console'], 'level': EVDET_LOG_LEVEL, 'propagate': False},
    },
}

# Pipeline runtime configuration
EVDET_THREADS = max(1, int(os.getenv('EVDET_THREADS', '1')))
EVDET_DETERMINISTIC = os.getenv('EVDET_DETERMINISTIC', 'false').lower() == 'true'
EVDET_RUNS_DIR = Path(os.getenv('EVDET_RUNS_DIR', str(BASE_DIR / 'runs')))
# Desk-scale training acceptance runs take tens of minutes; opt in explicitly.
EVDET_SLOW_TESTS = os.getenv('EVDET_SLOW_TESTS', 'false').lower() == 'true'

CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', CELERY_BROKER_URL)
CELERY_TASK_ALWAYS_EAGER = os.getenv('CELERY_TASK_ALWAYS_EAGER', 'false').lower() == 'true'
CELERY_TASK_EAGER_PROPAGATES = True
