import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Core Application
    APP_NAME = 'wptsim'
    APP_VERSION = '1.0.0'
    LOG_LEVEL = os.getenv('WPTSIM_LOG_LEVEL', 'INFO')

    # Output / input locations
    OUTPUT_ROOT = os.getenv('WPTSIM_OUTPUT_ROOT', 'runs')
    SCENARIO_DIR = os.getenv(
        'WPTSIM_SCENARIO_DIR',
        os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios'),
    )

    # Output file names
    WAVEFORM_FILE = 'waveforms.csv'
    MANIFEST_FILE = 'manifest.json'
    DIVERGED_MARKER = 'DIVERGED'
    METRICS_FILE = 'metrics.csv'

class DevelopmentConfig(Config):
    DEBUG = True

class ProductionConfig(Config):
    DEBUG = False
    LOG_LEVEL = os.getenv('WPTSIM_LOG_LEVEL', 'WARNING')

config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}

ENV = os.getenv('WPTSIM_ENV', 'development')
app_config = config.get(ENV, config['default'])()
