"""
Configuration management for Berezin Lab
"""

import os
import yaml
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
LOGS_DIR = BASE_DIR / "logs"
RESULTS_DIR = BASE_DIR / "results"

# Load YAML configuration
CONFIG_FILE = BASE_DIR / "config.yaml"
with open(CONFIG_FILE, 'r', encoding='utf-8') as f:
    CONFIG = yaml.safe_load(f) or {}


def _env_int(name, default):
    value = os.getenv(name)
    return int(value if value is not None else default)


def _env_float(name, default):
    value = os.getenv(name)
    return float(value if value is not None else default)


def _env_str(name, default):
    value = os.getenv(name)
    return value.strip() if value is not None else default


class Config:
    """Numerical and runtime configuration"""

    # Database
    DATABASE_URL = os.getenv('DATABASE_URL', f"sqlite:///{DATA_DIR / 'berezin_lab.db'}")

    # System
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    THREADS = _env_int('BEREZIN_LAB_THREADS', CONFIG.get('threads', 1))
    SEED = _env_int('BEREZIN_LAB_SEED', CONFIG.get('seed', 20240101))

    # Quadrature
    QUADRATURE_MARGIN = _env_int('QUADRATURE_MARGIN', CONFIG.get('quadrature_margin', 4))
    QUADRATURE_RTOL = _env_float('QUADRATURE_RTOL', CONFIG.get('quadrature_rtol', 1e-10))
    QUADRATURE_MAX_DOUBLINGS = _env_int('QUADRATURE_MAX_DOUBLINGS', CONFIG.get('quadrature_max_doublings', 6))
    DIVISION_FLOOR = _env_float('DIVISION_FLOOR', CONFIG.get('division_floor', 1e-300))

    # Operators and spectra
    HERMITIAN_RTOL = _env_float('HERMITIAN_RTOL', CONFIG.get('hermitian_rtol', 1e-8))
    CLUSTER_RTOL = _env_float('CLUSTER_RTOL', CONFIG.get('cluster_rtol', 1e-6))
    NEGATIVE_EIGENVALUE_FLOOR = _env_float('NEGATIVE_EIGENVALUE_FLOOR', CONFIG.get('negative_eigenvalue_floor', 1e-12))

    # Poisson bracket
    POISSON_CONSTANT = _env_float('POISSON_CONSTANT', CONFIG.get('poisson_constant', 6.283185307179586))
    POISSON_CALIBRATION_LEVEL = _env_int('POISSON_CALIBRATION_LEVEL', CONFIG.get('poisson_calibration_level', 12))

    # Donaldson iterations
    TOL_FIXED = _env_float('TOL_FIXED', CONFIG.get('tol_fixed', 1e-11))
    MAX_ITERS = _env_int('MAX_ITERS', CONFIG.get('max_iters', 10000))
    GAUGE = _env_str('GAUGE', CONFIG.get('gauge', 'trace'))
    RATE_WINDOW = _env_int('RATE_WINDOW', CONFIG.get('rate_window', 20))
    NEUTRAL_TOL = _env_float('NEUTRAL_TOL', CONFIG.get('neutral_tol', 1e-8))
    FD_STEP = _env_float('FD_STEP', CONFIG.get('fd_step', 1e-5))
    FD_NEUTRAL_TOL = _env_float('FD_NEUTRAL_TOL', CONFIG.get('fd_neutral_tol', 1e-5))
    FD_REFINEMENTS = _env_int('FD_REFINEMENTS', CONFIG.get('fd_refinements', 1))
    FD_MAX_SHRINKS = _env_int('FD_MAX_SHRINKS', CONFIG.get('fd_max_shrinks', 4))
    DIVERGENCE_RATIO = _env_float('DIVERGENCE_RATIO', CONFIG.get('divergence_ratio', 1e8))
    RANDOM_DELTA = _env_float('RANDOM_DELTA', CONFIG.get('random_delta', 1e-3))

    # Quantization in stages
    SYMBOL_SAMPLES = _env_int('SYMBOL_SAMPLES', CONFIG.get('symbol_samples', 64))
    FUNCTORIALITY_TOL = _env_float('FUNCTORIALITY_TOL', CONFIG.get('functoriality_tol', 1e-8))

    # Moment map checks
    MOMENT_TOL = _env_float('MOMENT_TOL', CONFIG.get('moment_tol', 1e-5))
    MOMENT_TESTS = _env_int('MOMENT_TESTS', CONFIG.get('moment_tests', 4))

    # Paths
    DATA_DIR = DATA_DIR
    LOGS_DIR = LOGS_DIR
    RESULTS_DIR = RESULTS_DIR

    @classmethod
    def validate(cls):
        """Validate numeric ranges"""
        errors = []

        if cls.THREADS < 1 and cls.THREADS != -1:
            errors.append("BEREZIN_LAB_THREADS must be a positive worker count or -1")

        for name in ('QUADRATURE_RTOL', 'DIVISION_FLOOR', 'HERMITIAN_RTOL', 'CLUSTER_RTOL',
                     'TOL_FIXED', 'NEUTRAL_TOL', 'FD_STEP', 'RANDOM_DELTA'):
            if getattr(cls, name) <= 0:
                errors.append(f"{name} must be positive")

        if cls.QUADRATURE_MARGIN < 0:
            errors.append("QUADRATURE_MARGIN must be nonnegative")

        if cls.MAX_ITERS < 1:
            errors.append("MAX_ITERS must be at least 1")

        if cls.RATE_WINDOW < 2:
            errors.append("RATE_WINDOW must be at least 2")

        if cls.GAUGE not in {'trace', 'det'}:
            errors.append(f"GAUGE must be 'trace' or 'det', got {cls.GAUGE!r}")

        if errors:
            raise ValueError(f"Configuration errors: {', '.join(errors)}")

        return True
