import os
from dotenv import load_dotenv

load_dotenv()


def _flag(name, default):
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    # Filling construction
    FILLING_S = float(os.getenv('FILLING_S', 2.0))
    MAX_LEVEL = int(os.getenv('MAX_LEVEL', 10))
    MAX_VERTICES = int(os.getenv('MAX_VERTICES', 60000))
    BALL_SLACK = float(os.getenv('BALL_SLACK', 1e-12))
    CARPET_MAX_DEPTH = 6

    # Constraint generation
    INNER_TOL = float(os.getenv('INNER_TOL', 1e-8))
    OUTER_TOL = float(os.getenv('OUTER_TOL', 1e-6))
    GAP_TOL = float(os.getenv('GAP_TOL', 1e-6))
    MAX_CONSTRAINTS = int(os.getenv('MAX_CONSTRAINTS', 10000))
    MAX_ROUNDS = int(os.getenv('MAX_ROUNDS', 400))
    INNER_MAX_ITER = int(os.getenv('INNER_MAX_ITER', 5000))
    PATHS_PER_ROUND = int(os.getenv('PATHS_PER_ROUND', 32))
    POLISH_PASSES = int(os.getenv('POLISH_PASSES', 2))
    POLISH_COORDINATES = int(os.getenv('POLISH_COORDINATES', 24))

    # Capacity / modulus transfer
    LIFT_K = float(os.getenv('LIFT_K', 2.0))
    LIFT_P_FACTOR = float(os.getenv('LIFT_P_FACTOR', 0.9))
    SERIES_TAIL_TOL = float(os.getenv('SERIES_TAIL_TOL', 1e-9))
    ALLOW_UNIT_EXPONENT = _flag('ALLOW_UNIT_EXPONENT', 'false')
    TRANSFER_CEILING = float(os.getenv('TRANSFER_CEILING', 0)) or None
    MAX_EXPONENT = 16.0

    # Execution
    N_JOBS = int(os.getenv('N_JOBS', 1))
    CACHE_FOLDER = os.getenv('CACHE_FOLDER', './cache')
    REPORT_FOLDER = os.getenv('REPORT_FOLDER', './reports')
    SCENARIO_FOLDER = os.getenv('SCENARIO_FOLDER', './scenarios')
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # Report schema
    REPORT_SCHEMA_VERSION = 1
