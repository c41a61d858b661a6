"""
Configuration for nullctl

Runtime settings come from the environment (optionally a .env file);
numerical defaults live here so the CLI, the library and the tests agree.
"""

import os
from dotenv import load_dotenv

load_dotenv()

# Output / logging
OUTPUT_DIR = os.getenv('NULLCTL_OUTPUT_DIR', os.path.join(os.getcwd(), 'results'))
LOG_LEVEL = os.getenv('NULLCTL_LOG_LEVEL', 'INFO').upper()
LOG_FILE = os.getenv('NULLCTL_LOG_FILE', '')
SHOW_PROGRESS = os.getenv('NULLCTL_PROGRESS', '1').lower() not in ('0', 'false', 'no', '')

# Discretization defaults
DEFAULT_GRADING_LAPLACIAN = 1.0
DEFAULT_GRADING_DEGENERATE = 2.0
DEFAULT_GRADING_COUPLED = 1.0
DT_FRACTION_OF_HORIZON = 1e-3
DT_STEPS_PER_INTERVAL = 50

# Tolerances
WEIGHT_SUM_TOL = 1e-12
EIGEN_RESIDUAL_TOL = 1e-8
STEP_RESIDUAL_TOL = 1e-10
PROJECTION_TOL = 1e-10
SENTINEL_SIGMA_RATIO = 1e-14
NULL_SPACE_TOL = 1e-14
CERTIFICATE_BASE_MARGIN = 1e-6

# Spectral inequalities
DEFAULT_GAMMA = 1.9
MIN_REGION_CELLS = 10
MIN_SERIES_POINTS = 6
MIN_GROWTH_POINTS = 10
BOUND_RATIO_LIMIT = 10.0

# HUM
HUM_REGULARIZATION_SCALE = 1e-12

# Lebeau-Robbiano schedule
DEFAULT_C0 = 64.0
MIN_C0 = 32.0
DEFAULT_K_MAX = 3
DEFAULT_RHO_CAP = 16

# Observability
L1_STARTS = 32
POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_MAX_ITER = 20000
DENSITY_FRACTION = 1.0 / 3.0
NEGATIVE_DEMO_RUNS = 16
NEGATIVE_DEMO_TOL = 1e-10
INTERPOLATION_ENVELOPE_LIMIT = 50.0

# Reports
CSV_FLOAT_FORMAT = '%.12g'
