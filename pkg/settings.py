"""
Application settings and default values.
"""

# Ground truth shared by the shipped structural equation models
N_COVARIATES = 12
BETA_STAR = (3.0, 2.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
SEM_MODELS = ("model0", "model1", "model2", "model3")

# Optimizer Configuration
DEFAULT_MAX_SUPPORT_DIM = 20
DEFAULT_RIDGE_JITTER = 1e-10
TIE_TOLERANCE = 1e-12
# Supports per vectorized solve batch
SUPPORT_BATCH_SIZE = 4096
# Condition number above which a support's normal equations count as failed
MAX_CONDITION_NUMBER = 1e13

# Estimation Methods
METHODS = ("iaei", "oracle", "eills_observe", "eills_impute", "eills_mix")
PENALTY_VARIANTS = ("basic", "enhanced")
DEFAULT_GAMMA = 1.0

# Imputer Configuration
IMPUTER_FAMILIES = ("ols", "random_forest", "boosted_trees")
IMPUTATION_STRATEGIES = ("precise", "bias", "hbias")
DEFAULT_IMPUTER_FAMILY = "ols"
DEFAULT_STRATEGY = "precise"
DEFAULT_IMPUTER_SEED = 0

# Shift magnitudes for the pooled strategies ("small" < "slightly larger")
BIAS_SHIFT_DELTA = 0.5
HBIAS_SHIFT_DELTA = 1.0
HBIAS_NOISE_SD = 0.5

RANDOM_FOREST_DEFAULTS = {
    "n_trees": 100,
    "max_depth": 6,
    "min_leaf": 5,
    "bootstrap": True,
}
BOOSTED_TREES_DEFAULTS = {
    "n_rounds": 200,
    "max_depth": 3,
    "min_leaf": 1,
    "learning_rate": 0.1,
}

# Imputer training data in simulation mode: "fresh" or "labeled"
DEFAULT_IMPUTER_TRAINING = "fresh"

# Simulation Configuration (desk-scale profile)
DEFAULT_SAMPLE_SIZES = (250, 500, 1000)
DEFAULT_MISSING_RATIOS = (0.3, 0.5, 0.7)
DEFAULT_GAMMAS = (1.0, 5.0, 10.0, 20.0)
DEFAULT_REPLICATIONS = 100
DEFAULT_MASTER_SEED = 0
DEFAULT_THREADS = 1

# Cross-Validation Configuration
CV_MASK_RATE = 0.85
CV_ENV_COLUMN = "env"
CV_DATE_COLUMN = "date"
CV_MIN_MONTHS = 2

# CSV Schema
CSV_ENV_COLUMN = "env"
CSV_OUTCOME_COLUMN = "y"
CSV_WEIGHT_COLUMN = "weight"
CSV_COVARIATE_PREFIX = "x"

# Reports
REPORT_SCHEMA = "iaei-report/1"
REPORT_FORMATS = ("json", "csv")
MODEL_FORMAT = "iaei-imputer/1"

# Exit Codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARSE = 3
EXIT_RUNTIME = 4

# Logging Configuration
LOG_LEVEL = "WARNING"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
