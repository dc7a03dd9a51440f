"""morphorisk: CT body-composition scoring and surgical-risk modeling.

Extracts a catalog of tissue area/volume/density scores from labeled CT
volumes, runs univariate screening, level selection, collinearity
pruning, confounder adjustment, and backward elimination, then fits and
evaluates logistic and Cox risk models with bootstrap inference.
"""
__version__ = "0.1.0"

from .cohort import derive_outcome, read_cohort, write_cohort
from .cox import SurvivalData, fit_cox
from .errors import MorphoriskError
from .kernels import BACKEND
from .logistic import fit_logistic
from .metrics import auc, bootstrap_ci, brier, harrell_c, integrated_brier
from .mvol import read_mvol, write_mvol
from .scores import CATALOG_SIZE, compute_catalog
from .survival import kaplan_meier, log_rank_test
from .volume import Demographics, LabeledVolume, LevelId, TissueLabel, \
    VertebralMap

__all__ = [
    "__version__", "BACKEND", "CATALOG_SIZE", "Demographics",
    "LabeledVolume", "LevelId", "MorphoriskError", "SurvivalData",
    "TissueLabel", "VertebralMap", "auc", "bootstrap_ci", "brier",
    "compute_catalog", "derive_outcome", "fit_cox", "fit_logistic",
    "harrell_c", "integrated_brier", "kaplan_meier", "log_rank_test",
    "read_cohort", "read_mvol", "write_cohort", "write_mvol",
]
