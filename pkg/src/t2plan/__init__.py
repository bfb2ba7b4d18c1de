"""Train/test compute-allocation scaling models.

Fits a Chinchilla-style base law, a loss law with a repeated-sampling term,
and a Beta-regression pass@k model to checkpoint evaluations, then solves for
the model size, token count and sample count that best use a pair of
training and inference budgets.
"""

__version__ = "0.1.0"

from .approach1 import Approach1Config, Approach1Fit, fit_approach1, predict_loss_k  # noqa: E402
from .approach2 import Approach2Config, Approach2Fit, fit_beta_regression, predict_pass_at_k  # noqa: E402
from .chinchilla import ChinchillaConfig, ChinchillaFit, fit_chinchilla, predict_loss  # noqa: E402
from .planner import Budget, frontier, optimize_joint, isoflop_profile  # noqa: E402

__all__ = [
    "__version__",
    "Approach1Config",
    "Approach1Fit",
    "fit_approach1",
    "predict_loss_k",
    "Approach2Config",
    "Approach2Fit",
    "fit_beta_regression",
    "predict_pass_at_k",
    "ChinchillaConfig",
    "ChinchillaFit",
    "fit_chinchilla",
    "predict_loss",
    "Budget",
    "frontier",
    "optimize_joint",
    "isoflop_profile",
]
