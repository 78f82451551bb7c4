"""First-order methods with basic-inequality instrumentation for GLMs.

The package pairs iterative algorithms (gradient descent, mirror descent,
exponentiated gradient, ISTA, NoLips) with their explicitly regularized
counterparts and the risk-bound machinery connecting the two.
"""

from implicitreg.glm_model import (
    Design,
    GlmFamily,
    GlmProblem,
    SaturationError,
    SpectralTerms,
    loss,
    loss_gradient,
    prediction_risk,
    smoothness_constant,
    spectral_terms,
)
from implicitreg.geometry import BregmanGeometry, divergence
from implicitreg.optimizers import (
    IterateTrace,
    Objective,
    StepSchedule,
    egd_run,
    gd_run,
    ista_run,
    mirror_descent_run,
    nolips_run,
    project_ball,
    projected_gd_run,
    soft_threshold,
)

__version__ = "0.1.0"

__all__ = [
    "BregmanGeometry",
    "Design",
    "GlmFamily",
    "GlmProblem",
    "IterateTrace",
    "Objective",
    "SaturationError",
    "SpectralTerms",
    "StepSchedule",
    "divergence",
    "egd_run",
    "gd_run",
    "ista_run",
    "loss",
    "loss_gradient",
    "mirror_descent_run",
    "nolips_run",
    "prediction_risk",
    "project_ball",
    "projected_gd_run",
    "smoothness_constant",
    "soft_threshold",
    "spectral_terms",
]
