"""Pure-jump multidimensional Levy models, orthogonal jump martingales,
BSDE/PDIE solvers and jump-market option pricing."""

from .errors import (
    CflError,
    ConfigError,
    ConvergenceError,
    DegenerateBasisError,
    DivergentMomentError,
    DomainError,
    LevyBsdeError,
    QuadratureError,
    UnsupportedRepresentationError,
)
from .multiindex import graded_lex_enumerate, grlex_key
from .models import (
    Atom,
    ClaytonCopulaParams,
    LevyModel,
    MarginalMeasure,
    MeixnerMarginal,
    MeixnerParams,
    PoissonUnitJump,
    check_hypothesis1,
    clayton_copula,
    common_poisson_measure,
    compensator_mean,
    joint_levy_density,
    load_model,
    martingale_residual,
    meixner_cumulant,
    meixner_levy_density,
    model_from_dict,
    model_to_dict,
    moment,
    risk_neutral_drift,
    tail_integral,
)

__version__ = "0.1.0"
