"""Tangent-approximation variational EM for strongly super-Gaussian likelihoods."""

from .bqr import BQRConfig, fit_bqr, update_bqr
from .core import (
    Dataset,
    FitOptions,
    FitReport,
    LinearTerms,
    VariationalState,
    elbo,
    elbo_gradient,
    fit,
    kappa,
    make_state,
    update_known_scale,
    update_type1,
    update_type2,
)
from .errors import (
    DomainError,
    InvariantError,
    NumericalError,
    ParseError,
    QuadratureError,
    TavieError,
)
from .families import (
    SSGFamily,
    Theta,
    TypeIICoefficients,
    A_coef,
    ald_logpdf,
    gamma_coef,
    log_likelihood,
    log_minorizer,
    typeII_coefficients,
)
from .priors import GaussianParams, NormalGammaParams, credible_interval, ng_point_estimate, sample

__version__ = "0.1.0"
