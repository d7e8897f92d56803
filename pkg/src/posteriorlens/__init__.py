"""Posterior uncertainty extraction from MSE-optimal Gaussian denoisers.

Given only forward evaluations of a denoiser (the posterior-mean
function), the toolkit computes posterior principal components by
matrix-free subspace iteration, higher-order posterior central moments
along arbitrary directions by moment recursions in the denoiser's
derivatives, and maximum-entropy marginal densities fitted to those
moments. Analytic Gaussian-mixture oracles validate every path.
"""

__version__ = "0.1.0"

from .denoisers import (
    DenoiserHandle,
    GmmPrior,
    LinearGaussianSpec,
    gmm_prior_from_json,
    gmm_prior_to_json,
    make_gmm_denoiser,
    make_linear_gaussian_denoiser,
)
from .errors import (
    InfeasibleMomentsError,
    InstabilityError,
    MaxentConvergenceError,
    NumericalError,
    PosteriorLensError,
    ProtocolMismatchError,
    RemoteError,
    RemoteTimeoutError,
    SubspaceIterationError,
    ValidationError,
    WireDecodeError,
)
from .maxent import DensityEstimate, density_nll, evaluate_density, fit_maxent
from .moments import (
    DirectionalMomentSet,
    MomentTensorSet,
    NonCentralMomentSet,
    directional_moments,
    estimate_sigma,
    full_moment_tensors,
    noncentral_moments_scalar,
    univariate_moments,
)
from .numdiff import (
    DerivativeEstimate,
    PolyFitConfig,
    central_derivatives,
    polyfit_derivatives,
)
from .spectra import (
    PcConfig,
    PrincipalComponentSet,
    convergence_trace,
    jvp,
    posterior_pcs,
    posterior_pcs_from_matvec,
    read_plpc,
    write_plpc,
)
