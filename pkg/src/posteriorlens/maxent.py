"""Maximum-entropy densities on a bounded interval from four moments.

Among all densities on [a, b] with prescribed raw moments m_1..m_4, the
entropy maximizer has the exponential-polynomial form

    p(x) = exp(l0 + l1 t + l2 t^2 + l3 t^3 + l4 t^4),

with t the affine rescaling of x to [-1, 1] (rescaling conditions the
problem). The coefficients solve the convex dual

    minimize  log Z(l) - sum_j l_j m_j,

whose gradient is the moment mismatch and whose Hessian is the 4 x 4
covariance of (t, t^2, t^3, t^4) under p — so a damped Newton iteration
with grid quadrature for Z converges fast and reliably for feasible
moment vectors.
"""

import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleMomentsError, MaxentConvergenceError, ValidationError

__all__ = [
    "DensityEstimate",
    "fit_maxent",
    "evaluate_density",
    "density_nll",
    "density_entropy",
    "sample_density",
    "density_to_csv",
    "density_sidecar_json",
    "default_support",
]

log = logging.getLogger(__name__)

DEFAULT_GRID = 2048
GRAD_TOL = 1e-9
MAX_NEWTON_STEPS = 200
MAX_HALVINGS = 40


@dataclass(frozen=True)
class DensityEstimate:
    """A fitted max-entropy density on [a, b].

    ``coefficients`` are l0..l4 in the rescaled coordinate
    t = (2x - a - b) / (b - a); l0 absorbs both the normalizer and the
    Jacobian of the rescaling, so exp(poly(t(x))) integrates to 1 in x.
    ``target_moments`` are the raw t-moments m1..m4 the fit matched and
    ``fit_residual`` the largest relative mismatch achieved.
    """

    support: tuple[float, float]
    grid: np.ndarray
    log_density: np.ndarray
    coefficients: np.ndarray
    target_moments: np.ndarray
    fit_residual: float

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)


def default_support(mean: float, mu2: float, data_range=None) -> tuple[float, float]:
    """[mean - 6 sqrt(mu2), mean + 6 sqrt(mu2)], clipped to a data range."""
    half = 6.0 * math.sqrt(mu2)
    lo, hi = mean - half, mean + half
    if data_range is not None:
        lo, hi = max(lo, data_range[0]), min(hi, data_range[1])
        if lo >= hi:
            raise ValidationError(f"support collapsed after clipping to {data_range}")
    return lo, hi


def _raw_moments_from_central(mean, central):
    mu2, mu3, mu4 = central
    m1 = mean
    m2 = mean ** 2 + mu2
    m3 = mean ** 3 + 3 * mean * mu2 + mu3
    m4 = mean ** 4 + 6 * mean ** 2 * mu2 + 4 * mean * mu3 + mu4
    return np.array([m1, m2, m3, m4])


def _log_partition(lams, t, powers):
    """log Z, t-moment vector E[t^j] (j=1..8), via stable grid trapezoid."""
    poly = powers[:, 1:5] @ lams
    peak = np.max(poly)
    weights = np.exp(poly - peak)
    dt = t[1] - t[0]
    z = np.trapezoid(weights, dx=dt)
    moments = np.array([np.trapezoid(weights * powers[:, j], dx=dt) for j in range(1, 9)]) / z
    return peak + math.log(z), moments


def fit_maxent(mean: float, central, support, grid: int = DEFAULT_GRID,
               order: int = 4) -> DensityEstimate:
    """Fit the max-entropy density matching mean and central moments.

    ``central`` is (mu2, mu3, mu4); ``support`` the interval [a, b],
    which must contain mean +- 3 sqrt(mu2). ``order`` = 2 fits only the
    first two moments (the Gaussian-truncated reference); order = 4 is
    the default full fit.

    Raises ``InfeasibleMomentsError`` for moment vectors no distribution
    can have, and ``MaxentConvergenceError`` (carrying the best iterate)
    if Newton stalls — which is how requests whose tails cannot fit in
    the support surface.
    """
    if order not in (2, 4):
        raise ValidationError(f"order must be 2 or 4, got {order}")
    mu2, mu3, mu4 = (float(c) for c in central)
    if mu2 <= 0:
        raise InfeasibleMomentsError(f"mu2 must be positive, got {mu2}")
    a, b = float(support[0]), float(support[1])
    if not a < b:
        raise ValidationError(f"support [{a}, {b}] is empty")
    sd = math.sqrt(mu2)
    # 5% slack: for strongly bimodal targets sqrt(mu2) overstates the
    # needed coverage, and slightly tighter supports remain fittable.
    reach = 3.0 * sd * 0.95
    if mean - reach < a or mean + reach > b:
        raise ValidationError(
            f"support [{a}, {b}] must contain mean +- 3 sd = [{mean - 3 * sd}, {mean + 3 * sd}]"
        )
    if order == 4 and mu4 < mu2 ** 2 + mu3 ** 2 / mu2 - 1e-12 * mu2 ** 2:
        raise InfeasibleMomentsError(
            f"mu4={mu4} below the Cauchy-Schwarz floor mu2^2 + mu3^2/mu2 = "
            f"{mu2 ** 2 + mu3 ** 2 / mu2}: no distribution has these moments"
        )

    # rescale to t in [-1, 1]
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    mean_t = (mean - center) / half
    central_t = (mu2 / half ** 2, mu3 / half ** 3, mu4 / half ** 4)
    targets = _raw_moments_from_central(mean_t, central_t)

    t = np.linspace(-1.0, 1.0, grid)
    powers = np.vander(t, 9, increasing=True)  # t^0 .. t^8

    mu2_t = central_t[0]
    lams = np.array([mean_t / mu2_t, -0.5 / mu2_t, 0.0, 0.0])
    free = slice(0, 2) if order == 2 else slice(0, 4)
    if order == 2:
        targets_used = targets[:2]
    else:
        targets_used = targets

    def objective(l):
        logz, _ = _log_partition(l, t, powers)
        return logz - float(l[free] @ targets_used)

    current = objective(lams)
    residual = np.inf
    converged = False
    for _ in range(MAX_NEWTON_STEPS):
        logz, mom = _log_partition(lams, t, powers)
        grad = mom[:4] - targets
        if order == 2:
            grad = grad[:2]
        residual = float(np.max(np.abs(grad)))
        if residual <= GRAD_TOL:
            converged = True
            break
        k = 2 if order == 2 else 4
        hess = np.empty((k, k))
        for i in range(k):
            for j in range(k):
                hess[i, j] = mom[i + j + 1] - mom[i] * mom[j]
        try:
            step = np.linalg.solve(hess + 1e-13 * np.trace(hess) * np.eye(k), -grad)
        except np.linalg.LinAlgError:
            raise MaxentConvergenceError(
                "singular Hessian in Newton step", lams.copy(), residual
            )
        scale = 1.0
        for _ in range(MAX_HALVINGS):
            trial = lams.copy()
            trial[free] = lams[free] + scale * step
            value = objective(trial)
            if value < current + 1e-12 * abs(current):
                lams = trial
                current = value
                break
            scale *= 0.5
        else:
            break
    if not converged:
        logz, mom = _log_partition(lams, t, powers)
        grad = mom[:4] - targets
        residual = float(np.max(np.abs(grad[: 2 if order == 2 else 4])))
        if residual > GRAD_TOL:
            raise MaxentConvergenceError(
                f"Newton did not converge (residual {residual:.3e})", lams.copy(), residual
            )

    logz, mom = _log_partition(lams, t, powers)
    l0 = -logz - math.log(half)
    coefficients = np.concatenate([[l0], lams])
    k_fit = 2 if order == 2 else 4
    mismatch = np.abs(mom[:k_fit] - targets[:k_fit])
    scales = np.maximum(
        np.abs(targets[:k_fit]), mu2_t ** (np.arange(1, k_fit + 1) / 2.0)
    )
    fit_residual = float(np.max(mismatch / scales))
    x = np.linspace(a, b, grid)
    log_density = powers[:, :5] @ coefficients
    return DensityEstimate((a, b), x, log_density, coefficients, targets, fit_residual)


def evaluate_density(est: DensityEstimate, points) -> np.ndarray:
    """Closed-form density at arbitrary in-support points.

    Re-evaluates the exponential polynomial (never interpolates the
    grid). Points outside the support are a domain error.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    a, b = est.support
    if np.any(pts < a) or np.any(pts > b):
        raise ValidationError(f"points outside support [{a}, {b}]")
    tt = (2.0 * pts - a - b) / (b - a)
    return np.exp(np.vander(tt, 5, increasing=True) @ est.coefficients)


def density_nll(est: DensityEstimate, samples,
                floor_log_density: float = math.log(1e-12)) -> float:
    """Mean negative log-likelihood of samples under the fit.

    Out-of-support samples are counted at ``floor_log_density`` and
    reported through the module logger rather than raising: NLL
    comparisons must stay defined when a rival fit's support misses a
    few tail samples.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise ValidationError("empty sample set")
    a, b = est.support
    inside = (samples >= a) & (samples <= b)
    logp = np.full(samples.shape, floor_log_density)
    if np.any(inside):
        logp[inside] = np.log(evaluate_density(est, samples[inside]))
    n_out = int((~inside).sum())
    if n_out:
        log.warning("density_nll: %d of %d samples outside support", n_out, samples.size)
    return float(-np.mean(logp))


def density_entropy(est: DensityEstimate) -> float:
    """Differential entropy -int p log p by grid trapezoid."""
    p = est.density
    return float(-np.trapezoid(p * est.log_density, est.grid))


def sample_density(est: DensityEstimate, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling on the fit's grid (piecewise-linear CDF)."""
    p = est.density
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(est.grid))])
    cdf /= cdf[-1]
    u = rng.uniform(size=n)
    return np.interp(u, cdf, est.grid)


def density_to_csv(est: DensityEstimate) -> str:
    buf = io.StringIO()
    buf.write("x,p\n")
    for x, p in zip(est.grid, est.density):
        buf.write(f"{float(x)!r},{float(p)!r}\n")
    return buf.getvalue()


def density_sidecar_json(est: DensityEstimate) -> str:
    return json.dumps(
        {
            "support": list(est.support),
            "coefficients": est.coefficients.tolist(),
            "target_moments": est.target_moments.tolist(),
            "fit_residual": est.fit_residual,
        }
    )
