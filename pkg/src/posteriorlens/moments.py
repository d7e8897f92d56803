"""Posterior central moments from forward evaluations of a denoiser.

For the Gaussian observation model, the posterior central moments obey
a recursion in the derivatives of the posterior-mean function:

    mu_2 = sigma^2 mu_1'
    mu_3 = sigma^2 mu_2'
    mu_{k+1} = sigma^2 mu_k' + k mu_{k-1} mu_2        (k >= 3)

and the same recursion holds for the moments of the projection v^T x
with the derivative taken along v. Substituting the recursion into
itself gives closed expansions in the derivatives of mu_1 alone,

    mu_2 = sigma^2 g'(0)
    mu_3 = sigma^4 g''(0)
    mu_4 = sigma^6 g'''(0) + 3 sigma^4 g'(0)^2,       g(a) = v^T mu_1(y + a v),

which is what the fast paths below evaluate: one 5-point stencil pass,
five denoiser evaluations total. The literal nested recursion is kept
in ``noncentral_moments_scalar`` and ``full_moment_tensors``, where the
recursion structure itself is the thing under test.
"""

import io
import math
from dataclasses import dataclass

import numpy as np

from .denoisers import DenoiserHandle
from .errors import InstabilityError, ValidationError
from .numdiff import (
    MAX_ORDER,
    STENCIL_OFFSETS,
    PolyFitConfig,
    polyfit_derivatives,
    stencil_derivatives,
)

__all__ = [
    "DirectionalMomentSet",
    "MomentTensorSet",
    "NonCentralMomentSet",
    "univariate_moments",
    "directional_moments",
    "full_moment_tensors",
    "noncentral_moments_scalar",
    "estimate_sigma",
    "moments_to_csv",
]

# Tensor oracle cost grows as d^3 stencil evaluations; beyond d = 8 the
# 4th-order tensor (4096 entries) stops being a useful oracle.
MAX_TENSOR_DIM = 8


@dataclass(frozen=True)
class DirectionalMomentSet:
    """First four central moments of v^T x | y.

    ``central`` holds (mu2, mu3, mu4); ``mean`` is v^T mu1(y).
    """

    direction: np.ndarray
    mean: float
    central: tuple[float, float, float]
    sigma: float
    base_point: np.ndarray

    @property
    def mu2(self):
        return self.central[0]

    @property
    def mu3(self):
        return self.central[1]

    @property
    def mu4(self):
        return self.central[2]

    @property
    def skewness(self):
        return self.mu3 / self.mu2 ** 1.5

    @property
    def kurtosis(self):
        return self.mu4 / self.mu2 ** 2


@dataclass(frozen=True)
class MomentTensorSet:
    """Dense central moment tensors mu2 (d x d) ... mu4 (d^4) at one y."""

    dimension: int
    mu2: np.ndarray
    mu3: np.ndarray
    mu4: np.ndarray
    sigma: float
    base_point: np.ndarray
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class NonCentralMomentSet:
    """Raw scalar posterior moments m1..m4 (univariate only)."""

    m1: float
    m2: float
    m3: float
    m4: float
    sigma: float
    base_point: float

    def to_central(self) -> tuple[float, float, float]:
        """Standard raw -> central conversion, orders 2..4."""
        m1, m2, m3, m4 = self.m1, self.m2, self.m3, self.m4
        mu2 = m2 - m1 ** 2
        mu3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
        mu4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
        return mu2, mu3, mu4

    def __post_init__(self):
        if self.m2 < self.m1 ** 2 - 1e-9:
            raise InstabilityError(
                f"m2={self.m2} < m1^2={self.m1 ** 2}: negative implied variance"
            )


def _normalize_direction(v, d):
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.shape != (d,):
        raise ValidationError(f"direction shape {v.shape} != ({d},)")
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"direction norm {norm} not within 1e-6 of 1")
    return v / norm


def _moment_step(sigma, variance_hint):
    """1e-2 sqrt(lambda) when the direction's eigenvalue is known, else 1e-2 sigma."""
    if variance_hint is not None and variance_hint > 0:
        return 1e-2 * math.sqrt(variance_hint)
    return 1e-2 * sigma


def _section_derivatives(denoiser, y, v, sigma, method, variance_hint):
    """DerivativeEstimate of g(a) = v^T mu1(y + a v) at a = 0."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if isinstance(method, PolyFitConfig):
        def g(alpha):
            return float(v @ denoiser.evaluate(y + alpha * v, sigma))

        return polyfit_derivatives(g, method, order=MAX_ORDER)
    h = float(method) if method is not None else _moment_step(sigma, variance_hint)
    if h <= 0:
        raise ValidationError(f"step must be positive, got {h}")
    batch = y[None, :] + (STENCIL_OFFSETS * h)[:, None] * v[None, :]
    values = denoiser.evaluate(batch, sigma) @ v
    return stencil_derivatives(values, h, order=MAX_ORDER)


def _moments_from_derivatives(est, sigma):
    """Closed expansion of the recursion in the section derivatives."""
    s2 = sigma * sigma
    g1, g2, g3 = est.derivatives
    mu2 = s2 * g1
    mu3 = s2 * s2 * g2
    mu4 = s2 ** 3 * g3 + 3.0 * s2 * s2 * g1 * g1
    tol = 1e-9 * s2
    if mu2 < -tol:
        raise InstabilityError(
            f"negative variance estimate mu2={mu2} (tolerance {-tol}); "
            "try a different differentiation step h"
        )
    return float(est.value_at_zero), (float(max(mu2, 0.0)), float(mu3), float(mu4))


def directional_moments(denoiser: DenoiserHandle, y, v, sigma: float,
                        method=None, variance_hint: float | None = None) -> DirectionalMomentSet:
    """Central moments of v^T x | y, orders 1 through 4.

    One derivative estimate of the scalar section g(a) = v^T mu1(y + a v)
    delivers all four moments. ``method`` is a finite-difference step
    (float), a ``PolyFitConfig``, or None for the default step
    1e-2 sqrt(variance_hint) (falling back to 1e-2 sigma).

    Note mu4 >= mu2^2 is NOT asserted: it holds for exact posterior
    means but the numerical estimate may transiently violate it.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    v = _normalize_direction(v, denoiser.dimension)
    est = _section_derivatives(denoiser, y, v, sigma, method, variance_hint)
    mean, central = _moments_from_derivatives(est, sigma)
    return DirectionalMomentSet(v, mean, central, float(sigma), y.copy())


def univariate_moments(denoiser: DenoiserHandle, y, sigma: float,
                       method=None) -> DirectionalMomentSet:
    """Scalar-denoiser moments: the directional case with v = +1."""
    if denoiser.dimension != 1:
        raise ValidationError("univariate_moments requires a 1-D denoiser")
    return directional_moments(denoiser, [float(y)], [1.0], sigma, method=method)


def _directional_tensor_derivative(fn, y, j, h):
    """5-point derivative of a tensor-valued function along coordinate j."""
    e = np.zeros_like(y)
    e[j] = 1.0
    fm2 = fn(y - 2.0 * h * e)
    fm1 = fn(y - h * e)
    fp1 = fn(y + h * e)
    fp2 = fn(y + 2.0 * h * e)
    return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)


def full_moment_tensors(denoiser: DenoiserHandle, y, sigma: float,
                        h: float | None = None) -> MomentTensorSet:
    """Dense central moment tensors mu2, mu3, mu4 by the literal recursion.

    mu2 is sigma^2 times the full finite-difference Jacobian
    (symmetrized), mu3 differentiates mu2's entries coordinate-wise, and
    mu4 applies the k = 3 recursion line

        [mu4]_{i1..i4} = sigma^2 d[mu3]_{i1,i2,i3}/dy_{i4}
                         + sum_j [mu2]_{l_j} [mu2]_{i_j, i4}

    with l_j the multi-index (i_1..i_k) minus its j-th entry. This is a
    verification oracle: cost grows as d^3 stencil evaluations and the
    dimension is capped at 8.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    d = y.size
    if d != denoiser.dimension:
        raise ValidationError(f"y has dimension {d}, denoiser expects {denoiser.dimension}")
    if d > MAX_TENSOR_DIM:
        raise ValidationError(f"full tensors are capped at d <= {MAX_TENSOR_DIM}, got {d}")
    if h is None:
        h = 1e-2 * sigma
    s2 = sigma * sigma
    warnings = []

    def jacobian(z):
        points = []
        for j in range(d):
            for t in STENCIL_OFFSETS:
                if t == 0.0:
                    continue
                p = z.copy()
                p[j] += t * h
                points.append(p)
        out = denoiser.evaluate(np.array(points), sigma)
        jac = np.empty((d, d))
        for j in range(d):
            fm2, fm1, fp1, fp2 = out[4 * j : 4 * j + 4]
            jac[:, j] = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
        return jac

    def mu2_fn(z, record=False):
        jac = jacobian(z)
        asym = np.max(np.abs(jac - jac.T))
        if record and asym > 1e-4 * max(np.max(np.abs(jac)), 1e-300):
            warnings.append(
                f"Jacobian asymmetry {asym:.3e} exceeds 1e-4 of its max entry; "
                "the denoiser may not be an exact posterior mean"
            )
        return s2 * 0.5 * (jac + jac.T)

    def mu3_fn(z):
        t = np.empty((d, d, d))
        for j in range(d):
            t[:, :, j] = s2 * _directional_tensor_derivative(mu2_fn, z, j, h)
        return t

    mu2 = mu2_fn(y, record=True)
    min_eig = float(np.min(np.linalg.eigvalsh(mu2)))
    if min_eig < -1e-9 * max(float(np.trace(mu2)), 0.0):
        raise InstabilityError(
            f"covariance tensor has negative eigenvalue {min_eig}; "
            "the denoiser is not a valid posterior mean at this point"
        )
    mu3 = mu3_fn(y)
    mu4 = np.empty((d, d, d, d))
    for j in range(d):
        mu4[:, :, :, j] = s2 * _directional_tensor_derivative(mu3_fn, y, j, h)
    # correction term: pairs l_j of (i1, i2, i3) with the j-th index removed
    corr = (
        np.einsum("bc,ad->abcd", mu2, mu2)
        + np.einsum("ac,bd->abcd", mu2, mu2)
        + np.einsum("ab,cd->abcd", mu2, mu2)
    )
    mu4 = mu4 + corr
    return MomentTensorSet(d, mu2, mu3, mu4, float(sigma), y.copy(), tuple(warnings))


def contract_tensor_moments(tensors: MomentTensorSet, v) -> tuple[float, float, float]:
    """Directional moments as full contractions sum v_{i1}..v_{ik} [mu_k]."""
    v = _normalize_direction(v, tensors.dimension)
    mu2 = float(v @ tensors.mu2 @ v)
    mu3 = float(np.einsum("abc,a,b,c->", tensors.mu3, v, v, v))
    mu4 = float(np.einsum("abcd,a,b,c,d->", tensors.mu4, v, v, v, v))
    return mu2, mu3, mu4


def noncentral_moments_scalar(denoiser: DenoiserHandle, y: float, sigma: float,
                              h: float | None = None) -> NonCentralMomentSet:
    """Raw moments m1..m4 of x | y by the literal non-central recursion.

    m_{k+1}(y) = sigma^2 m_k'(y) + m_k(y) mu_1(y), with each m_k a
    numerically-differentiable function of y, evaluated on a widening
    set of abscissae around y (each nesting level extends the reach of
    the stencil by +-2h). Retained as a cross-check of the
    central-moment route.
    """
    if denoiser.dimension != 1:
        raise ValidationError("noncentral_moments_scalar requires a 1-D denoiser")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if h is None:
        h = 1e-2 * sigma
    s2 = sigma * sigma

    def m1(z):
        return float(denoiser.evaluate(np.array([[z]]), sigma)[0, 0])

    def deriv(fn, z, step):
        vals = [fn(z + t * step) for t in STENCIL_OFFSETS]
        return (-vals[4] + 8.0 * vals[3] - 8.0 * vals[1] + vals[0]) / (12.0 * step)

    def m2(z):
        return s2 * deriv(m1, z, h) + m1(z) ** 2

    def m3(z):
        return s2 * deriv(m2, z, h) + m2(z) * m1(z)

    y = float(y)
    m4 = s2 * deriv(m3, y, h) + m3(y) * m1(y)
    return NonCentralMomentSet(m1(y), m2(y), m3(y), m4, float(sigma), y)


def estimate_sigma(denoiser: DenoiserHandle, y, eval_sigma: float = 1.0) -> float:
    """Naive noise-level estimate sigma^2 = ||mu1(y) - y||^2 / d.

    One denoiser evaluation. For blind denoisers ``eval_sigma`` is a
    placeholder (the handle ignores it); for sigma-aware denoisers it is
    the operating noise level passed through to the evaluation. The
    estimate is biased low when the posterior mean shrinks y heavily
    (e.g. very confident priors); it is a starting point, not a
    calibrated estimator.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = denoiser.evaluate(y, eval_sigma)
    return float(np.linalg.norm(out - y) / math.sqrt(y.size))


def moments_to_csv(rows) -> str:
    """CSV export: base_point_id, direction_id, sigma, mu1, mu2, mu3, mu4.

    ``rows`` is an iterable of (base_point_id, direction_id, set).
    """
    buf = io.StringIO()
    buf.write("base_point_id,direction_id,sigma,mu1,mu2,mu3,mu4\n")
    for base_id, dir_id, ms in rows:
        buf.write(
            f"{base_id},{dir_id},{ms.sigma!r},{ms.mean!r},"
            f"{ms.mu2!r},{ms.mu3!r},{ms.mu4!r}\n"
        )
    return buf.getvalue()
