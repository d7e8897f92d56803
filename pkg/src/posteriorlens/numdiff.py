"""High-order derivative estimation for scalar functions of one variable.

Two interchangeable methods are provided: 5-point central finite
differences, and a least-squares polynomial fit whose derivatives are
read off the fitted coefficients. Both report derivatives up to third
order, which is all the moment machinery ever needs (moments up to
order four).

All arithmetic is in 64-bit floats. The central stencils can become
unstable in low precision, hence no float32 path exists. Adaptive
Richardson extrapolation of the stencils is deliberately out of scope
for now (future work); callers tune the step through the scale hint.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

MAX_ORDER = 3

# Abscissae of the 5-point stencil, in units of the step h.
STENCIL_OFFSETS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass(frozen=True)
class PolyFitConfig:
    """Settings for the polynomial-fit derivative method.

    ``samples`` equispaced evaluations on [-half_range, half_range] are
    fitted by a degree-``degree`` polynomial in the least-squares sense.
    """

    half_range: float
    degree: int = 6
    samples: int = 33

    def __post_init__(self):
        if self.degree < 3:
            raise ValidationError(f"polynomial degree must be >= 3, got {self.degree}")
        if self.half_range <= 0:
            raise ValidationError(f"half_range must be positive, got {self.half_range}")
        if self.samples <= self.degree:
            raise ValidationError(
                f"samples ({self.samples}) must exceed degree ({self.degree})"
            )


@dataclass(frozen=True)
class DerivativeEstimate:
    """Derivatives of a scalar function at 0.

    ``derivatives[k-1]`` holds the k-th derivative, up to the requested
    order (at most 3).
    """

    value_at_zero: float
    derivatives: tuple[float, ...]
    step: float
    method: str = "finite-difference"

    def derivative(self, order: int) -> float:
        return self.derivatives[order - 1]


def default_step(scale_hint: float = 1.0) -> float:
    """Default finite-difference step: 1e-2 * max(1, scale_hint).

    Balances truncation against 64-bit rounding for functions whose
    natural scale of variation is ``scale_hint``.
    """
    return 1e-2 * max(1.0, float(scale_hint))


def _check_order(order: int) -> int:
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValidationError(f"derivative order must be in [1, {MAX_ORDER}], got {order}")
    return order


def stencil_derivatives(values: np.ndarray, h: float, order: int = MAX_ORDER,
                        method: str = "finite-difference") -> DerivativeEstimate:
    """Derivatives from pre-evaluated samples f(-2h), f(-h), f(0), f(h), f(2h).

    Useful when the five evaluations were produced by one batched call.
    """
    order = _check_order(order)
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (5,):
        raise ValidationError(f"expected 5 stencil values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        bad = STENCIL_OFFSETS[~np.isfinite(v)] * h
        raise NumericalError(f"non-finite function value at abscissa(e) {bad.tolist()}")
    fm2, fm1, f0, fp1, fp2 = v
    derivs = [(-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)]
    if order >= 2:
        derivs.append((-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h))
    if order >= 3:
        derivs.append((fp2 - 2.0 * fp1 + 2.0 * fm1 - fm2) / (2.0 * h ** 3))
    return DerivativeEstimate(float(f0), tuple(derivs), float(h), method)


def central_derivatives(f, order: int = MAX_ORDER, h: float | None = None,
                        scale_hint: float = 1.0) -> DerivativeEstimate:
    """Derivatives of ``f`` at 0 by 5-point central differences.

    Exactly five evaluations of ``f`` are made, at 0, +-h and +-2h:

        f'   = (-f(2h) + 8 f(h) - 8 f(-h) + f(-2h)) / (12 h)
        f''  = (-f(2h) + 16 f(h) - 30 f(0) + 16 f(-h) - f(-2h)) / (12 h^2)
        f''' = ( f(2h) - 2 f(h) + 2 f(-h) - f(-2h)) / (2 h^3)

    The first two stencils are exact for polynomials up to degree 4,
    the third up to degree 4 as well.
    """
    order = _check_order(order)
    if h is None:
        h = default_step(scale_hint)
    h = float(h)
    if h <= 0:
        raise ValidationError(f"step h must be positive, got {h}")
    values = np.array([float(f(t * h)) for t in STENCIL_OFFSETS])
    return stencil_derivatives(values, h, order)


def polyfit_derivatives(f, config: PolyFitConfig, order: int = MAX_ORDER) -> DerivativeEstimate:
    """Derivatives of ``f`` at 0 from a least-squares polynomial fit.

    ``f`` is sampled on ``config.samples`` equispaced points in
    [-half_range, half_range]; a degree-``config.degree`` polynomial is
    fitted by QR least squares on abscissae rescaled to [-1, 1] (for
    conditioning), and the derivatives at 0 are read off the fitted
    coefficients.
    """
    order = _check_order(order)
    r = config.half_range
    xs = np.linspace(-r, r, config.samples)
    if np.unique(xs).size <= config.degree:
        raise NumericalError(
            f"duplicate abscissae: only {np.unique(xs).size} distinct points "
            f"for a degree-{config.degree} fit (half_range too small?)"
        )
    ys = np.array([float(f(x)) for x in xs])
    if not np.all(np.isfinite(ys)):
        bad = xs[~np.isfinite(ys)]
        raise NumericalError(f"non-finite function value at abscissa(e) {bad.tolist()}")
    t = xs / r
    design = np.vander(t, config.degree + 1, increasing=True)
    q, rmat = np.linalg.qr(design)
    diag = np.abs(np.diag(rmat))
    if np.min(diag) <= 1e-12 * np.max(diag):
        raise NumericalError("rank-deficient polynomial design (duplicate abscissae?)")
    coeffs = np.linalg.solve(rmat, q.T @ ys)
    # d^k/dx^k at 0 of sum c_j (x/r)^j  =  k! c_k / r^k
    factorial = [1.0, 1.0, 2.0, 6.0]
    derivs = tuple(factorial[k] * coeffs[k] / r ** k for k in range(1, order + 1))
    return DerivativeEstimate(float(coeffs[0]), derivs, float(r), "polynomial-fit")
