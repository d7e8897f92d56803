"""Denoiser abstraction and analytic reference denoisers.

A denoiser here is nothing more than an evaluatable posterior-mean
function mu1(y) for the additive white Gaussian observation model
y = x + n, n ~ N(0, sigma^2 I). Everything downstream (moments,
principal components, marginal densities) consumes only forward
evaluations of this function.

Two closed-form references are provided:

* a linear-Gaussian denoiser (Gaussian prior with diagonal covariance),
  whose posterior is exactly Gaussian, and
* a Gaussian-mixture denoiser, whose posterior is a Gaussian mixture
  with component responsibilities, means and covariances known in
  closed form.
"""

import json
import threading
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import ValidationError

__all__ = [
    "DenoiserHandle",
    "LinearGaussianSpec",
    "GmmPrior",
    "make_linear_gaussian_denoiser",
    "make_gmm_denoiser",
    "gmm_prior_to_json",
    "gmm_prior_from_json",
]


@dataclass
class DenoiserHandle:
    """An evaluatable posterior-mean function.

    ``evaluate(batch, sigma)`` maps a (B, d) float64 batch of noisy
    observations to the (B, d) batch of posterior means. A (d,) vector
    or, when d == 1, a plain scalar is also accepted and echoed back in
    the same shape. Evaluation must be deterministic and all-float64.

    ``sigma_aware`` is False for blind denoisers, which ignore the
    sigma argument.
    """

    evaluate: "callable"
    dimension: int
    sigma_aware: bool = True

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError(f"dimension must be >= 1, got {self.dimension}")
        inner = self.evaluate

        def _evaluate(batch, sigma):
            arr = np.asarray(batch, dtype=np.float64)
            scalar = arr.ndim == 0
            arr = np.ascontiguousarray(arr)
            if scalar:
                if self.dimension != 1:
                    raise ValidationError("scalar input only valid for 1-D denoisers")
                arr = arr.reshape(1, 1)
            single = arr.ndim == 1
            if single:
                arr = arr.reshape(1, -1)
            if arr.ndim != 2 or arr.shape[1] != self.dimension:
                raise ValidationError(
                    f"batch shape {np.shape(batch)} incompatible with dimension {self.dimension}"
                )
            out = np.ascontiguousarray(inner(arr, float(sigma)), dtype=np.float64)
            if out.shape != arr.shape:
                raise ValidationError(
                    f"denoiser changed batch shape {arr.shape} -> {out.shape}"
                )
            if scalar:
                return float(out[0, 0])
            return out[0] if single else out

        self.evaluate = _evaluate

    def __call__(self, batch, sigma):
        return self.evaluate(batch, sigma)


@dataclass(frozen=True)
class LinearGaussianSpec:
    """Gaussian prior N(mean, diag(variances)) for the linear denoiser."""

    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(
            self, "variances", np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        )
        if self.mean.shape != self.variances.shape or self.mean.ndim != 1:
            raise ValidationError("mean and variances must be 1-D arrays of equal length")
        if np.any(self.variances <= 0):
            raise ValidationError("prior variances must be strictly positive")

    @property
    def dimension(self) -> int:
        return self.mean.size


def make_linear_gaussian_denoiser(spec: LinearGaussianSpec) -> DenoiserHandle:
    """MMSE denoiser for a Gaussian prior with diagonal covariance.

    Per coordinate: mu1(y)_i = m_i + s2_i / (s2_i + sigma^2) * (y_i - m_i).
    The posterior is Gaussian, so this is the canonical fixture for
    every Gaussian-cascade check downstream.
    """
    m = spec.mean
    s2 = spec.variances

    def evaluate(batch: np.ndarray, sigma: float) -> np.ndarray:
        gain = s2 / (s2 + sigma * sigma)
        return m + gain * (batch - m)

    return DenoiserHandle(evaluate=evaluate, dimension=spec.dimension, sigma_aware=True)


class GmmPrior:
    """Gaussian mixture prior: weights pi_l, means m_l, covariances Sigma_l.

    Weights must sum to 1 (to 1e-12); every covariance must be symmetric
    positive-definite. Diagonal covariances may be given as vectors.
    """

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        self.means = means
        covs = []
        for c in covariances:
            c = np.asarray(c, dtype=np.float64)
            if c.ndim == 0:
                c = c.reshape(1, 1)
            elif c.ndim == 1:
                c = np.diag(c)
            covs.append(c)
        self.covariances = covs
        self._validate()
        self.diagonal = all(
            np.count_nonzero(c - np.diag(np.diag(c))) == 0 for c in self.covariances
        )

    def _validate(self):
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ValidationError("weights must be a non-empty 1-D array")
        if np.any(self.weights <= 0) or np.any(self.weights > 1):
            raise ValidationError("weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {self.weights.sum()!r}, expected 1")
        L = self.weights.size
        if self.means.shape[0] != L or len(self.covariances) != L:
            raise ValidationError("weights, means and covariances must have equal length")
        d = self.means.shape[1]
        for c in self.covariances:
            if c.shape != (d, d):
                raise ValidationError(f"covariance shape {c.shape} != ({d}, {d})")
            if np.max(np.abs(c - c.T)) > 1e-12:
                raise ValidationError("covariance is not symmetric")
            if np.min(np.linalg.eigvalsh(c)) <= 0:
                raise ValidationError("covariance is not positive-definite")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dimension(self) -> int:
        return self.means.shape[1]


def gmm_prior_to_json(prior: GmmPrior) -> str:
    """Serialize as {"weights": [...], "means": [[...]], "covariances": [[[...]]]}"""
    return json.dumps(
        {
            "weights": prior.weights.tolist(),
            "means": prior.means.tolist(),
            "covariances": [c.tolist() for c in prior.covariances],
        }
    )


def gmm_prior_from_json(text: str) -> GmmPrior:
    """Load a prior; diagonal covariances given as vectors are expanded."""
    try:
        obj = json.loads(text)
        return GmmPrior(obj["weights"], obj["means"], obj["covariances"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed GMM prior JSON: {exc}") from exc


class _GmmPosteriorMean:
    """Exact posterior mean for a GMM prior (closed-form conditioning).

    mu1(y) = sum_l wbar_l(y) mbar_l(y), with

        rho_l   = N(y; m_l, Sigma_l + sigma^2 I)
        wbar_l  = rho_l pi_l / sum_l' rho_l' pi_l'
        mbar_l  = Sigma_l (Sigma_l + sigma^2 I)^-1 (y - m_l) + m_l

    Responsibilities are computed in log space and normalized by
    softmax with max-subtraction, which keeps well-separated components
    from underflowing. Cholesky factorizations of Sigma_l + sigma^2 I
    are cached per sigma (keyed on the float's bit pattern); all
    diagonal priors take a cheaper elementwise path.
    """

    def __init__(self, prior: GmmPrior):
        self.prior = prior
        self._cache: dict[int, tuple] = {}
        self._lock = threading.Lock()

    def _factorizations(self, sigma: float):
        key = np.float64(sigma).view(np.int64).item()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.prior
        d = p.dimension
        s2 = sigma * sigma
        if p.diagonal:
            diag = np.stack([np.diag(c) for c in p.covariances])  # (L, d)
            noisy = diag + s2
            gains = diag / noisy  # Sigma (Sigma + s2 I)^-1
            # log N(y; m, noisy-diag) = -(d/2)log(2pi) - sum(log(noisy))/2 - quad/2
            logdet = np.sum(np.log(noisy), axis=1)
            entry = ("diag", gains, noisy, logdet)
        else:
            chols = []
            gains = []
            logdets = []
            for c in p.covariances:
                noisy = c + s2 * np.eye(d)
                cf = sla.cho_factor(noisy, lower=True)
                chols.append(cf)
                gains.append(c @ sla.cho_solve(cf, np.eye(d)))
                logdets.append(2.0 * np.sum(np.log(np.diag(cf[0]))))
            entry = ("full", gains, chols, np.array(logdets))
        with self._lock:
            self._cache[key] = entry
        return entry

    def log_responsibilities(self, batch: np.ndarray, sigma: float) -> np.ndarray:
        """(B, L) matrix of log wbar_l(y), normalized per row."""
        p = self.prior
        d = p.dimension
        kind, gains, factor, logdet = self._factorizations(sigma)
        diffs = batch[:, None, :] - p.means[None, :, :]  # (B, L, d)
        if kind == "diag":
            quad = np.sum(diffs * diffs / factor[None, :, :], axis=2)
        else:
            quad = np.empty((batch.shape[0], p.n_components))
            for l, cf in enumerate(factor):
                sol = sla.cho_solve(cf, diffs[:, l, :].T)
                quad[:, l] = np.sum(diffs[:, l, :].T * sol, axis=0)
        log_rho = -0.5 * (d * np.log(2.0 * np.pi) + logdet[None, :] + quad)
        logits = log_rho + np.log(p.weights)[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(logits), axis=1, keepdims=True))
        return logits - log_norm

    def component_means(self, batch: np.ndarray, sigma: float) -> np.ndarray:
        """(B, L, d) array of mbar_l(y)."""
        p = self.prior
        kind, gains, _, _ = self._factorizations(sigma)
        diffs = batch[:, None, :] - p.means[None, :, :]
        if kind == "diag":
            shrunk = gains[None, :, :] * diffs
        else:
            shrunk = np.stack(
                [diffs[:, l, :] @ gains[l].T for l in range(p.n_components)], axis=1
            )
        return shrunk + p.means[None, :, :]

    def __call__(self, batch: np.ndarray, sigma: float) -> np.ndarray:
        if sigma <= 0:
            raise ValidationError(
                "GMM posterior mean requires sigma > 0 (undefined at sigma = 0)"
            )
        w = np.exp(self.log_responsibilities(batch, sigma))  # (B, L)
        mbar = self.component_means(batch, sigma)  # (B, L, d)
        return np.einsum("bl,bld->bd", w, mbar)


def make_gmm_denoiser(prior: GmmPrior) -> DenoiserHandle:
    """Exact MMSE denoiser for a Gaussian-mixture prior.

    Raises a validation error when evaluated at sigma = 0, where the
    conditioning formulas degenerate.
    """
    mean_fn = _GmmPosteriorMean(prior)
    return DenoiserHandle(evaluate=mean_fn, dimension=prior.dimension, sigma_aware=True)
