"""Ground-truth machinery for Gaussian-mixture priors.

Under y = x + n with n ~ N(0, sigma^2 I) and a GMM prior, the posterior
is again a Gaussian mixture whose responsibilities, means and
covariances are available in closed form. This module exposes those
closed forms, the exact 1-D marginal density along any direction, exact
posterior covariances with their eigendecompositions, and brute-force
quadrature moments. Everything downstream is validated against them.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .denoisers import GmmPrior, _GmmPosteriorMean, make_gmm_denoiser
from .errors import NumericalError, ValidationError
from .numdiff import STENCIL_OFFSETS

__all__ = [
    "PosteriorComponent",
    "gmm_posterior_components",
    "gmm_marginal_along",
    "quadrature_central_moments",
    "oracle_posterior_covariance",
    "gmm_denoiser_jacobian",
    "joint_quadrature_central_tensors",
    "sample_marginal",
]


@dataclass(frozen=True)
class PosteriorComponent:
    """One mixture component of the posterior p(x | y)."""

    responsibility: float
    mean: np.ndarray
    covariance: np.ndarray


def _require_unit(v: np.ndarray) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"direction must be a unit vector, got norm {norm}")
    return v / norm


def gmm_posterior_components(prior: GmmPrior, sigma: float, y) -> list[PosteriorComponent]:
    """Closed-form posterior mixture components at observation y.

    responsibility_l = rho_l pi_l / sum rho pi       (log-space softmax)
    mean_l           = Sigma_l (Sigma_l + s^2 I)^-1 (y - m_l) + m_l
    covariance_l     = Sigma_l - Sigma_l (Sigma_l + s^2 I)^-1 Sigma_l
    """
    if sigma <= 0:
        raise ValidationError("posterior components require sigma > 0")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64)).reshape(1, -1)
    mean_fn = _GmmPosteriorMean(prior)
    w = np.exp(mean_fn.log_responsibilities(y, sigma))[0]
    mbars = mean_fn.component_means(y, sigma)[0]
    s2 = sigma * sigma
    d = prior.dimension
    comps = []
    for l in range(prior.n_components):
        c = prior.covariances[l]
        noisy = c + s2 * np.eye(d)
        cbar = c - c @ sla.solve(noisy, c, assume_a="pos")
        cbar = 0.5 * (cbar + cbar.T)
        comps.append(PosteriorComponent(float(w[l]), mbars[l].copy(), cbar))
    total = sum(c.responsibility for c in comps)
    assert abs(total - 1.0) <= 1e-12, f"responsibilities sum to {total}"
    return comps


def posterior_mean(prior: GmmPrior, sigma: float, y) -> np.ndarray:
    """Posterior mean assembled from the closed-form components."""
    comps = gmm_posterior_components(prior, sigma, y)
    return sum(c.responsibility * c.mean for c in comps)


def _marginal_params(prior, sigma, y, v):
    """Weights, means and std devs of the 1-D mixture v^T x | y."""
    v = _require_unit(v)
    comps = gmm_posterior_components(prior, sigma, y)
    w = np.array([c.responsibility for c in comps])
    mu = np.array([float(v @ c.mean) for c in comps])
    var = np.array([float(v @ c.covariance @ v) for c in comps])
    return w, mu, np.sqrt(np.maximum(var, 0.0))


def gmm_marginal_along(prior: GmmPrior, sigma: float, y, v, alphas,
                       centered: bool = False) -> np.ndarray:
    """Exact density of v^T x | y on the grid ``alphas``.

    The marginal is the 1-D mixture sum_l wbar_l N(alpha; v^T mean_l,
    v^T cov_l v). With ``centered=True`` the grid is interpreted as
    offsets from v^T mu1(y), i.e. alpha = 0 sits at the projected
    posterior mean (convenient for comparing against fitted marginals).
    """
    w, mu, sd = _marginal_params(prior, sigma, y, v)
    alphas = np.asarray(alphas, dtype=np.float64)
    if centered:
        alphas = alphas + float(np.dot(w, mu))
    dens = np.zeros_like(alphas)
    for wl, ml, sl in zip(w, mu, sd):
        z = (alphas - ml) / sl
        dens += wl * np.exp(-0.5 * z * z) / (sl * math.sqrt(2.0 * math.pi))
    return dens


def _gaussian_central_moment(sd: float, k: int) -> float:
    if k % 2 == 1:
        return 0.0
    return sd ** k * math.prod(range(k - 1, 0, -2)) if k > 0 else 1.0


def _mixture_central_moments(w, mu, sd, order):
    """Central moments of a 1-D Gaussian mixture via binomial expansion."""
    mean = float(np.dot(w, mu))
    delta = mu - mean
    out = []
    for k in range(2, order + 1):
        total = 0.0
        for wl, dl, sl in zip(w, delta, sd):
            acc = 0.0
            for j in range(0, k + 1):
                acc += math.comb(k, j) * dl ** (k - j) * _gaussian_central_moment(sl, j)
            total += wl * acc
        out.append(total)
    return mean, np.array(out)


@dataclass(frozen=True)
class MarginalMoments:
    """Central moments of v^T x | y; ``central[k-2]`` is order k."""

    mean: float
    central: np.ndarray
    order: int


def quadrature_central_moments(prior: GmmPrior, sigma: float, y, v,
                               order: int = 4, nodes: int = 2400) -> MarginalMoments:
    """Brute-force central moments of v^T x | y by Gauss-Legendre quadrature.

    Integrates the closed-form marginal over +-8 posterior standard
    deviations around the projected mean (truncation error below 1e-13
    for Gaussian mixtures), computes the same moments analytically from
    the per-component Gaussian moments, and insists the two routes agree
    to 1e-9 relative. That agreement is this oracle's self-test; a
    violation is an internal-consistency failure, not a tolerance issue.
    """
    if not 2 <= order <= 6:
        raise ValidationError(f"order must be in [2, 6], got {order}")
    if nodes < 2000:
        raise ValidationError("quadrature oracle needs at least 2000 nodes")
    w, mu, sd = _marginal_params(prior, sigma, y, v)
    mean_exact, central_exact = _mixture_central_moments(w, mu, sd, order)
    total_sd = math.sqrt(float(np.dot(w, sd ** 2 + (mu - mean_exact) ** 2)))
    # span +-8 posterior std, widened so every component keeps +-9 of
    # its own std inside the range (low-weight outlying components would
    # otherwise lose tail mass that the 4th moment still feels)
    lo = min(mean_exact - 8.0 * max(total_sd, 1e-12), float(np.min(mu - 9.0 * sd)))
    hi = max(mean_exact + 8.0 * max(total_sd, 1e-12), float(np.max(mu + 9.0 * sd)))
    panels = 48
    per_panel = max(nodes // panels + 1, 40)
    x1, w1 = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(lo, hi, panels + 1)
    x = np.concatenate(
        [0.5 * (a + b) + 0.5 * (b - a) * x1 for a, b in zip(edges[:-1], edges[1:])]
    )
    gw = np.concatenate([0.5 * (b - a) * w1 for a, b in zip(edges[:-1], edges[1:])])
    dens = gmm_marginal_along(prior, sigma, y, v, x)
    mass = float(np.dot(gw, dens))
    mean_quad = float(np.dot(gw, x * dens)) / mass
    central_quad = np.array(
        [float(np.dot(gw, (x - mean_quad) ** k * dens)) / mass for k in range(2, order + 1)]
    )
    scale = np.maximum(np.abs(central_exact), central_exact[0] ** (np.arange(2, order + 1) / 2.0))
    rel = np.abs(central_quad - central_exact) / np.maximum(scale, 1e-300)
    if abs(mass - 1.0) > 1e-9 or np.any(rel > 1e-9):
        raise NumericalError(
            f"quadrature/analytic moment disagreement (mass={mass!r}, rel={rel.tolist()})"
        )
    return MarginalMoments(mean_quad, central_quad, order)


@dataclass(frozen=True)
class CovarianceOracle:
    """Exact posterior covariance with its sorted eigendecomposition."""

    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, descending eigenvalue order
    mean: np.ndarray


def oracle_posterior_covariance(prior: GmmPrior, sigma: float, y,
                                verify_jacobian: bool = True) -> CovarianceOracle:
    """Exact posterior covariance Cov(x | y) and its eigendecomposition.

    Cov = sum_l wbar_l (covbar_l + mbar_l mbar_l^T) - mu1 mu1^T.

    When ``verify_jacobian`` is set (the default), the result is checked
    against sigma^2 times a finite-difference Jacobian of the exact GMM
    denoiser, to 1e-6 relative in the max norm: the posterior covariance
    of an MMSE denoiser IS sigma^2 times its Jacobian.
    """
    comps = gmm_posterior_components(prior, sigma, y)
    mu1 = sum(c.responsibility * c.mean for c in comps)
    cov = sum(
        c.responsibility * (c.covariance + np.outer(c.mean, c.mean)) for c in comps
    ) - np.outer(mu1, mu1)
    cov = 0.5 * (cov + cov.T)
    if verify_jacobian:
        jac = _fd_jacobian(make_gmm_denoiser(prior), np.atleast_1d(y), sigma)
        scale = np.max(np.abs(cov))
        err = np.max(np.abs(sigma * sigma * jac - cov))
        if err > 1e-6 * max(scale, 1e-300):
            raise NumericalError(
                f"posterior covariance disagrees with sigma^2 * Jacobian: {err} vs scale {scale}"
            )
    evals, evecs = np.linalg.eigh(cov)
    idx = np.argsort(evals)[::-1]
    evals = evals[idx]
    evecs = evecs[:, idx]
    for i in range(evecs.shape[1]):
        j = np.argmax(np.abs(evecs[:, i]))
        if evecs[j, i] < 0:
            evecs[:, i] = -evecs[:, i]
    return CovarianceOracle(cov, evals, evecs, mu1)


def _fd_jacobian(handle, y, sigma, h=None):
    """Dense Jacobian of the denoiser by 5-point central differences."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    d = y.size
    if h is None:
        h = 1e-2 * sigma
    points = []
    for j in range(d):
        for t in STENCIL_OFFSETS:
            if t == 0.0:
                continue
            p = y.copy()
            p[j] += t * h
            points.append(p)
    out = handle.evaluate(np.array(points), sigma)
    jac = np.empty((d, d))
    for j in range(d):
        fm2, fm1, fp1, fp2 = out[4 * j : 4 * j + 4]
        jac[:, j] = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
    return jac


def gmm_denoiser_jacobian(prior: GmmPrior, sigma: float, y) -> np.ndarray:
    """Analytic Jacobian of the GMM posterior mean.

    Differentiating mu1(y) = sum_l wbar_l(y) mbar_l(y) directly:

        d mbar_l / dy = A_l                   with A_l = Sigma_l (Sigma_l + s^2 I)^-1
        d wbar_l / dy = wbar_l (g_l - gbar)   with g_l = -(Sigma_l + s^2 I)^-1 (y - m_l)

    so J = sum_l wbar_l A_l + sum_l wbar_l mbar_l (g_l - gbar)^T. This is
    an independent route to the same matrix as Cov(x|y) / sigma^2.
    """
    if sigma <= 0:
        raise ValidationError("Jacobian requires sigma > 0")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    d = prior.dimension
    s2 = sigma * sigma
    mean_fn = _GmmPosteriorMean(prior)
    w = np.exp(mean_fn.log_responsibilities(y.reshape(1, -1), sigma))[0]
    mbars = mean_fn.component_means(y.reshape(1, -1), sigma)[0]
    gains, scores = [], []
    for ml, c in zip(prior.means, prior.covariances):
        noisy = c + s2 * np.eye(d)
        gains.append(c @ sla.solve(noisy, np.eye(d), assume_a="pos"))
        scores.append(-sla.solve(noisy, y - ml, assume_a="pos"))
    gbar = sum(wl * gl for wl, gl in zip(w, scores))
    jac = sum(wl * al for wl, al in zip(w, gains))
    jac = jac + sum(
        wl * np.outer(ml, gl - gbar) for wl, ml, gl in zip(w, mbars, scores)
    )
    return jac


def joint_quadrature_central_tensors(prior: GmmPrior, sigma: float, y,
                                     order: int = 4, nodes: int = 220) -> list[np.ndarray]:
    """Central moment tensors of x | y by tensor-product quadrature.

    Integrates directly over the joint posterior density (closed-form
    mixture), so it validates directional contractions independently of
    any denoiser-derivative path. Practical for d <= 3.
    """
    comps = gmm_posterior_components(prior, sigma, y)
    d = comps[0].mean.size
    if d > 3:
        raise ValidationError("joint quadrature tensors are limited to d <= 3")
    mu1 = sum(c.responsibility * c.mean for c in comps)
    sds = [np.sqrt(np.diag(c.covariance)) for c in comps]
    lo = np.min([c.mean - 9.0 * s for c, s in zip(comps, sds)], axis=0)
    hi = np.max([c.mean + 9.0 * s for c, s in zip(comps, sds)], axis=0)
    x1, w1 = np.polynomial.legendre.leggauss(nodes)
    axes, weights = [], []
    for j in range(d):
        half = 0.5 * (hi[j] - lo[j])
        axes.append(0.5 * (hi[j] + lo[j]) + half * x1)
        weights.append(half * w1)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*weights, indexing="ij")
    wtot = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    dens = np.zeros(pts.shape[0])
    for c in comps:
        diff = pts - c.mean
        cf = sla.cho_factor(c.covariance, lower=True)
        quad = np.sum(diff.T * sla.cho_solve(cf, diff.T), axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        dens += c.responsibility * np.exp(
            -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))
        )
    centered = pts - mu1
    probs = wtot * dens
    tensors = []
    for k in range(2, order + 1):
        subscripts = ",".join(f"n{chr(ord('a') + i)}" for i in range(k))
        output = "".join(chr(ord("a") + i) for i in range(k))
        args = [centered] * k
        t = np.einsum(f"n,{subscripts}->{output}", probs, *args)
        tensors.append(t)
    return tensors


def sample_marginal(prior: GmmPrior, sigma: float, y, v, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Exact samples of v^T x | y (component choice, then Gaussian draw)."""
    w, mu, sd = _marginal_params(prior, sigma, y, v)
    comp = rng.choice(w.size, size=n, p=w / w.sum())
    return mu[comp] + sd[comp] * rng.standard_normal(n)


def freeze_golden_fixtures(outdir):
    """Generate the JSON-config + CSV golden-value fixture files.

    Run once, audited, then committed; the tests only read the frozen
    files back and re-verify them against live computation.
    """
    import pathlib

    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    # Asymmetric 1-D mixture: nonzero skewness, golden directional moments.
    prior_1d = {"weights": [0.7, 0.3], "means": [[-1.0], [3.0]], "covariances": [[0.5], [0.5]]}
    cfg = {"prior": prior_1d, "sigma": 1.0, "y": [0.5], "v": [1.0]}
    (outdir / "asym_1d.json").write_text(json.dumps(cfg, indent=1))
    m = quadrature_central_moments(
        GmmPrior(**prior_1d), cfg["sigma"], cfg["y"], cfg["v"], order=6
    )
    lines = ["order,value", f"1,{float(m.mean)!r}"]
    lines += [f"{k},{float(v)!r}" for k, v in zip(range(2, 7), m.central)]
    (outdir / "asym_1d_moments.csv").write_text("\n".join(lines) + "\n")

    # 2-D anisotropic mixture: golden covariance eigensystem.
    prior_2d = {
        "weights": [0.5, 0.5],
        "means": [[-2.0, -1.0], [2.0, 1.0]],
        "covariances": [[0.7, 0.3], [0.4, 0.9]],
    }
    cfg2 = {"prior": prior_2d, "sigma": 2.0, "y": [0.4, -0.3]}
    (outdir / "gmm2d.json").write_text(json.dumps(cfg2, indent=1))
    oc = oracle_posterior_covariance(GmmPrior(**prior_2d), cfg2["sigma"], cfg2["y"])
    rows = ["quantity,i,j,value"]
    for i, lam in enumerate(oc.eigenvalues):
        rows.append(f"eigenvalue,{i},0,{float(lam)!r}")
    for i in range(2):
        for j in range(2):
            rows.append(f"eigenvector,{j},{i},{float(oc.eigenvectors[i, j])!r}")
            rows.append(f"covariance,{i},{j},{float(oc.covariance[i, j])!r}")
    rows.append(f"mean,0,0,{float(oc.mean[0])!r}")
    rows.append(f"mean,1,0,{float(oc.mean[1])!r}")
    (outdir / "gmm2d_eigs.csv").write_text("\n".join(rows) + "\n")
