"""Command-line front end.

Reproduces the analytic demos as CSV artifacts, runs PC/marginal
pipelines against external denoisers, and launches the HTTP service.
Every run writes a manifest next to its outputs; `replay` re-executes a
manifest and must reproduce the outputs byte for byte.

Exit codes: 0 success, 2 validation error, 3 remote failure,
4 numerical failure.
"""

import datetime
import functools
import json
import os
import pathlib
import sys

import click
import numpy as np

from . import __version__
from .denoisers import gmm_prior_from_json, make_gmm_denoiser
from .errors import NumericalError, RemoteError, ValidationError
from .maxent import default_support, density_to_csv, fit_maxent
from .moments import directional_moments, estimate_sigma as estimate_sigma_op
from .oracle import gmm_marginal_along, oracle_posterior_covariance
from .remote import RemoteEndpoint, connect
from .spectra import PcConfig, convergence_to_csv, posterior_pcs, write_plpc

EXIT_VALIDATION = 2
EXIT_REMOTE = 3
EXIT_NUMERICAL = 4


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
            _fail(EXIT_VALIDATION, exc)
        except RemoteError as exc:
            _fail(EXIT_REMOTE, exc)
        except NumericalError as exc:
            _fail(EXIT_NUMERICAL, exc)

    return wrapper


def _atomic_write(path: pathlib.Path, data):
    tmp = path.with_suffix(path.suffix + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    os.replace(tmp, path)


def _write_manifest(outdir: pathlib.Path, command: str, params: dict, config_paths=()):
    manifest = {
        "command": command,
        "params": params,
        "config_paths": [str(p) for p in config_paths],
        "seed": params.get("seed"),
        "output_dir": str(outdir),
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _atomic_write(outdir / "manifest.json", json.dumps(manifest, indent=1))
    return manifest


def _load_prior(config_path):
    return gmm_prior_from_json(pathlib.Path(config_path).read_text())


def _curve_csv(xs, ys, xname="x", yname="value"):
    lines = [f"{xname},{yname}"]
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in zip(xs, ys)]
    return "\n".join(lines) + "\n"


def _tv_distance(p, q, xs):
    return 0.5 * float(np.trapezoid(np.abs(p - q), xs))


def _count_modes(density):
    interior = (density[1:-1] > density[:-2]) & (density[1:-1] > density[2:])
    return int(np.count_nonzero(interior))


@click.group()
@click.version_option(__version__)
def main():
    """Posterior uncertainty toolkit for Gaussian denoisers."""


@main.command("demo-1d")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="GMM prior JSON")
@click.option("--y", "y_star", type=float, required=True, help="observation y*")
@click.option("--sigma", type=float, required=True)
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--grid", type=int, default=2048)
@handle_errors
def demo_1d(config_path, y_star, sigma, outdir, grid):
    """Univariate demo: true posterior vs 4-moment max-entropy estimate."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    prior = _load_prior(config_path)
    if prior.dimension != 1:
        raise ValidationError("demo-1d needs a 1-D prior")
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    denoiser = make_gmm_denoiser(prior)

    ms = directional_moments(denoiser, [y_star], [1.0], sigma)
    support = default_support(ms.mean, ms.mu2)
    est = fit_maxent(ms.mean, ms.central, support, grid=grid)
    truth = gmm_marginal_along(prior, sigma, [y_star], [1.0], est.grid)
    tv = _tv_distance(est.density, truth, est.grid)

    span = 4.0 * sigma + float(np.max(np.abs(prior.means))) + 3.0
    ys = np.linspace(y_star - span, y_star + span, 512)
    mu_curve = denoiser.evaluate(ys[:, None], sigma)[:, 0]

    _atomic_write(outdir / "posterior_true.csv", _curve_csv(est.grid, truth, "x", "p"))
    _atomic_write(outdir / "posterior_maxent.csv", density_to_csv(est))
    _atomic_write(outdir / "posterior_mean_curve.csv", _curve_csv(ys, mu_curve, "y", "mu1"))
    _atomic_write(
        outdir / "moments.csv",
        "mean,mu2,mu3,mu4\n" + f"{ms.mean!r},{ms.mu2!r},{ms.mu3!r},{ms.mu4!r}\n",
    )
    summary = {
        "tv_distance": tv,
        "modes_detected": _count_modes(est.density),
        "fit_residual": est.fit_residual,
        "support": list(est.support),
    }
    _atomic_write(outdir / "summary.json", json.dumps(summary, indent=1))
    _write_manifest(
        outdir, "demo-1d",
        {"config": str(config_path), "y": y_star, "sigma": sigma, "grid": grid},
        [config_path],
    )
    click.echo(f"tv_distance={tv:.4f} modes={summary['modes_detected']}")


@main.command("demo-gmm2d")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--y", "y_star", required=True, help="observation, e.g. '0.4,-0.3'")
@click.option("--sigma", type=float, default=2.0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--n", "n_components", type=int, default=2, show_default=True)
@click.option("--k", "iterations", type=int, default=50, show_default=True)
@click.option("--c", "approx_constant", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--grid", type=int, default=2048)
@handle_errors
def demo_gmm2d(config_path, y_star, sigma, outdir, n_components, iterations,
               approx_constant, seed, grid):
    """2-D demo: subspace-iteration PCs and the marginal along the top PC."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    prior = _load_prior(config_path)
    if prior.dimension != 2:
        raise ValidationError("demo-gmm2d needs a 2-D prior")
    y = np.array([float(t) for t in y_star.split(",")])
    if y.size != 2:
        raise ValidationError(f"y must have 2 coordinates, got {y_star!r}")
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    denoiser = make_gmm_denoiser(prior)
    cfg = PcConfig(n_components=n_components, iterations=iterations,
                   approx_constant=approx_constant, seed=seed)
    pcs = posterior_pcs(denoiser, y, sigma, cfg)
    oc = oracle_posterior_covariance(prior, sigma, y)
    cosines = [
        abs(float(pcs.vectors[:, i] @ oc.eigenvectors[:, i]))
        for i in range(min(n_components, 2))
    ]

    v1 = pcs.vectors[:, 0]
    ms = directional_moments(denoiser, y, v1, sigma,
                             variance_hint=float(pcs.eigenvalues[0]))
    est = fit_maxent(ms.mean, ms.central, default_support(ms.mean, ms.mu2), grid=grid)
    truth = gmm_marginal_along(prior, sigma, y, v1, est.grid)
    tv = _tv_distance(est.density, truth, est.grid)

    _atomic_write(outdir / "pcs.plpc", write_plpc(pcs))
    _atomic_write(
        outdir / "eigenvalues.csv",
        "component,eigenvalue,oracle_eigenvalue\n"
        + "".join(
            f"{i + 1},{float(pcs.eigenvalues[i])!r},{float(oc.eigenvalues[i])!r}\n"
            for i in range(min(n_components, 2))
        ),
    )
    _atomic_write(outdir / "convergence.csv", convergence_to_csv(pcs))
    _atomic_write(outdir / "marginal_true.csv", _curve_csv(est.grid, truth, "alpha", "p"))
    _atomic_write(outdir / "marginal_maxent.csv", density_to_csv(est))
    vtv = pcs.vectors.T @ pcs.vectors
    summary = {
        "cosine_vs_oracle": cosines,
        "eigenvalues": pcs.eigenvalues.tolist(),
        "oracle_eigenvalues": oc.eigenvalues.tolist(),
        "orthonormality_error": float(np.max(np.abs(vtv - np.eye(n_components)))),
        "tv_distance": tv,
        "modes_detected": _count_modes(est.density),
        "iterations_run": pcs.iterations_run,
    }
    _atomic_write(outdir / "summary.json", json.dumps(summary, indent=1))
    _write_manifest(
        outdir, "demo-gmm2d",
        {"config": str(config_path), "y": y_star, "sigma": sigma, "n": n_components,
         "k": iterations, "c": approx_constant, "seed": seed, "grid": grid},
        [config_path],
    )
    click.echo(
        f"cos_vs_oracle={['%.6f' % c for c in cosines]} tv={tv:.4f} "
        f"orth_err={summary['orthonormality_error']:.2e}"
    )


def _input_to_observation(input_path, denoiser):
    """Load --input as image (png) or JSON vector, flattened float64 in [0,1]."""
    p = pathlib.Path(input_path)
    if p.suffix.lower() == ".png":
        from PIL import Image

        img = Image.open(p)
        img.load()
        arr = np.asarray(img, dtype=np.float64) / 255.0
        return arr.reshape(-1), arr.shape
    data = json.loads(p.read_text())
    return np.asarray(data, dtype=np.float64).reshape(-1), None


def _parse_region(region, shape, d):
    if region is None:
        return None
    if shape is None:
        raise ValidationError("--region requires an image input")
    x, y, w, h = (int(t) for t in region.split(","))
    mask2d = np.zeros(shape, dtype=bool)
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > shape[1] or y + h > shape[0]:
        raise ValidationError(f"region {region} outside image bounds {shape}")
    mask2d[y : y + h, x : x + w, ...] = True
    return mask2d.reshape(-1)


@main.command("pcs")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--denoiser", "denoiser_url", required=True, help="external denoiser URL")
@click.option("--sigma", type=float, default=None)
@click.option("--region", default=None, help="x,y,w,h pixel rectangle")
@click.option("--n", "n_components", type=int, default=3, show_default=True)
@click.option("--k", "iterations", type=int, default=50, show_default=True)
@click.option("--c", "approx_constant", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
@handle_errors
def pcs_cmd(input_path, denoiser_url, sigma, region, n_components, iterations,
            approx_constant, seed, outdir):
    """Posterior principal components of an observation, written as PLPC."""
    denoiser = connect(RemoteEndpoint(denoiser_url))
    y, shape = _input_to_observation(input_path, denoiser)
    if y.size != denoiser.dimension:
        raise ValidationError(
            f"input dimension {y.size} != denoiser dimension {denoiser.dimension}"
        )
    if sigma is None:
        if denoiser.sigma_aware:
            raise ValidationError("--sigma required for a sigma-aware denoiser")
        sigma = estimate_sigma_op(denoiser, y)
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    mask = _parse_region(region, shape, y.size)
    cfg = PcConfig(n_components=n_components, iterations=iterations,
                   approx_constant=approx_constant, seed=seed, mask=mask)
    result = posterior_pcs(denoiser, y, sigma, cfg)
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _atomic_write(outdir / "pcs.plpc", write_plpc(result))
    _atomic_write(outdir / "convergence.csv", convergence_to_csv(result))
    _atomic_write(
        outdir / "eigenvalues.csv",
        "component,eigenvalue\n"
        + "".join(f"{i + 1},{float(v)!r}\n" for i, v in enumerate(result.eigenvalues)),
    )
    _write_manifest(
        outdir, "pcs",
        {"input": str(input_path), "denoiser": denoiser_url, "sigma": sigma,
         "region": region, "n": n_components, "k": iterations,
         "c": approx_constant, "seed": seed},
        [input_path],
    )
    click.echo(" ".join(repr(float(v)) for v in result.eigenvalues))


@main.command("marginal")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--denoiser", "denoiser_url", required=True)
@click.option("--sigma", type=float, default=None)
@click.option("--pcs", "plpc_path", required=True, type=click.Path(exists=True),
              help="PLPC file from a previous run")
@click.option("--pc-index", type=int, default=0, show_default=True)
@click.option("--grid", type=int, default=2048)
@click.option("--out", "outdir", required=True, type=click.Path())
@handle_errors
def marginal_cmd(input_path, denoiser_url, sigma, plpc_path, pc_index, grid, outdir):
    """Max-entropy marginal density along a stored principal component."""
    from .spectra import read_plpc

    denoiser = connect(RemoteEndpoint(denoiser_url))
    y, _ = _input_to_observation(input_path, denoiser)
    if sigma is None:
        if denoiser.sigma_aware:
            raise ValidationError("--sigma required for a sigma-aware denoiser")
        sigma = estimate_sigma_op(denoiser, y)
    stored = read_plpc(pathlib.Path(plpc_path).read_bytes())
    if not 0 <= pc_index < stored.eigenvalues.size:
        raise ValidationError(f"pc index {pc_index} out of range")
    v = stored.vectors[:, pc_index]
    lam = float(stored.eigenvalues[pc_index])
    ms = directional_moments(denoiser, y, v, sigma, variance_hint=lam)
    est = fit_maxent(ms.mean, ms.central, default_support(ms.mean, ms.mu2), grid=grid)
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _atomic_write(outdir / "marginal.csv", density_to_csv(est))
    _atomic_write(
        outdir / "moments.csv",
        "mean,mu2,mu3,mu4\n" + f"{ms.mean!r},{ms.mu2!r},{ms.mu3!r},{ms.mu4!r}\n",
    )
    _write_manifest(
        outdir, "marginal",
        {"input": str(input_path), "denoiser": denoiser_url, "sigma": sigma,
         "pcs": str(plpc_path), "pc_index": pc_index, "grid": grid},
        [input_path, plpc_path],
    )
    click.echo(f"fit_residual={est.fit_residual!r}")


@main.command("sweep")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--denoiser", "denoiser_url", required=True)
@click.option("--sigma", type=float, required=True)
@click.option("--pcs", "plpc_path", required=True, type=click.Path(exists=True))
@click.option("--pc-index", type=int, default=0, show_default=True)
@click.option("--alphas", required=True, help="comma-separated offsets, e.g. '-1,0,1'")
@click.option("--out", "outdir", required=True, type=click.Path())
@handle_errors
def sweep_cmd(input_path, denoiser_url, sigma, plpc_path, pc_index, alphas, outdir):
    """Reconstructions mu1(y) + alpha * v along a stored component."""
    from .spectra import read_plpc

    denoiser = connect(RemoteEndpoint(denoiser_url))
    y, _ = _input_to_observation(input_path, denoiser)
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    stored = read_plpc(pathlib.Path(plpc_path).read_bytes())
    if not 0 <= pc_index < stored.eigenvalues.size:
        raise ValidationError(f"pc index {pc_index} out of range")
    v = stored.vectors[:, pc_index]
    alpha_list = [float(t) for t in alphas.split(",")]
    denoised = denoiser.evaluate(y, sigma)
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for idx, alpha in enumerate(alpha_list):
        frame = denoised + alpha * v
        _atomic_write(
            outdir / f"frame_{idx:03d}.f64",
            np.ascontiguousarray(frame, dtype="<f8").tobytes(),
        )
    _atomic_write(
        outdir / "frames.csv",
        "index,alpha\n" + "".join(f"{i},{a!r}\n" for i, a in enumerate(alpha_list)),
    )
    _write_manifest(
        outdir, "sweep",
        {"input": str(input_path), "denoiser": denoiser_url, "sigma": sigma,
         "pcs": str(plpc_path), "pc_index": pc_index, "alphas": alphas},
        [input_path, plpc_path],
    )
    click.echo(f"{len(alpha_list)} frames")


@main.command("estimate-sigma")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--denoiser", "denoiser_url", required=True)
@handle_errors
def estimate_sigma_cmd(input_path, denoiser_url):
    """Residual-norm noise estimate from a blind denoiser."""
    denoiser = connect(RemoteEndpoint(denoiser_url))
    y, _ = _input_to_observation(input_path, denoiser)
    click.echo(repr(estimate_sigma_op(denoiser, y)))


@main.command("replay")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
@handle_errors
def replay_cmd(manifest_path, outdir):
    """Re-run a recorded manifest into a fresh output directory."""
    doc = json.loads(pathlib.Path(manifest_path).read_text())
    command, params = doc["command"], dict(doc["params"])
    runner = {
        "demo-1d": demo_1d,
        "demo-gmm2d": demo_gmm2d,
        "pcs": pcs_cmd,
        "marginal": marginal_cmd,
        "sweep": sweep_cmd,
    }.get(command)
    if runner is None:
        raise ValidationError(f"manifest command {command!r} is not replayable")
    args = []
    for key, value in params.items():
        if value is None:
            continue
        args += [f"--{key}", str(value)]
    args += ["--out", str(outdir)]
    runner.main(args=args, standalone_mode=False)


@main.command("serve")
@click.option("--port", type=int, default=8710, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--persistence-dir", default=None, type=click.Path())
@click.option("--fixture-dir", default=None, type=click.Path())
@click.option("--job-budget", type=float, default=60.0, show_default=True,
              help="seconds before a PC job switches to polled mode")
@handle_errors
def serve_cmd(port, host, persistence_dir, fixture_dir, job_budget):
    """Run the HTTP service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig(persistence_dir, fixture_dir, job_budget))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
