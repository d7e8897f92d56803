"""HTTP service: sessions, denoising, region PCs, sweeps, marginals.

The backend for the web UI and for scripted clients. A session wraps
one observation plus one denoiser (analytic GMM, raw vector against an
external endpoint, or an image against an external endpoint), caches
the denoised output, and owns at most one principal-component set at a
time. PC jobs run synchronously up to a time budget, then switch to a
polled-job mode with per-iteration progress.

Endpoints (JSON unless noted):

    POST /api/sessions
    GET  /api/sessions/{id}
    GET  /api/sessions/{id}/denoised          (?format=raw|png|json)
    POST /api/sessions/{id}/pcs
    GET  /api/jobs/{job_id}
    GET  /api/sessions/{id}/pcs/{i}           (PLPC bytes)
    GET  /api/sessions/{id}/pcs/{i}/convergence   (CSV)
    POST /api/sessions/{id}/pcs/{i}/sweep
    POST /api/sessions/{id}/pcs/{i}/marginal  (JSON incl. CSV payload)

Error bodies are always {"code": ..., "message": ..., "detail": ...}.
"""

import base64
import hashlib
import io
import json
import logging
import math
import os
import pathlib
import threading
import uuid

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .denoisers import GmmPrior, make_gmm_denoiser
from .errors import (
    InfeasibleMomentsError,
    InstabilityError,
    MaxentConvergenceError,
    PosteriorLensError,
    RemoteError,
    ValidationError,
)
from .maxent import (
    default_support,
    density_to_csv,
    fit_maxent,
)
from .moments import directional_moments, estimate_sigma
from .remote import RemoteEndpoint, connect
from .spectra import PcConfig, convergence_to_csv, posterior_pcs, read_plpc, write_plpc

__all__ = ["ServiceConfig", "create_app"]

log = logging.getLogger(__name__)


class ServiceConfig:
    """Service-level settings.

    Flags win over the environment; the environment variables are
    POSTERIORLENS_PERSISTENCE_DIR, POSTERIORLENS_FIXTURE_DIR and
    POSTERIORLENS_JOB_BUDGET_S.
    """

    def __init__(self, persistence_dir=None, fixture_dir=None, job_budget_s=None):
        persistence_dir = persistence_dir or os.environ.get("POSTERIORLENS_PERSISTENCE_DIR")
        fixture_dir = fixture_dir or os.environ.get("POSTERIORLENS_FIXTURE_DIR")
        if job_budget_s is None:
            job_budget_s = float(os.environ.get("POSTERIORLENS_JOB_BUDGET_S", "60"))
        self.persistence_dir = pathlib.Path(persistence_dir) if persistence_dir else None
        self.fixture_dir = pathlib.Path(fixture_dir) if fixture_dir else None
        self.job_budget_s = float(job_budget_s)


class _ApiError(Exception):
    def __init__(self, status, code, message, detail=None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class SessionSource(BaseModel):
    type: str  # "gmm" | "fixture" | "endpoint" | "image"
    prior: dict | None = None
    name: str | None = None  # fixture file stem under the fixture dir
    y: list[float] | None = None
    url: str | None = None
    png_base64: str | None = None
    timeout_ms: float = 30000.0
    max_batch: int = 64


class CreateSessionRequest(BaseModel):
    source: SessionSource
    sigma: float | None = None
    sigma_units: str = "normalized"  # or "pixel"


class RegionModel(BaseModel):
    x: int
    y: int
    w: int
    h: int


class PcRequest(BaseModel):
    region: RegionModel | None = None
    n_components: int = 3
    iterations: int = 50
    approx_constant: float = 1e-5
    seed: int = 0
    convergence_threshold: float | None = 1.0 - 1e-9


class SweepRequest(BaseModel):
    alphas: list[float]
    mode: str = "raw"  # or "scaled" (alphas in units of sqrt(lambda))


class MarginalRequest(BaseModel):
    order: int = 4
    grid: int = 2048
    support: tuple[float, float] | None = None


class Session:
    def __init__(self, sid, denoiser, y, sigma, sigma_estimated, shape, source_doc):
        self.id = sid
        self.denoiser = denoiser
        self.y = y
        self.sigma = sigma
        self.sigma_estimated = sigma_estimated
        self.shape = shape  # None for plain vectors, (H, W) or (H, W, 3) for images
        self.source_doc = source_doc
        self.denoised = denoiser.evaluate(y, sigma)
        self.pcs = None
        self.pc_region = None
        self.job = None
        self.lock = threading.Lock()

    def describe(self):
        return {
            "id": self.id,
            "dimension": int(self.y.size),
            "shape": list(self.shape) if self.shape else None,
            "sigma": self.sigma,
            "sigma_provenance": "estimated" if self.sigma_estimated else "supplied",
            "has_pcs": self.pcs is not None,
            "eigenvalues": self.pcs.eigenvalues.tolist() if self.pcs else None,
        }


class Job:
    def __init__(self, job_id, total):
        self.id = job_id
        self.total = total
        self.done_iterations = 0
        self.status = "running"
        self.error = None
        self.finished = threading.Event()


def _decode_image(png_base64):
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(base64.b64decode(png_base64)))
        img.load()
    except Exception as exc:
        raise _ApiError(400, "bad_image", f"undecodable image: {exc}")
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB" if "A" in img.mode or len(img.getbands()) > 2 else "L")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr


def _encode_png(arr):
    from PIL import Image

    clipped = np.clip(arr, 0.0, 1.0)
    img = Image.fromarray(np.round(clipped * 255.0).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="posteriorlens service", version=__version__)
    sessions: dict[str, Session] = {}
    jobs: dict[str, Job] = {}
    counter = {"n": 0}

    @app.exception_handler(_ApiError)
    async def _api_error(request: Request, exc: _ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(PosteriorLensError)
    async def _domain_error(request: Request, exc: PosteriorLensError):
        if isinstance(exc, ValidationError):
            status, code = 400, "validation"
        elif isinstance(exc, RemoteError):
            status, code = 502, "remote"
        else:
            status, code = 500, "numerical"
        return JSONResponse(
            status_code=status,
            content={"code": code, "message": str(exc), "detail": type(exc).__name__},
        )

    def _session(sid) -> Session:
        s = sessions.get(sid)
        if s is None:
            raise _ApiError(404, "no_session", f"unknown session {sid}")
        return s

    def _persist(session: Session):
        if config.persistence_dir is None:
            return
        d = config.persistence_dir / session.id
        d.mkdir(parents=True, exist_ok=True)
        doc = {
            "id": session.id,
            "source": session.source_doc,
            "sigma": session.sigma,
            "sigma_estimated": session.sigma_estimated,
            "shape": list(session.shape) if session.shape else None,
            "y": session.y.tolist(),
            "pc_region": session.pc_region,
            "iterations_run": session.pcs.iterations_run if session.pcs else None,
        }
        (d / "session.json").write_text(json.dumps(doc))
        if session.pcs is not None:
            (d / "pcs.plpc").write_bytes(write_plpc(session.pcs))
            (d / "convergence.csv").write_text(convergence_to_csv(session.pcs))

    def _restore_sessions():
        if config.persistence_dir is None or not config.persistence_dir.exists():
            return
        for sdir in sorted(config.persistence_dir.iterdir()):
            f = sdir / "session.json"
            if not f.exists():
                continue
            try:
                _restore_one(sdir, f)
            except Exception as exc:  # unreachable endpoint, stale file, ...
                log.warning("skipping persisted session %s: %s", sdir.name, exc)

    def _restore_one(sdir, f):
        doc = json.loads(f.read_text())
        source = SessionSource(**doc["source"])
        denoiser = _build_denoiser(source)
        session = Session(
            doc["id"],
            denoiser,
            np.asarray(doc["y"], dtype=np.float64),
            doc["sigma"],
            doc["sigma_estimated"],
            tuple(doc["shape"]) if doc["shape"] else None,
            doc["source"],
        )
        plpc = sdir / "pcs.plpc"
        if plpc.exists():
            stored = read_plpc(plpc.read_bytes())
            conv = np.empty((0, stored.eigenvalues.size))
            csvf = sdir / "convergence.csv"
            if csvf.exists():
                rows = csvf.read_text().strip().splitlines()[1:]
                conv = np.array(
                    [[float(x) for x in r.split(",")[1:]] for r in rows]
                )
            session.pcs = type(stored)(
                stored.vectors, stored.eigenvalues, conv,
                doc.get("iterations_run") or conv.shape[0],
            )
            session.pc_region = doc.get("pc_region")
        sessions[session.id] = session

    def _load_fixture_prior(name: str) -> dict:
        if config.fixture_dir is None:
            raise _ApiError(400, "validation", "no fixture directory configured")
        path = (config.fixture_dir / f"{name}.json").resolve()
        if path.parent != config.fixture_dir.resolve() or not path.exists():
            raise _ApiError(400, "validation", f"unknown fixture {name!r}")
        return json.loads(path.read_text())

    def _build_denoiser(source: SessionSource):
        if source.type == "fixture":
            if source.name is None or source.y is None:
                raise _ApiError(400, "validation", "fixture source needs name and y")
            return make_gmm_denoiser(GmmPrior(**_load_fixture_prior(source.name)))
        if source.type == "gmm":
            if source.prior is None or source.y is None:
                raise _ApiError(400, "validation", "gmm source needs prior and y")
            prior = GmmPrior(**source.prior)
            return make_gmm_denoiser(prior)
        if source.type in ("endpoint", "image"):
            if not source.url:
                raise _ApiError(400, "validation", f"{source.type} source needs url")
            try:
                return connect(
                    RemoteEndpoint(source.url, source.timeout_ms, source.max_batch)
                )
            except RemoteError as exc:
                raise _ApiError(502, "remote", f"endpoint not usable: {exc}")
        raise _ApiError(400, "validation", f"unknown source type {source.type!r}")

    @app.get("/api/fixtures")
    def list_fixtures():
        if config.fixture_dir is None or not config.fixture_dir.exists():
            return {"fixtures": []}
        return {"fixtures": sorted(p.stem for p in config.fixture_dir.glob("*.json"))}

    @app.post("/api/sessions")
    def create_session(req: CreateSessionRequest):
        denoiser = _build_denoiser(req.source)
        shape = None
        if req.source.type == "image":
            arr = _decode_image(req.source.png_base64)
            shape = arr.shape
            y = arr.reshape(-1)
        else:
            if req.source.y is None:
                raise _ApiError(400, "validation", "source needs y")
            y = np.asarray(req.source.y, dtype=np.float64)
        if y.size != denoiser.dimension:
            raise _ApiError(
                400, "validation",
                f"payload dimension {y.size} != denoiser dimension {denoiser.dimension}",
            )
        sigma = req.sigma
        estimated = False
        if sigma is not None:
            if req.sigma_units == "pixel":
                sigma = sigma / 255.0
            elif req.sigma_units != "normalized":
                raise _ApiError(400, "validation", f"unknown sigma_units {req.sigma_units!r}")
            if sigma <= 0:
                raise _ApiError(400, "validation", f"sigma must be positive, got {sigma}")
        else:
            if denoiser.sigma_aware:
                raise _ApiError(
                    400, "validation",
                    "sigma required: the denoiser is sigma-aware, not blind",
                )
            sigma = estimate_sigma(denoiser, y)
            estimated = True
            if sigma <= 0:
                raise _ApiError(400, "validation", "estimated sigma is zero")
        counter["n"] += 1
        digest = hashlib.sha256(
            y.tobytes() + json.dumps(req.source.model_dump(), sort_keys=True).encode()
        ).hexdigest()[:8]
        sid = f"s{counter['n']:06d}-{digest}"
        session = Session(sid, denoiser, y, float(sigma), estimated, shape,
                          req.source.model_dump())
        sessions[sid] = session
        _persist(session)
        return session.describe()

    @app.get("/api/sessions/{sid}")
    def get_session(sid: str):
        return _session(sid).describe()

    @app.get("/api/sessions/{sid}/denoised")
    def get_denoised(sid: str, format: str = "auto"):
        s = _session(sid)
        if format == "auto":
            format = "png" if s.shape is not None else "raw"
        if format == "raw":
            return Response(
                content=np.ascontiguousarray(s.denoised, dtype="<f8").tobytes(),
                media_type="application/octet-stream",
                headers={"x-shape": json.dumps(list(s.shape or (s.denoised.size,)))},
            )
        if format == "json":
            return {"denoised": s.denoised.tolist(), "shape": list(s.shape or (s.denoised.size,))}
        if format == "png":
            if s.shape is None:
                raise _ApiError(400, "validation", "session is not an image session")
            return Response(content=_encode_png(s.denoised.reshape(s.shape)),
                            media_type="image/png")
        raise _ApiError(400, "validation", f"unknown format {format!r}")

    def _region_mask(s: Session, region: RegionModel | None):
        if region is None:
            return None, None
        if s.shape is None:
            raise _ApiError(400, "validation", "region selection requires an image session")
        h, w = s.shape[0], s.shape[1]
        if region.w <= 0 or region.h <= 0 or region.x < 0 or region.y < 0 \
                or region.x + region.w > w or region.y + region.h > h:
            raise _ApiError(400, "validation", f"region {region.model_dump()} outside bounds {s.shape}")
        mask2d = np.zeros(s.shape, dtype=bool)
        mask2d[region.y : region.y + region.h, region.x : region.x + region.w, ...] = True
        return mask2d.reshape(-1), region.model_dump()

    @app.post("/api/sessions/{sid}/pcs")
    def compute_pcs(sid: str, req: PcRequest):
        s = _session(sid)
        if not s.lock.acquire(blocking=False):
            raise _ApiError(409, "conflict", "a PC job is already running for this session")
        try:
            mask, region_doc = _region_mask(s, req.region)
            effective = int(mask.sum()) if mask is not None else int(s.y.size)
            if req.n_components > effective:
                raise _ApiError(
                    400, "validation",
                    f"cannot extract {req.n_components} components from a "
                    f"{effective}-coordinate region",
                )
            cfg = PcConfig(
                n_components=req.n_components,
                iterations=req.iterations,
                approx_constant=req.approx_constant,
                seed=req.seed,
                mask=mask,
                convergence_threshold=req.convergence_threshold,
            )
        except (PosteriorLensError, _ApiError):
            s.lock.release()
            raise
        job = Job(uuid.uuid4().hex[:12], req.iterations)
        jobs[job.id] = job

        def run():
            try:
                def progress(done, total):
                    job.done_iterations = done

                pcs = posterior_pcs(s.denoiser, s.y, s.sigma, cfg, progress=progress)
                s.pcs = pcs
                s.pc_region = region_doc
                job.status = "done"
                _persist(s)
            except Exception as exc:  # surfaced through the job document
                job.status = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
            finally:
                job.finished.set()
                s.lock.release()

        threading.Thread(target=run, daemon=True).start()
        if job.finished.wait(timeout=config.job_budget_s):
            if job.status == "failed":
                raise _ApiError(500, "numerical", job.error)
            return {
                "status": "done",
                "job_id": job.id,
                "eigenvalues": s.pcs.eigenvalues.tolist(),
                "iterations_run": s.pcs.iterations_run,
                "convergence_final": s.pcs.convergence[-1].tolist(),
                "region": region_doc,
            }
        return JSONResponse(
            status_code=202,
            content={"status": "running", "job_id": job.id,
                     "progress": {"iterations_done": job.done_iterations,
                                  "total": job.total}},
        )

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise _ApiError(404, "no_job", f"unknown job {job_id}")
        doc = {
            "status": job.status,
            "progress": {"iterations_done": job.done_iterations, "total": job.total},
        }
        if job.error:
            doc["error"] = job.error
        return doc

    def _pcs_or_404(s: Session):
        if s.pcs is None:
            raise _ApiError(404, "no_pcs", "principal components not computed yet")
        return s.pcs

    def _component(s: Session, i: int):
        pcs = _pcs_or_404(s)
        if not 0 <= i < pcs.n_components:
            raise _ApiError(404, "no_pc", f"component index {i} out of range")
        return pcs

    @app.get("/api/sessions/{sid}/pcs")
    def list_pcs(sid: str):
        s = _session(sid)
        pcs = _pcs_or_404(s)
        return {
            "eigenvalues": pcs.eigenvalues.tolist(),
            "iterations_run": pcs.iterations_run,
            "n_components": pcs.n_components,
            "region": s.pc_region,
        }

    @app.get("/api/sessions/{sid}/pcs/{i}")
    def get_pc(sid: str, i: int):
        s = _session(sid)
        pcs = _component(s, i)
        single = type(pcs)(
            pcs.vectors[:, i : i + 1],
            pcs.eigenvalues[i : i + 1],
            pcs.convergence[:, i : i + 1],
            pcs.iterations_run,
        )
        return Response(content=write_plpc(single), media_type="application/octet-stream")

    @app.get("/api/sessions/{sid}/pcs/{i}/convergence")
    def get_convergence(sid: str, i: int):
        s = _session(sid)
        pcs = _component(s, i)
        buf = io.StringIO()
        buf.write("iteration,cosine\n")
        for k in range(pcs.convergence.shape[0]):
            buf.write(f"{k + 1},{pcs.convergence[k, i]!r}\n")
        return Response(content=buf.getvalue(), media_type="text/csv")

    @app.post("/api/sessions/{sid}/pcs/{i}/sweep")
    def sweep(sid: str, i: int, req: SweepRequest):
        s = _session(sid)
        pcs = _component(s, i)
        if req.mode not in ("raw", "scaled"):
            raise _ApiError(400, "validation", f"unknown sweep mode {req.mode!r}")
        v = pcs.vectors[:, i]
        lam = float(pcs.eigenvalues[i])
        scale = math.sqrt(lam) if req.mode == "scaled" else 1.0
        frames_raw, frames_display, pngs = [], [], []
        for alpha in req.alphas:
            frame = s.denoised + (alpha * scale) * v
            frames_raw.append(frame.tolist())
            frames_display.append(np.clip(frame, 0.0, 1.0).tolist())
            if s.shape is not None:
                pngs.append(base64.b64encode(_encode_png(frame.reshape(s.shape))).decode())
        doc = {
            "alphas": list(req.alphas),
            "mode": req.mode,
            "eigenvalue": lam,
            "frames_raw": frames_raw,
            "frames_display": frames_display,
        }
        if pngs:
            doc["frames_png_base64"] = pngs
        return doc

    @app.post("/api/sessions/{sid}/pcs/{i}/marginal")
    def marginal(sid: str, i: int, req: MarginalRequest):
        s = _session(sid)
        pcs = _component(s, i)
        if req.order != 4:
            raise _ApiError(400, "validation", f"only order=4 supported, got {req.order}")
        v = pcs.vectors[:, i]
        lam = float(pcs.eigenvalues[i])
        try:
            ms = directional_moments(s.denoiser, s.y, v, s.sigma, variance_hint=lam)
        except InstabilityError as exc:
            raise _ApiError(422, "moments", f"moment estimation unstable: {exc}")
        support = req.support or default_support(ms.mean, ms.mu2)
        try:
            est = fit_maxent(ms.mean, ms.central, support, grid=req.grid)
        except (InfeasibleMomentsError, MaxentConvergenceError) as exc:
            raise _ApiError(
                422, "maxent",
                f"marginal density fit failed: {exc}",
                detail={"mean": ms.mean, "central": list(ms.central)},
            )
        return {
            "moments": {
                "mean": ms.mean,
                "mu2": ms.mu2,
                "mu3": ms.mu3,
                "mu4": ms.mu4,
                "skewness": ms.skewness,
                "kurtosis": ms.kurtosis,
            },
            "sigma_provenance": "estimated" if s.sigma_estimated else "supplied",
            "support": list(est.support),
            "coefficients": est.coefficients.tolist(),
            "fit_residual": est.fit_residual,
            "density_csv": density_to_csv(est),
        }

    _restore_sessions()
    return app
