/**
 * View-state store: all UI behavior that does not touch the DOM.
 *
 * The store owns one session, the selected region, the active
 * principal component, the slider position and its cached frames, the
 * density/convergence curves and the polled job progress. Components
 * subscribe and re-render; they display service-provided numbers only.
 */

import {
  ApiClient,
  ApiError,
  MarginalPayload,
  MomentAnnotations,
  PcRequest,
  Rect,
  SessionInfo,
} from "./api.js";

export type { Rect } from "./api.js";

export interface JobView {
  status: "idle" | "running" | "done" | "failed";
  iterationsDone: number;
  total: number;
  updates: number; // how many progress observations arrived
  error?: string;
}

export const RESIDUAL_WARN_THRESHOLD = 1e-6;

/** Slider ticks cached per component: presets across [-3, +3] sd. */
export const TICKS_PER_SIDE = 6;

export interface ViewState {
  session: SessionInfo | null;
  region: Rect | null;
  eigenvalues: number[];
  iterationsRun: number | null;
  activePc: number;
  alpha: number;
  displayedAlpha: number | null;
  displayedFrame: Float64Array | null;
  staleFrame: boolean;
  denoised: Float64Array | null;
  pcVectors: Map<number, { eigenvalue: number; vector: Float64Array }>;
  density: Array<[number, number]>;
  momentAnnotations: MomentAnnotations | null;
  fitResidual: number | null;
  sigmaProvenance: string | null;
  convergence: Array<[number, number]>;
  job: JobView;
  diagnostics: { message: string; moments?: unknown } | null;
  controlsDisabledReason: string | null;
}

export type Listener = (state: ViewState) => void;

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class UiStore {
  readonly state: ViewState = {
    session: null,
    region: null,
    eigenvalues: [],
    iterationsRun: null,
    activePc: 0,
    alpha: 0,
    displayedAlpha: null,
    displayedFrame: null,
    staleFrame: false,
    denoised: null,
    pcVectors: new Map(),
    density: [],
    momentAnnotations: null,
    fitResidual: null,
    sigmaProvenance: null,
    convergence: [],
    job: { status: "idle", iterationsDone: 0, total: 0, updates: 0 },
    diagnostics: null,
    controlsDisabledReason: null,
  };

  private listeners: Listener[] = [];
  private frames = new Map<string, Float64Array>();

  constructor(
    private api: ApiClient,
    private pollIntervalMs = 100,
    private sleepImpl: (ms: number) => Promise<void> = sleep,
  ) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const l of this.listeners) l(this.state);
  }

  async openSession(body: unknown): Promise<SessionInfo> {
    const session = await this.api.createSession(body);
    this.state.session = session;
    this.state.sigmaProvenance = session.sigma_provenance;
    this.state.denoised = await this.api.getDenoised(session.id);
    this.state.displayedFrame = this.state.denoised;
    this.state.displayedAlpha = 0;
    this.emit();
    return session;
  }

  /** Validate a drag rectangle client-side before it reaches the wire. */
  validateRegion(rect: Rect): string | null {
    if (rect.w <= 0 || rect.h <= 0) {
      return "degenerate selection: zero area";
    }
    const shape = this.state.session?.shape;
    if (shape) {
      const [h, w] = shape;
      if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > w || rect.y + rect.h > h) {
        return "selection outside image bounds";
      }
    }
    return null;
  }

  /** True when the rectangle covers the whole canvas (no-mask request). */
  isFullFrame(rect: Rect): boolean {
    const shape = this.state.session?.shape;
    if (!shape) return true; // vector sessions have no sub-frame regions
    return rect.x === 0 && rect.y === 0 && rect.w === shape[1] && rect.h === shape[0];
  }

  /**
   * Region selection: kick off the PC job, then poll until done,
   * surfacing determinate progress at every observation.
   */
  async selectRegion(rect: Rect | null, options: Omit<PcRequest, "region"> = {}): Promise<void> {
    const session = this.state.session;
    if (!session) throw new Error("no session open");
    if (this.state.job.status === "running") {
      this.state.controlsDisabledReason = "a PC job is already running";
      this.emit();
      return;
    }
    if (rect) {
      const problem = this.validateRegion(rect);
      if (problem) {
        this.state.diagnostics = { message: problem };
        this.emit();
        return;
      }
    }
    const sendRegion = rect && !this.isFullFrame(rect) ? rect : undefined;
    this.state.region = rect;
    this.state.job = { status: "running", iterationsDone: 0, total: options.iterations ?? 50, updates: 0 };
    this.state.controlsDisabledReason = "computing principal components";
    this.emit();
    try {
      const resp = await this.api.computePcs(session.id, { ...options, region: sendRegion });
      if (resp.status === "running") {
        let job = await this.api.getJob(resp.job_id);
        this.observeProgress(job.progress.iterations_done, job.progress.total);
        while (job.status === "running") {
          await this.sleepImpl(this.pollIntervalMs);
          job = await this.api.getJob(resp.job_id);
          this.observeProgress(job.progress.iterations_done, job.progress.total);
        }
        if (job.status === "failed") {
          this.state.job.status = "failed";
          this.state.job.error = job.error;
          this.state.controlsDisabledReason = null;
          this.emit();
          return;
        }
      } else {
        this.observeProgress(resp.iterations_run, this.state.job.total);
      }
      await this.onPcsReady();
    } catch (err) {
      this.state.job.status = "failed";
      this.state.job.error = err instanceof Error ? err.message : String(err);
      this.state.controlsDisabledReason = null;
      this.emit();
    }
  }

  private observeProgress(done: number, total: number): void {
    this.state.job.iterationsDone = done;
    this.state.job.total = total;
    this.state.job.updates += 1;
    this.emit();
  }

  private async onPcsReady(): Promise<void> {
    const session = this.state.session!;
    const summary = await this.api.getPcSummary(session.id);
    this.state.eigenvalues = summary.eigenvalues; // verbatim payload values
    this.state.iterationsRun = summary.iterations_run;
    this.state.job.status = "done";
    this.state.controlsDisabledReason = null;
    this.frames.clear();
    this.state.pcVectors.clear();
    for (let i = 0; i < summary.n_components; i++) {
      this.state.pcVectors.set(i, await this.api.getPcVector(session.id, i));
    }
    await this.setActivePc(0);
  }

  async setActivePc(index: number): Promise<void> {
    if (index < 0 || index >= this.state.eigenvalues.length) {
      throw new Error(`component index ${index} out of range`);
    }
    const session = this.state.session!;
    this.state.activePc = index;
    this.state.alpha = 0;
    this.state.displayedAlpha = 0;
    this.state.displayedFrame = this.state.denoised;
    this.state.convergence = parseCsvPairs(
      await this.api.getConvergenceCsv(session.id, index),
    );
    this.emit();
  }

  /** Slider bounds: +-3 sqrt(lambda) of the active component. */
  sliderBound(): number {
    const lam = this.state.eigenvalues[this.state.activePc] ?? 0;
    return 3 * Math.sqrt(lam);
  }

  /** Preset alpha ticks, including the extreme +-sqrt(lambda) frames. */
  alphaTicks(): number[] {
    const bound = this.sliderBound();
    const ticks: number[] = [];
    for (let i = -TICKS_PER_SIDE; i <= TICKS_PER_SIDE; i++) {
      ticks.push((bound * i) / TICKS_PER_SIDE);
    }
    return ticks;
  }

  nearestTick(alpha: number): number {
    const ticks = this.alphaTicks();
    let best = ticks[0];
    for (const t of ticks) {
      if (Math.abs(t - alpha) < Math.abs(best - alpha)) best = t;
    }
    return best;
  }

  /**
   * Move the slider: display the nearest cached tick immediately, fetch
   * the exact tick frame if missing. alpha = 0 always shows the cached
   * denoised output without a fetch.
   */
  async slideAlpha(alpha: number): Promise<void> {
    const session = this.state.session;
    if (!session || this.state.eigenvalues.length === 0) return;
    this.state.alpha = alpha;
    const tick = this.nearestTick(alpha);
    if (tick === 0) {
      this.state.displayedAlpha = 0;
      this.state.displayedFrame = this.state.denoised;
      this.state.staleFrame = false;
      this.emit();
      return;
    }
    const key = `${this.state.activePc}:${tick}`;
    const cached = this.frames.get(key);
    if (cached) {
      this.state.displayedAlpha = tick;
      this.state.displayedFrame = cached;
      this.state.staleFrame = false;
      this.emit();
      return;
    }
    this.emit(); // nearest-tick display while the fetch is in flight
    try {
      const sweep = await this.api.sweep(session.id, this.state.activePc, [tick]);
      const frame = Float64Array.from(sweep.frames_raw[0]);
      this.frames.set(key, frame);
      this.state.displayedAlpha = tick;
      this.state.displayedFrame = frame;
      this.state.staleFrame = false;
    } catch {
      this.state.staleFrame = true; // keep the stale frame, show the badge
    }
    this.emit();
  }

  cachedFrameCount(): number {
    return this.frames.size;
  }

  /** Fetch and expose the marginal density for one component. */
  async showMarginal(index: number): Promise<void> {
    const session = this.state.session;
    if (!session) throw new Error("no session open");
    try {
      const payload: MarginalPayload = await this.api.marginal(session.id, index);
      this.state.density = parseCsvPairs(payload.density_csv);
      this.state.momentAnnotations = payload.moments;
      this.state.fitResidual = payload.fit_residual;
      this.state.sigmaProvenance = payload.sigma_provenance;
      this.state.diagnostics = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.state.diagnostics = {
          message: err.body.message,
          moments: err.body.detail,
        };
      } else {
        throw err;
      }
    }
    this.emit();
  }

  residualBadge(): "ok" | "warning" | null {
    if (this.state.fitResidual === null) return null;
    return this.state.fitResidual > RESIDUAL_WARN_THRESHOLD ? "warning" : "ok";
  }
}

function parseCsvPairs(text: string): Array<[number, number]> {
  const lines = text.trim().split("\n");
  const out: Array<[number, number]> = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",");
    out.push([Number(cells[0]), Number(cells[1])]);
  }
  return out;
}
