/**
 * Typed client for the posteriorlens session API.
 *
 * Every numeric value the UI shows comes out of these payloads
 * verbatim; the client never recomputes anything the service already
 * reports.
 */

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface SessionInfo {
  id: string;
  dimension: number;
  shape: number[] | null;
  sigma: number;
  sigma_provenance: "supplied" | "estimated";
  has_pcs: boolean;
  eigenvalues: number[] | null;
}

export interface PcRequest {
  region?: Rect;
  n_components?: number;
  iterations?: number;
  approx_constant?: number;
  seed?: number;
}

export interface PcDone {
  status: "done";
  job_id: string;
  eigenvalues: number[];
  iterations_run: number;
  convergence_final: number[];
  region: Rect | null;
}

export interface JobProgress {
  iterations_done: number;
  total: number;
}

export interface JobState {
  status: "running" | "done" | "failed";
  progress: JobProgress;
  error?: string;
}

export interface PcAccepted {
  status: "running";
  job_id: string;
  progress: JobProgress;
}

export interface PcSummary {
  eigenvalues: number[];
  iterations_run: number;
  n_components: number;
  region: Rect | null;
}

export interface MomentAnnotations {
  mean: number;
  mu2: number;
  mu3: number;
  mu4: number;
  skewness: number;
  kurtosis: number;
}

export interface MarginalPayload {
  moments: MomentAnnotations;
  sigma_provenance: string;
  support: number[];
  coefficients: number[];
  fit_residual: number;
  density_csv: string;
}

export interface SweepPayload {
  alphas: number[];
  mode: string;
  eigenvalue: number;
  frames_raw: number[][];
  frames_display: number[][];
  frames_png_base64?: string[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: unknown;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parse<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let body: ApiErrorBody;
    try {
      body = (await resp.json()) as ApiErrorBody;
    } catch {
      body = { code: "http", message: resp.statusText };
    }
    throw new ApiError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(body: unknown): Promise<SessionInfo> {
    const resp = await this.fetchImpl(this.url("/api/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return parse<SessionInfo>(resp);
  }

  async getSession(id: string): Promise<SessionInfo> {
    return parse<SessionInfo>(await this.fetchImpl(this.url(`/api/sessions/${id}`)));
  }

  /** Raw float64 payload of the cached denoised output. */
  async getDenoised(id: string): Promise<Float64Array> {
    const resp = await this.fetchImpl(
      this.url(`/api/sessions/${id}/denoised?format=raw`),
    );
    if (!resp.ok) {
      throw new ApiError(resp.status, { code: "http", message: resp.statusText });
    }
    return new Float64Array(await resp.arrayBuffer());
  }

  async computePcs(id: string, req: PcRequest): Promise<PcDone | PcAccepted> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${id}/pcs`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (resp.status === 202) {
      return (await resp.json()) as PcAccepted;
    }
    return parse<PcDone>(resp);
  }

  async getJob(jobId: string): Promise<JobState> {
    return parse<JobState>(await this.fetchImpl(this.url(`/api/jobs/${jobId}`)));
  }

  async getPcSummary(id: string): Promise<PcSummary> {
    return parse<PcSummary>(await this.fetchImpl(this.url(`/api/sessions/${id}/pcs`)));
  }

  /** PLPC container for one component: eigenvalue + vector. */
  async getPcVector(id: string, index: number): Promise<{ eigenvalue: number; vector: Float64Array }> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${id}/pcs/${index}`));
    if (!resp.ok) {
      throw new ApiError(resp.status, { code: "http", message: resp.statusText });
    }
    return parsePlpcSingle(await resp.arrayBuffer());
  }

  async getConvergenceCsv(id: string, index: number): Promise<string> {
    const resp = await this.fetchImpl(
      this.url(`/api/sessions/${id}/pcs/${index}/convergence`),
    );
    if (!resp.ok) {
      throw new ApiError(resp.status, { code: "http", message: resp.statusText });
    }
    return resp.text();
  }

  async sweep(id: string, index: number, alphas: number[], mode = "raw"): Promise<SweepPayload> {
    const resp = await this.fetchImpl(this.url(`/api/sessions/${id}/pcs/${index}/sweep`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ alphas, mode }),
    });
    return parse<SweepPayload>(resp);
  }

  async marginal(id: string, index: number, grid = 2048): Promise<MarginalPayload> {
    const resp = await this.fetchImpl(
      this.url(`/api/sessions/${id}/pcs/${index}/marginal`),
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ order: 4, grid }),
      },
    );
    return parse<MarginalPayload>(resp);
  }
}

/**
 * Parse a single-component PLPC container: magic "PLPC", u32 version,
 * u64 d, u64 N, then per component an f64 eigenvalue and d f64 entries
 * (all little-endian).
 */
export function parsePlpcSingle(buffer: ArrayBuffer): { eigenvalue: number; vector: Float64Array } {
  const view = new DataView(buffer);
  const magic = new Uint8Array(buffer, 0, 4);
  const expected = [0x50, 0x4c, 0x50, 0x43]; // "PLPC"
  if (!expected.every((b, i) => magic[i] === b)) {
    throw new Error("bad PLPC magic");
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new Error(`unsupported PLPC version ${version}`);
  }
  const d = Number(view.getBigUint64(8, true));
  const n = Number(view.getBigUint64(16, true));
  if (n < 1) {
    throw new Error("empty PLPC container");
  }
  const eigenvalue = view.getFloat64(24, true);
  const vector = new Float64Array(d);
  for (let i = 0; i < d; i++) {
    vector[i] = view.getFloat64(32 + 8 * i, true);
  }
  return { eigenvalue, vector };
}

/** Parse the service's "x,p" density CSV into chart points. */
export function parseDensityCsv(text: string): Array<[number, number]> {
  const lines = text.trim().split("\n");
  const points: Array<[number, number]> = [];
  for (let i = 1; i < lines.length; i++) {
    const [x, p] = lines[i].split(",");
    points.push([Number(x), Number(p)]);
  }
  return points;
}

/** Parse the per-component "iteration,cosine" convergence CSV. */
export function parseConvergenceCsv(text: string): Array<[number, number]> {
  return parseDensityCsv(text);
}
