// Typed client for the pool service HTTP/JSON API. Every state-changing UI
// interaction maps to exactly one of these calls; the service is the source
// of truth and no line text is ever invented or edited client-side.

export interface LineScore {
  surprisal: number;
  novelty: number;
  in_band: boolean;
}

export interface Provenance {
  kind: "prior" | "neighborhood" | "interpolation";
  latent: number[];
  temperature?: number;
  radius?: number;
  parent_id?: number;
  other_parent_id?: number;
  t?: number;
}

export interface PoolLine {
  id: number;
  text: string;
  tokens: number[];
  provenance: Provenance;
  score: LineScore | null;
}

export interface SessionDoc {
  id: string;
  created: string;
  modified: string;
  model_refs: Record<string, string>;
  band: Record<string, number>;
  resolved_band: Record<string, number> | null;
  next_line_id: number;
  pool: PoolLine[];
  pinned: number[];
  arrangement: number[];
}

export interface PoolReport {
  requested?: number;
  after_dedup?: number;
  seed?: number;
  total?: number;
  below?: number;
  in?: number;
  above?: number;
  band_low?: number;
  band_high?: number;
}

export interface VaryRequest {
  line_id: number;
  mode: "neighborhood" | "interpolate";
  radius?: number;
  n?: number;
  other_line_id?: number;
  steps?: number;
  temperature?: number;
  seed?: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "HttpError";
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.error === "string") code = body.error;
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, detail);
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createSession(body: object = {}): Promise<{ id: string }> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(id: string): Promise<SessionDoc> {
    return this.request(`/sessions/${id}`);
  }

  generatePool(
    id: string,
    body: { n: number; temperature?: number; seed?: number; apply_band?: boolean },
  ): Promise<{ added: PoolLine[]; report: PoolReport }> {
    return this.request(`/sessions/${id}/pool`, { method: "POST", body: JSON.stringify(body) });
  }

  pin(id: string, lineId: number): Promise<SessionDoc> {
    return this.request(`/sessions/${id}/pin`, { method: "POST", body: JSON.stringify({ line_id: lineId }) });
  }

  unpin(id: string, lineId: number): Promise<SessionDoc> {
    return this.request(`/sessions/${id}/unpin`, { method: "POST", body: JSON.stringify({ line_id: lineId }) });
  }

  putArrangement(id: string, lineIds: number[]): Promise<SessionDoc> {
    return this.request(`/sessions/${id}/arrangement`, {
      method: "PUT",
      body: JSON.stringify({ line_ids: lineIds }),
    });
  }

  vary(id: string, body: VaryRequest): Promise<{ added: PoolLine[]; report: object }> {
    return this.request(`/sessions/${id}/vary`, { method: "POST", body: JSON.stringify(body) });
  }

  async exportText(id: string): Promise<string> {
    const response = await fetch(`${this.base}/sessions/${id}/export?format=text`);
    if (!response.ok) throw await parseError(response);
    return response.text();
  }

  exportJsonUrl(id: string): string {
    return `${this.base}/sessions/${id}/export?format=json`;
  }
}
