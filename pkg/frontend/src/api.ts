/** Typed client for the km4city HTTP facade.
 *
 * State-changing calls carry the operator id and, when supplied, a request
 * token; the server replays the recorded response when the same token comes
 * back, so retrying after a lost reply cannot apply a decision twice.
 */

import type {
  DatasetView,
  DecisionRequest,
  DecisionResponse,
  GeoHit,
  GeoQuery,
  HealthResponse,
  MetricsResponse,
  QuadsPage,
  QuadsQuery,
  ReviewPage,
  ReviewQuery,
  RunRequest,
  RunSummary,
} from "./types.js";

const TOKEN_HEADER = "X-Request-Token";
const OPERATOR_HEADER = "X-Operator";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

/** The server refused: the item was already decided or a rival link exists. */
export class ConflictError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = "ConflictError";
  }
}

type QueryValue = string | number | boolean | undefined;

function query(params: Record<string, QueryValue>): string {
  const search = new URLSearchParams();
  for (const [key, value] of Object.entries(params)) {
    if (value !== undefined) search.set(key, String(value));
  }
  const text = search.toString();
  return text ? `?${text}` : "";
}

async function describeFailure(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `${response.status} ${response.statusText}`.trim();
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    readonly operator: string,
    private readonly fetchImpl: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  /** Fresh idempotency token, one per decision attempt. */
  newToken(): string {
    return crypto.randomUUID();
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      const detail = await describeFailure(response);
      if (response.status === 409) throw new ConflictError(detail);
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown, token?: string): Promise<T> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
      [OPERATOR_HEADER]: this.operator,
    };
    if (token !== undefined) headers[TOKEN_HEADER] = token;
    return this.request<T>(path, {
      method: "POST",
      headers,
      body: JSON.stringify(body),
    });
  }

  health(): Promise<HealthResponse> {
    return this.request("/health");
  }

  datasets(): Promise<{ datasets: DatasetView[] }> {
    return this.request("/datasets");
  }

  metrics(): Promise<MetricsResponse> {
    return this.request("/metrics");
  }

  review(params: ReviewQuery = {}): Promise<ReviewPage> {
    const { status, method, municipality, scoreBand, cursor, limit } = params;
    return this.request(
      "/review" + query({ status, method, municipality, scoreBand, cursor, limit }),
    );
  }

  decide(itemId: string, body: DecisionRequest, token?: string): Promise<DecisionResponse> {
    return this.post(`/review/${encodeURIComponent(itemId)}/decision`, body, token);
  }

  reconcileRun(body: RunRequest, token?: string): Promise<RunSummary> {
    return this.post("/reconcile/run", body, token);
  }

  quads(params: QuadsQuery = {}): Promise<QuadsPage> {
    const { s, p, o, olit, c, closure, cursor, limit } = params;
    return this.request("/quads" + query({ s, p, o, olit, c, closure, cursor, limit }));
  }

  geoNear(params: GeoQuery): Promise<{ results: GeoHit[] }> {
    const { lat, long, k, maxDistance, classFilter } = params;
    return this.request("/geo/near" + query({ lat, long, k, maxDistance, classFilter }));
  }
}
