/** In-memory stand-in for the HTTP facade, driven through a stubbed fetch.
 *
 * It mirrors the server semantics the client relies on: open listings show
 * pending items first and skipped ones at the tail, deciding a decided item
 * answers 409, counts come from server state, and each accept nudges the
 * served recall upward so monotonicity is observable.
 */

import type {
  Candidate,
  DecisionRequest,
  MetricsBlock,
  MetricsResponse,
  ReviewItem,
} from "../src/types.js";

export interface RecordedCall {
  method: string;
  path: string;
  headers: Record<string, string>;
  query: URLSearchParams;
  body?: any;
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function block(precision: number, recall: number, f1: number): MetricsBlock {
  return { precision, recall, f1, tp: 40, fp: 2, fn: 40, noPredictions: 10 };
}

export function makeCandidate(slug: string, score: number, over: Partial<Candidate> = {}): Candidate {
  return {
    road: `http://km4city.local/data/road/${slug}`,
    officialName: `VIA ${slug.toUpperCase()}`,
    alternativeName: null,
    municipality: "FIRENZE",
    streetNumber: null,
    civic: null,
    level: "street",
    method: "kbLevenshtein",
    score,
    similarity: { levenshtein: 0.7, dice: 0.8, jaccard: 0.6, "kb-levenshtein": score },
    ...over,
  };
}

export function makeItem(id: string, over: Partial<ReviewItem> = {}): ReviewItem {
  return {
    id,
    service: `http://km4city.local/data/service/${id}`,
    serviceAddress: { street: "VIA ROMA", civic: "12", municipality: "FIRENZE" },
    municipality: "FIRENZE",
    runMethod: "kb-levenshtein",
    state: "pending",
    topScore: 0.5,
    decidedBy: null,
    decidedAt: null,
    candidates: [makeCandidate("verdi", 0.82), makeCandidate("rossi", 0.55)],
    ...over,
  };
}

const STATE_BUCKET = { pending: 0, skipped: 1, accepted: 2, rejected: 2 } as const;

export class FakeServer {
  items = new Map<string, ReviewItem>();
  calls: RecordedCall[] = [];
  offline = false;
  accepted = 0;
  rejected = 0;
  /** Recall gain served after each accepted link. */
  recallStep = 0.01;
  beforeManual = block(0.96, 0.5, 0.658);
  currentRecall = 0.5;
  lastMetricsBody: MetricsResponse | null = null;
  private gate: Promise<void> | null = null;
  private openGate: (() => void) | null = null;

  constructor(items: ReviewItem[] = []) {
    for (const item of items) this.items.set(item.id, item);
  }

  /** Make decision posts wait until releaseDecisions() runs. */
  holdDecisions(): void {
    if (this.gate !== null) return;
    this.gate = new Promise((resolve) => {
      this.openGate = resolve;
    });
  }

  releaseDecisions(): void {
    this.openGate?.();
    this.gate = null;
    this.openGate = null;
  }

  /** Simulate another operator deciding an item out from under the client. */
  decideElsewhere(id: string, state: "accepted" | "rejected"): void {
    const item = this.items.get(id);
    if (item === undefined) throw new Error(`no such item: ${id}`);
    item.state = state;
    item.decidedBy = "someone-else";
    item.decidedAt = "2015-03-01T00:00:00+00:00";
    if (state === "accepted") {
      this.accepted += 1;
      this.currentRecall += this.recallStep;
    } else {
      this.rejected += 1;
    }
  }

  openCount(): number {
    let count = 0;
    for (const item of this.items.values()) {
      if (item.state === "pending" || item.state === "skipped") count += 1;
    }
    return count;
  }

  skippedCount(): number {
    let count = 0;
    for (const item of this.items.values()) {
      if (item.state === "skipped") count += 1;
    }
    return count;
  }

  private currentBlock(): MetricsBlock {
    return block(0.96, this.currentRecall, 0.7);
  }

  private metricsBody(): MetricsResponse {
    const body: MetricsResponse = {
      goldSize: 100,
      autoLinks: 60,
      acceptedLinks: this.accepted,
      pending: this.openCount(),
      skipped: this.skippedCount(),
      rejected: this.rejected,
      beforeManual: structuredClone(this.beforeManual),
      current: this.currentBlock(),
    };
    this.lastMetricsBody = structuredClone(body);
    return body;
  }

  private listed(params: URLSearchParams): ReviewItem[] {
    const status = params.get("status") ?? "open";
    const municipality = params.get("municipality");
    const rows = [...this.items.values()].filter((item) => {
      if (status === "open") {
        if (item.state !== "pending" && item.state !== "skipped") return false;
      } else if (status !== "all" && item.state !== status) {
        return false;
      }
      return municipality === null || item.municipality === municipality;
    });
    rows.sort((a, b) =>
      STATE_BUCKET[a.state] - STATE_BUCKET[b.state] ||
      a.topScore - b.topScore ||
      a.id.localeCompare(b.id),
    );
    return rows;
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    if (this.offline) throw new TypeError("fetch failed");
    const url = new URL(input, "http://fake.local");
    const headers: Record<string, string> = {};
    for (const [key, value] of Object.entries(init?.headers ?? {})) {
      headers[key.toLowerCase()] = value as string;
    }
    const call: RecordedCall = {
      method: init?.method ?? "GET",
      path: url.pathname,
      headers,
      query: url.searchParams,
      body: init?.body !== undefined ? JSON.parse(String(init.body)) : undefined,
    };
    this.calls.push(call);

    if (call.method === "GET" && call.path === "/metrics") {
      return json(200, this.metricsBody());
    }
    if (call.method === "GET" && call.path === "/review") {
      const rows = this.listed(url.searchParams);
      return json(200, {
        items: structuredClone(rows),
        total: rows.length,
        nextCursor: null,
        pending: this.openCount(),
        liveMetrics: this.currentBlock(),
      });
    }
    const decision = call.path.match(/^\/review\/([^/]+)\/decision$/);
    if (call.method === "POST" && decision !== null) {
      if (this.gate !== null) await this.gate;
      // the line can also drop while a held decision is in flight
      if (this.offline) throw new TypeError("fetch failed");
      return this.decide(decodeURIComponent(decision[1]), call);
    }
    if (call.method === "POST" && call.path === "/reconcile/run") {
      return json(200, {
        method: call.body.method,
        total: this.items.size,
        autoAccepted: 3,
        review: this.openCount(),
        noMatch: 1,
        numberLevel: 2,
        streetLevel: this.items.size - 2,
        unresolvedWithCoordinates: 0,
        queued: this.openCount(),
        conflicts: 0,
        quadsAdded: 12,
        liveMetrics: this.currentBlock(),
      });
    }
    return json(404, { detail: `no route: ${call.method} ${call.path}` });
  };

  private decide(id: string, call: RecordedCall): Response {
    const item = this.items.get(id);
    if (item === undefined) {
      return json(404, { detail: `unknown review item: ${id}` });
    }
    if (item.state === "accepted" || item.state === "rejected") {
      return json(409, { detail: `${id} already decided: ${item.state}` });
    }
    const body = call.body as DecisionRequest;
    const operator = call.headers["x-operator"] ?? body.operator ?? "";
    if (operator === "") return json(400, { detail: "operator required" });
    item.decidedBy = operator;
    item.decidedAt = "2015-03-01T12:00:00+00:00";
    let quadsAdded = 0;
    if (body.action === "accept") {
      item.state = "accepted";
      this.accepted += 1;
      this.currentRecall += this.recallStep;
      quadsAdded = 4;
    } else if (body.action === "reject") {
      item.state = "rejected";
      this.rejected += 1;
    } else {
      item.state = "skipped";
    }
    return json(200, {
      item: structuredClone(item),
      quadsAdded,
      pending: this.openCount(),
      liveMetrics: this.currentBlock(),
    });
  }
}

/** Let queued microtasks and zero-delay timers run. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
