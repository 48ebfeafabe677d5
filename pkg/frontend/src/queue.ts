/** State machine behind the review screen.
 *
 * The controller owns the open queue, the keyboard cursor and the metrics
 * panel source.  The item list always keeps the order the server ranked it
 * in.  Decisions apply optimistically: the row leaves the list at once and
 * the server reply then either confirms it into the session log or rolls it
 * back.  A 409 means another operator got there first; the queue reloads so
 * the screen shows server truth.  Counts and quality figures are never
 * computed locally; they come from the server responses verbatim.
 */

import { ApiClient, ConflictError } from "./api.js";
import type {
  DecisionAction,
  DecisionRequest,
  MetricsResponse,
  ReviewItem,
  ReviewQuery,
  RunMethod,
  RunSummary,
} from "./types.js";

export interface Toast {
  kind: "info" | "error" | "conflict";
  message: string;
}

/** A decision made this session, shown in the log sidebar. */
export interface LogEntry {
  item: ReviewItem;
  action: DecisionAction;
  /** Flips true only once the server confirmed the decision. */
  committed: boolean;
}

const PAGE_LIMIT = 200;

function describeError(error: unknown): string {
  if (error instanceof Error) return error.message;
  return String(error);
}

export class QueueController {
  items: ReviewItem[] = [];
  selected = 0;
  candidateIndex = 0;
  municipality: string | null = null;
  metrics: MetricsResponse | null = null;
  /** Set when the service cannot be reached; the queue keeps its last data. */
  banner: string | null = null;
  toasts: Toast[] = [];
  log: LogEntry[] = [];
  /** Open-item count as last reported by the server. */
  pending = 0;
  total = 0;
  busy = false;
  /** Render hook, installed by the mount layer. */
  changed: () => void = () => {};

  constructor(private readonly client: ApiClient) {}

  selectedItem(): ReviewItem | null {
    return this.items[this.selected] ?? null;
  }

  isEmpty(): boolean {
    return this.items.length === 0 && this.banner === null;
  }

  /** Pull the open queue and the metrics panel; on failure keep what we have. */
  async load(): Promise<void> {
    const params: ReviewQuery = { status: "open", limit: PAGE_LIMIT };
    if (this.municipality !== null) params.municipality = this.municipality;
    try {
      const page = await this.client.review(params);
      this.items = page.items;
      this.total = page.total;
      this.pending = page.pending;
      this.metrics = await this.client.metrics();
      this.banner = null;
    } catch (error) {
      this.banner = describeError(error);
    }
    this.clampCursor();
    this.changed();
  }

  async refreshMetrics(): Promise<void> {
    try {
      this.metrics = await this.client.metrics();
      this.pending = this.metrics.pending;
    } catch (error) {
      this.banner = describeError(error);
    }
    this.changed();
  }

  setMunicipality(value: string | null): Promise<void> {
    const trimmed = value === null ? "" : value.trim();
    this.municipality = trimmed === "" ? null : trimmed;
    return this.load();
  }

  select(index: number): void {
    if (index < 0 || index >= this.items.length) return;
    this.selected = index;
    this.candidateIndex = 0;
    this.changed();
  }

  selectNext(): void {
    this.select(Math.min(this.items.length - 1, this.selected + 1));
  }

  selectPrev(): void {
    this.select(Math.max(0, this.selected - 1));
  }

  selectCandidate(index: number): void {
    const item = this.selectedItem();
    if (item === null || index < 0 || index >= item.candidates.length) return;
    this.candidateIndex = index;
    this.changed();
  }

  nextCandidate(): void {
    const item = this.selectedItem();
    if (item === null) return;
    this.selectCandidate(Math.min(item.candidates.length - 1, this.candidateIndex + 1));
  }

  prevCandidate(): void {
    this.selectCandidate(Math.max(0, this.candidateIndex - 1));
  }

  /** Keyboard map: j/k between items, n/p between candidates, a/r/s decide. */
  handleKey(key: string): boolean {
    switch (key) {
      case "j":
      case "ArrowDown":
        this.selectNext();
        return true;
      case "k":
      case "ArrowUp":
        this.selectPrev();
        return true;
      case "n":
      case "ArrowRight":
        this.nextCandidate();
        return true;
      case "p":
      case "ArrowLeft":
        this.prevCandidate();
        return true;
      case "a":
      case "Enter":
        void this.accept();
        return true;
      case "r":
        void this.reject();
        return true;
      case "s":
        void this.skip();
        return true;
      default:
        return false;
    }
  }

  async accept(candidateIndex = this.candidateIndex): Promise<void> {
    const item = this.selectedItem();
    if (item === null || this.busy) return;
    if (candidateIndex < 0 || candidateIndex >= item.candidates.length) return;
    await this.commit(item, "accept", candidateIndex);
  }

  async reject(): Promise<void> {
    const item = this.selectedItem();
    if (item === null || this.busy) return;
    await this.commit(item, "reject", null);
  }

  /** Push the selected item to the back of the queue and tell the server. */
  async skip(): Promise<void> {
    const item = this.selectedItem();
    if (item === null || this.busy) return;
    await this.commit(item, "skip", null);
  }

  dismissToast(index: number): void {
    if (index >= 0 && index < this.toasts.length) {
      this.toasts.splice(index, 1);
      this.changed();
    }
  }

  /** Kick a reconciliation run, then pull the queue it produced. */
  async run(method: RunMethod): Promise<RunSummary | null> {
    if (this.busy) return null;
    this.busy = true;
    this.changed();
    try {
      const summary = await this.client.reconcileRun({ method }, this.client.newToken());
      this.toasts.push({
        kind: "info",
        message:
          `${method}: ${summary.queued} queued for review, ` +
          `${summary.autoAccepted} auto-accepted`,
      });
      this.busy = false;
      await this.load();
      return summary;
    } catch (error) {
      this.toasts.push({ kind: "error", message: describeError(error) });
      return null;
    } finally {
      this.busy = false;
      this.changed();
    }
  }

  private async commit(
    item: ReviewItem,
    action: DecisionAction,
    candidateIndex: number | null,
  ): Promise<void> {
    const index = this.items.indexOf(item);
    if (index < 0) return;
    this.busy = true;
    // optimistic step: decided rows leave the list, skipped ones go to the tail
    this.items.splice(index, 1);
    if (action === "skip") {
      this.items.push({ ...item, state: "skipped" });
    }
    const entry: LogEntry = { item, action, committed: false };
    this.log.unshift(entry);
    this.clampCursor();
    this.changed();
    try {
      const body: DecisionRequest =
        action === "accept" ? { action, candidateIndex: candidateIndex ?? 0 } : { action };
      const response = await this.client.decide(item.id, body, this.client.newToken());
      entry.item = response.item;
      entry.committed = true;
      this.pending = response.pending;
      if (action === "skip") {
        const tail = this.items.findIndex((row) => row.id === item.id);
        if (tail >= 0) this.items[tail] = response.item;
      }
      await this.refreshMetrics();
    } catch (error) {
      this.dropLogEntry(entry);
      if (error instanceof ConflictError) {
        // someone else decided it; note that and fall back to server truth
        this.toasts.push({ kind: "conflict", message: error.message });
        this.busy = false;
        await this.load();
      } else {
        this.toasts.push({ kind: "error", message: describeError(error) });
        this.rollback(item, index, action);
      }
    } finally {
      this.busy = false;
      this.changed();
    }
  }

  private rollback(item: ReviewItem, index: number, action: DecisionAction): void {
    if (action === "skip") {
      const tail = this.items.findIndex((row) => row.id === item.id);
      if (tail >= 0) this.items.splice(tail, 1);
    }
    this.items.splice(Math.min(index, this.items.length), 0, item);
    this.clampCursor();
  }

  private dropLogEntry(entry: LogEntry): void {
    const index = this.log.indexOf(entry);
    if (index >= 0) this.log.splice(index, 1);
  }

  private clampCursor(): void {
    if (this.items.length === 0) {
      this.selected = 0;
      this.candidateIndex = 0;
      return;
    }
    this.selected = Math.min(this.selected, this.items.length - 1);
    const item = this.items[this.selected];
    if (this.candidateIndex >= item.candidates.length) this.candidateIndex = 0;
  }
}
