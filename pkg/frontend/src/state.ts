/** Review session state: the pending queue, the cursor, and the tally.
 *
 * The server is the only source of truth for labels. A decision is applied
 * optimistically to the view (the cursor advances immediately) but rendered
 * as committed only once the server acknowledges it; a 409 marks the row as
 * decided elsewhere and leaves the tally untouched; any other failure rolls
 * the row back to pending and parks the cursor on it for a retry. Nothing is
 * queued locally while offline: decisions are simply disabled.
 */

import { ApiClient, CandidateDoc, Decision } from "./api.js";

export type LocalStatus = "pending" | "deciding" | "confirmed" | "rejected" | "external";

export interface QueueEntry {
  doc: CandidateDoc;
  local: LocalStatus;
}

export interface Tally {
  reviewed: number;
  confirmed: number;
  rejected: number;
}

export interface Notice {
  kind: "info" | "error";
  text: string;
}

export type Phase = "loading" | "ready" | "error";

export type Listener = (session: ReviewSession) => void;

export class ReviewSession {
  entries: QueueEntry[] = [];
  /** Server-reported pending total at the last refresh. */
  total = 0;
  phase: Phase = "loading";
  loadError: string | null = null;
  cursorId: string | null = null;
  tally: Tally = { reviewed: 0, confirmed: 0, rejected: 0 };
  notice: Notice | null = null;
  online = true;

  private readonly inFlight = new Set<string>();
  private readonly listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly pageSize = 10,
  ) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this);
  }

  current(): QueueEntry | null {
    if (this.cursorId === null) return null;
    const entry = this.entries.find((e) => e.doc.id === this.cursorId);
    return entry && entry.local === "pending" ? entry : null;
  }

  pendingCount(): number {
    return this.entries.filter((e) => e.local === "pending").length;
  }

  busy(id: string): boolean {
    return this.inFlight.has(id);
  }

  /** Re-fetch the pending queue, page by page, in the server's order.
   *
   * Keeps the cursor on the same candidate when it is still pending; when it
   * is gone, falls to the next surviving candidate from the old ordering.
   * No local annotation state survives: entries are rebuilt from the
   * response alone.
   */
  async refresh(): Promise<void> {
    const oldOrder = this.entries.map((e) => e.doc.id);
    const oldCursor = this.cursorId;
    this.phase = "loading";
    this.loadError = null;
    this.emit();

    let docs: CandidateDoc[];
    let total: number;
    try {
      [docs, total] = await this.fetchAllPending();
    } catch (err) {
      this.phase = "error";
      this.loadError = err instanceof Error ? err.message : String(err);
      this.emit();
      return;
    }

    const seen = new Set<string>();
    this.entries = docs
      .filter((doc) => !seen.has(doc.id) && (seen.add(doc.id), true))
      .map((doc) => ({ doc, local: "pending" as LocalStatus }));
    this.total = total;
    this.phase = "ready";
    this.cursorId = this.pickCursor(oldOrder, oldCursor);
    this.emit();
  }

  private async fetchAllPending(): Promise<[CandidateDoc[], number]> {
    const docs: CandidateDoc[] = [];
    let offset = 0;
    let total = 0;
    for (;;) {
      const page = await this.api.queuePage(offset, this.pageSize);
      docs.push(...page.items);
      total = page.total;
      offset += this.pageSize;
      if (docs.length >= total || page.items.length === 0) break;
    }
    return [docs, total];
  }

  private pickCursor(oldOrder: string[], oldCursor: string | null): string | null {
    const pending = new Set(
      this.entries.filter((e) => e.local === "pending").map((e) => e.doc.id),
    );
    if (oldCursor !== null) {
      if (pending.has(oldCursor)) return oldCursor;
      // fall forward through the previous ordering to the next survivor
      const from = oldOrder.indexOf(oldCursor);
      if (from >= 0) {
        for (const id of oldOrder.slice(from + 1)) {
          if (pending.has(id)) return id;
        }
      }
    }
    const first = this.entries.find((e) => e.local === "pending");
    return first ? first.doc.id : null;
  }

  /** Move the cursor to the next pending entry after the current one. */
  next(): void {
    this.moveCursor(+1);
  }

  /** Move the cursor to the previous pending entry. */
  prev(): void {
    this.moveCursor(-1);
  }

  private moveCursor(step: 1 | -1): void {
    const at = this.entries.findIndex((e) => e.doc.id === this.cursorId);
    const start = at >= 0 ? at + step : step > 0 ? 0 : this.entries.length - 1;
    for (let i = start; i >= 0 && i < this.entries.length; i += step) {
      if (this.entries[i].local === "pending") {
        this.cursorId = this.entries[i].doc.id;
        this.emit();
        return;
      }
    }
  }

  /** Cursor for after `id` leaves the pending pool: next pending below it,
   * else the nearest pending above it, else the empty-queue state. */
  private cursorAfter(id: string): string | null {
    const at = this.entries.findIndex((e) => e.doc.id === id);
    for (let i = at + 1; i < this.entries.length; i++) {
      if (this.entries[i].local === "pending") return this.entries[i].doc.id;
    }
    for (let i = at - 1; i >= 0; i--) {
      if (this.entries[i].local === "pending") return this.entries[i].doc.id;
    }
    return null;
  }

  /** Decide the candidate under the cursor.
   *
   * One POST per call, at most one in flight per candidate. The cursor
   * advances before the request resolves; the tally moves only on a 2xx.
   */
  async decide(decision: Decision, note?: string): Promise<void> {
    if (!this.online) {
      this.notice = { kind: "error", text: "offline: decisions are disabled" };
      this.emit();
      return;
    }
    const entry = this.current();
    if (!entry || this.inFlight.has(entry.doc.id)) return;

    const id = entry.doc.id;
    entry.local = "deciding";
    this.inFlight.add(id);
    this.cursorId = this.cursorAfter(id);
    this.emit();

    const result = await this.api.decide(id, decision, note);
    this.inFlight.delete(id);

    if (result.ok) {
      entry.doc = result.doc;
      entry.local = decision === "confirm" ? "confirmed" : "rejected";
      this.tally.reviewed += 1;
      if (decision === "confirm") this.tally.confirmed += 1;
      else this.tally.rejected += 1;
      this.notice = null;
    } else if (result.status === 409) {
      entry.local = "external";
      this.notice = {
        kind: "info",
        text: `${id} was decided elsewhere; skipped`,
      };
    } else {
      entry.local = "pending";
      this.cursorId = id;
      this.notice = {
        kind: "error",
        text: `decision on ${id} failed (${result.status} ${result.error}): ${result.detail}`,
      };
    }
    this.emit();
  }

  setOnline(online: boolean): void {
    this.online = online;
    this.notice = online ? null : { kind: "error", text: "offline: decisions are disabled" };
    this.emit();
  }

  clearNotice(): void {
    this.notice = null;
    this.emit();
  }
}
