import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ReviewSession } from "../src/state.js";
import { MockServer, makeCandidates } from "./mock_server.js";

let server: MockServer;
let session: ReviewSession;

function freshSession(n = 12, pageSize = 10): void {
  server = new MockServer(makeCandidates(n));
  session = new ReviewSession(new ApiClient(server.fetch), pageSize);
}

beforeEach(() => freshSession());

describe("refresh", () => {
  it("loads every page and mirrors the server's order", async () => {
    await session.refresh();
    expect(session.phase).toBe("ready");
    expect(session.entries.map((e) => e.doc.id)).toEqual(
      server.listing("pending").map((d) => d.id),
    );
    expect(session.total).toBe(12);
    const pages = server.requests.filter((r) => r.path === "/api/candidates");
    expect(pages.map((r) => r.query.offset)).toEqual(["0", "10"]);
  });

  it("starts with the cursor on the top-scoring candidate", async () => {
    await session.refresh();
    expect(session.cursorId).toBe(server.listing("pending")[0].id);
  });

  it("enters a visible error state on connection failure and recovers on retry", async () => {
    server.failNextQueue = "network";
    await session.refresh();
    expect(session.phase).toBe("error");
    expect(session.loadError).toBeTruthy();
    await session.refresh();
    expect(session.phase).toBe("ready");
    expect(session.entries).toHaveLength(12);
  });

  it("keeps the cursor on the same candidate while it stays pending", async () => {
    await session.refresh();
    session.next();
    session.next();
    const at = session.cursorId;
    await session.refresh();
    expect(session.cursorId).toBe(at);
  });

  it("falls forward past candidates decided elsewhere", async () => {
    await session.refresh();
    session.next();
    const order = session.entries.map((e) => e.doc.id);
    server.decideExternally(order[1]);
    await session.refresh();
    expect(session.cursorId).toBe(order[2]);
    expect(session.entries.map((e) => e.doc.id)).not.toContain(order[1]);
  });

  it("rebuilds entries from the response alone", async () => {
    await session.refresh();
    await session.decide("confirm");
    expect(session.entries.some((e) => e.local === "confirmed")).toBe(true);
    await session.refresh();
    expect(session.entries.every((e) => e.local === "pending")).toBe(true);
    expect(session.entries).toHaveLength(11);
  });
});

describe("decide", () => {
  it("advances the cursor before the server answers", async () => {
    await session.refresh();
    const [first, second] = session.entries.map((e) => e.doc.id);
    const inflight = session.decide("confirm");
    expect(session.cursorId).toBe(second);
    expect(session.entries[0].local).toBe("deciding");
    await inflight;
    expect(session.entries[0].local).toBe("confirmed");
    expect(server.decisionPosts.get(first)).toBe(1);
  });

  it("tallies confirmations and rejections separately", async () => {
    await session.refresh();
    await session.decide("confirm");
    await session.decide("reject");
    expect(session.tally).toEqual({ reviewed: 2, confirmed: 1, rejected: 1 });
  });

  it("marks a 409 as decided elsewhere, skips it, and leaves the tally alone", async () => {
    await session.refresh();
    const first = session.entries[0].doc.id;
    server.decideExternally(first, "rejected");
    await session.decide("confirm");
    expect(session.entries[0].local).toBe("external");
    expect(session.tally).toEqual({ reviewed: 0, confirmed: 0, rejected: 0 });
    expect(session.notice?.kind).toBe("info");
    expect(session.cursorId).toBe(session.entries[1].doc.id);
  });

  it("rolls back to pending and parks the cursor for retry on a 5xx", async () => {
    await session.refresh();
    const first = session.entries[0].doc.id;
    server.failNextDecision = { status: 500, error: "boom", detail: "log write failed" };
    await session.decide("confirm");
    expect(session.entries[0].local).toBe("pending");
    expect(session.cursorId).toBe(first);
    expect(session.notice?.kind).toBe("error");
    expect(session.tally.reviewed).toBe(0);
    await session.decide("confirm");
    expect(session.entries[0].local).toBe("confirmed");
    expect(server.decisionPosts.get(first)).toBe(2);
  });

  it("treats connection loss mid-flight like any other failed POST", async () => {
    await session.refresh();
    server.failNextDecision = "network";
    await session.decide("confirm");
    expect(session.entries[0].local).toBe("pending");
    expect(session.notice?.kind).toBe("error");
    expect(session.tally.reviewed).toBe(0);
  });

  it("does nothing when the queue is empty", async () => {
    freshSession(0);
    await session.refresh();
    expect(session.cursorId).toBeNull();
    await session.decide("confirm");
    expect(server.decisionPosts.size).toBe(0);
  });

  it("reaches the empty-queue state after the last candidate", async () => {
    freshSession(2);
    await session.refresh();
    await session.decide("confirm");
    await session.decide("reject");
    expect(session.cursorId).toBeNull();
    expect(session.current()).toBeNull();
    expect(session.pendingCount()).toBe(0);
  });
});

describe("offline", () => {
  it("disables decisions instead of queueing them", async () => {
    await session.refresh();
    session.setOnline(false);
    await session.decide("confirm");
    expect(server.decisionPosts.size).toBe(0);
    expect(session.notice?.text).toContain("offline");
    expect(session.entries[0].local).toBe("pending");
  });

  it("re-enables decisions when connectivity returns", async () => {
    await session.refresh();
    session.setOnline(false);
    session.setOnline(true);
    await session.decide("confirm");
    expect(session.tally.reviewed).toBe(1);
  });
});

describe("navigation", () => {
  it("walks only pending candidates", async () => {
    await session.refresh();
    const ids = session.entries.map((e) => e.doc.id);
    session.next();
    expect(session.cursorId).toBe(ids[1]);
    session.prev();
    expect(session.cursorId).toBe(ids[0]);
  });

  it("stays put at either end of the queue", async () => {
    freshSession(3);
    await session.refresh();
    const ids = session.entries.map((e) => e.doc.id);
    session.prev();
    expect(session.cursorId).toBe(ids[0]);
    session.next();
    session.next();
    session.next();
    expect(session.cursorId).toBe(ids[2]);
  });

  it("never lands on a candidate with a decision in flight", async () => {
    await session.refresh();
    const inflight = session.decide("confirm");
    session.prev();
    expect(session.entries.find((e) => e.doc.id === session.cursorId)?.local).toBe("pending");
    await inflight;
  });

  it("skips decided candidates when walking back", async () => {
    await session.refresh();
    const ids = session.entries.map((e) => e.doc.id);
    await session.decide("confirm");
    session.next();
    session.prev();
    expect(session.cursorId).toBe(ids[1]);
  });
});

describe("subscribe", () => {
  it("notifies on every state change", async () => {
    let calls = 0;
    session.subscribe(() => (calls += 1));
    await session.refresh();
    const afterRefresh = calls;
    expect(afterRefresh).toBeGreaterThanOrEqual(2); // loading, ready
    await session.decide("confirm");
    expect(calls).toBeGreaterThanOrEqual(afterRefresh + 2); // optimistic, committed
  });
});
