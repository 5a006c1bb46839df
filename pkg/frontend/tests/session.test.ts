import { describe, expect, it } from "vitest";

import { LabelingClient, QueryPayload } from "../src/api.js";
import { AnnotationSession, choiceToLabel } from "../src/session.js";

function fakeQuery(id: string): QueryPayload {
  return {
    id,
    horizon: 2,
    initial_state: [0.1],
    epsilon: 0.05,
    first: { u: [[0], [0]], y: [[0.1], [0.0], [0.0]], y_norm: [0.1, 0, 0] },
    second: { u: [[1], [0]], y: [[0.1], [0.2], [0.0]], y_norm: [0.1, 0.2, 0] },
  };
}

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeServer(queue: QueryPayload[], calls: Call[], opts: { conflictOn?: string } = {}) {
  const answered = new Set<string>();
  return async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    if (url.endsWith("/api/status")) {
      return Response.json({ session: "s", pending: queue.length, answered: answered.size, iteration: 0 });
    }
    if (url.endsWith("/api/query/next")) {
      return Response.json(queue.length ? (queue[0] as unknown as Record<string, unknown>) : { empty: true });
    }
    const match = url.match(/\/api\/query\/(.+)\/label$/);
    if (match) {
      const id = decodeURIComponent(match[1]);
      if (opts.conflictOn === id || answered.has(id)) {
        return new Response("{}", { status: 409 });
      }
      answered.add(id);
      if (queue.length && queue[0].id === id) {
        queue.shift();
      }
      return Response.json({ status: "ok", id });
    }
    return new Response("not found", { status: 404 });
  };
}

describe("choiceToLabel", () => {
  it("maps A to 1 and B to 0", () => {
    expect(choiceToLabel("A")).toBe(1);
    expect(choiceToLabel("B")).toBe(0);
  });
});

describe("LabelingClient", () => {
  it("returns null on an empty queue", async () => {
    const calls: Call[] = [];
    const client = new LabelingClient("", fakeServer([], calls));
    expect(await client.nextQuery()).toBeNull();
  });

  it("posts the mapped label body", async () => {
    const calls: Call[] = [];
    const client = new LabelingClient("", fakeServer([fakeQuery("q1")], calls));
    expect(await client.submitLabel("q1", 1)).toBe("ok");
    const post = calls.find((c) => c.url.includes("/label"));
    expect(post).toBeDefined();
    expect(JSON.parse(String(post!.init!.body))).toEqual({ preference: 1 });
  });

  it("maps 409 to a conflict result", async () => {
    const calls: Call[] = [];
    const client = new LabelingClient("", fakeServer([fakeQuery("q1")], calls, { conflictOn: "q1" }));
    expect(await client.submitLabel("q1", 0)).toBe("conflict");
  });
});

describe("AnnotationSession", () => {
  it("renders a pending query and goes idle when drained", async () => {
    const queue = [fakeQuery("q1")];
    const calls: Call[] = [];
    const seen: string[] = [];
    let idle = 0;
    const session = new AnnotationSession(new LabelingClient("", fakeServer(queue, calls)), {
      onQuery: (q) => seen.push(q.id),
      onIdle: () => idle++,
    });
    await session.pollOnce();
    expect(seen).toEqual(["q1"]);
    expect(session.currentQuery?.id).toBe("q1");
    await session.choose("A");
    await session.pollOnce();
    expect(idle).toBe(1);
  });

  it("does not re-render the same query on repeat polls", async () => {
    const queue = [fakeQuery("q1")];
    const calls: Call[] = [];
    const seen: string[] = [];
    const session = new AnnotationSession(new LabelingClient("", fakeServer(queue, calls)), {
      onQuery: (q) => seen.push(q.id),
    });
    await session.pollOnce();
    await session.pollOnce();
    expect(seen).toEqual(["q1"]);
  });

  it("choice A posts label 1 and B posts 0", async () => {
    for (const [choice, label] of [["A", 1], ["B", 0]] as const) {
      const queue = [fakeQuery("qx")];
      const calls: Call[] = [];
      const session = new AnnotationSession(new LabelingClient("", fakeServer(queue, calls)));
      await session.pollOnce();
      expect(await session.choose(choice)).toBe(true);
      const post = calls.find((c) => c.url.includes("/label"));
      expect(JSON.parse(String(post!.init!.body))).toEqual({ preference: label });
    }
  });

  it("double-click produces exactly one POST", async () => {
    const queue = [fakeQuery("q1")];
    const calls: Call[] = [];
    const session = new AnnotationSession(new LabelingClient("", fakeServer(queue, calls)));
    await session.pollOnce();
    const [first, second] = await Promise.all([session.choose("A"), session.choose("A")]);
    expect(first).toBe(true);
    expect(second).toBe(false);
    const posts = calls.filter((c) => c.url.includes("/label"));
    expect(posts.length).toBe(1);
  });

  it("conflict advances with an informational error", async () => {
    const queue = [fakeQuery("q1")];
    const calls: Call[] = [];
    const errors: string[] = [];
    const session = new AnnotationSession(
      new LabelingClient("", fakeServer(queue, calls, { conflictOn: "q1" })),
      { onError: (m) => errors.push(m) },
    );
    await session.pollOnce();
    expect(await session.choose("B")).toBe(true);
    expect(errors.some((m) => m.includes("already answered"))).toBe(true);
    expect(session.currentQuery).toBeNull();
  });

  it("reports errors but keeps polling when the service fails", async () => {
    const errors: string[] = [];
    const failing = async () => new Response("boom", { status: 500 });
    const session = new AnnotationSession(new LabelingClient("", failing), {
      onError: (m) => errors.push(m),
    });
    await session.pollOnce();
    expect(errors.length).toBeGreaterThan(0);
    await session.pollOnce(); // must not throw
  });
});
