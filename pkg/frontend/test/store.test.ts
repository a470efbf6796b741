import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api";
import { acceptedFingerprint } from "../src/fingerprint";
import { segments } from "../src/render";
import { substituteSpans, validateSlots, WorkbenchStore } from "../src/store";
import { Candidate, PredictRequest, PredictResponse } from "../src/types";

const TEXT = "long v1; v1 = v2 + 1;";
const SLOTS = [
  { placeholder: "v1", spans: [[5, 7], [9, 11]] as [number, number][] },
  { placeholder: "v2", spans: [[14, 16]] as [number, number][] },
];

function cand(name: string, meanProb: number, count = 1): Candidate {
  return { name, count, mean_prob: meanProb, token_probs: [meanProb] };
}

function response(suggestions: Record<string, Candidate[]>): PredictResponse {
  return { model: { vocab_hash: "vh", checkpoint_hash: "ch" }, mode: "heuristic", suggestions };
}

const GOLDEN = new Map<string, PredictResponse>([
  [
    acceptedFingerprint({}),
    response({
      v1: [cand("count", 0.9), cand("total", 0.5)],
      v2: [cand("n", 0.8), cand("len", 0.4)],
    }),
  ],
  [
    acceptedFingerprint({ v1: "count" }),
    response({ v2: [cand("len", 0.95), cand("n", 0.6)] }),
  ],
  [
    acceptedFingerprint({ v1: "total" }),
    response({ v2: [cand("size", 0.7)] }),
  ],
  [
    acceptedFingerprint({ v2: "buflen" }),
    response({ v1: [cand("acc", 0.66)] }),
  ],
]);

interface Mock {
  client: ServiceClient;
  calls: PredictRequest[];
  /** when set, /predict responses wait until released in order */
  release?: () => void;
}

function mockService(options?: { deferred?: boolean }): Mock & {
  pending: (() => void)[];
} {
  const calls: PredictRequest[] = [];
  const pending: (() => void)[] = [];
  const fetchImpl = async (url: string, init?: RequestInit): Promise<Response> => {
    if (url.endsWith("/predict")) {
      const body = JSON.parse(String(init?.body)) as PredictRequest;
      calls.push(body);
      const golden = GOLDEN.get(acceptedFingerprint(body.accepted));
      const respond = () =>
        golden
          ? new Response(JSON.stringify(golden), { status: 200 })
          : new Response(JSON.stringify({ error: "no golden response" }), { status: 400 });
      if (options?.deferred) {
        return new Promise<Response>((resolve) => {
          pending.push(() => resolve(respond()));
        });
      }
      return respond();
    }
    if (url.endsWith("/model")) {
      return new Response(
        JSON.stringify({ config: {}, param_count: 7, vocab_hash: "vh",
                         checkpoint_hash: "ch", max_allowed: 2 }),
        { status: 200 },
      );
    }
    return new Response("{}", { status: 200 });
  };
  const client = new ServiceClient("http://mock", fetchImpl);
  return { client, calls, pending };
}

describe("validation", () => {
  it("rejects out-of-bounds and overlapping spans without requests", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction("ab", [{ placeholder: "v1", spans: [[0, 9]] }]);
    expect(store.getState().error).toMatch("out of bounds");
    expect(store.getState().loaded).toBe(false);
    expect(calls.length).toBe(0);

    expect(validateSlots("aaaa", [
      { placeholder: "v1", spans: [[0, 2], [1, 3]] },
    ])).toMatch("overlapping");
    expect(validateSlots(TEXT, [{ placeholder: "v1", spans: [] }])).toMatch("no occurrences");
  });

  it("accepts the golden slot layout", () => {
    expect(validateSlots(TEXT, SLOTS)).toBeNull();
  });
});

describe("loading", () => {
  it("issues exactly one initial request and stores the response verbatim", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client, { k: 5 });
    await store.loadFunction(TEXT, SLOTS);
    expect(calls.length).toBe(1);
    expect(calls[0].accepted).toEqual({});
    expect(calls[0].code).toBe(TEXT);
    const golden = GOLDEN.get(acceptedFingerprint({}))!;
    // never mutated: byte-identical to the golden payload
    expect(JSON.stringify(store.getState().suggestions)).toBe(
      JSON.stringify(golden.suggestions),
    );
    expect(store.getState().requestInFlight).toBe(false);
  });

  it("loads a function with no slots without issuing requests", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction("return 1;", []);
    expect(calls.length).toBe(0);
    expect(store.getState().loaded).toBe(true);
    expect(store.isComplete()).toBe(true);
  });
});

describe("accept / refine loop", () => {
  it("accepting issues exactly one refine request with the grown accepted-set", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    expect(calls.length).toBe(1);

    await store.acceptSuggestion("v1", "count");
    expect(calls.length).toBe(2);
    expect(calls[1].accepted).toEqual({ v1: "count" });
    // remaining panel updated to the golden refreshed suggestions
    const refreshed = GOLDEN.get(acceptedFingerprint({ v1: "count" }))!;
    expect(JSON.stringify(store.getState().suggestions)).toBe(
      JSON.stringify(refreshed.suggestions),
    );
    const v1 = store.getState().slots.v1.status;
    expect(v1).toEqual({ kind: "accepted", name: "count", rank: 1 });
  });

  it("rejects accepting a name that is not currently suggested", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    await store.acceptSuggestion("v1", "bogus");
    expect(store.getState().error).toMatch("not a current suggestion");
    expect(calls.length).toBe(1);
  });

  it("undo restores the prior panel state and accepted-set", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    const before = JSON.stringify(store.getState().suggestions);

    await store.acceptSuggestion("v1", "count");
    expect(JSON.stringify(store.getState().suggestions)).not.toBe(before);

    await store.undo();
    expect(store.getState().slots.v1.status).toEqual({ kind: "pending" });
    // deterministic service: panels identical to the pre-accept response
    expect(JSON.stringify(store.getState().suggestions)).toBe(before);
    expect(calls.length).toBe(3);
    expect(calls[2].accepted).toEqual({});
    expect(store.canUndo()).toBe(false);
  });

  it("override fixes a typed name and excludes it from future requests", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    await store.overrideName("v2", "buflen");
    expect(calls[1].accepted).toEqual({ v2: "buflen" });
    expect(store.getState().slots.v2.status).toEqual({ kind: "overridden", name: "buflen" });
    const golden = GOLDEN.get(acceptedFingerprint({ v2: "buflen" }))!;
    expect(JSON.stringify(store.getState().suggestions)).toBe(
      JSON.stringify(golden.suggestions),
    );
  });

  it("completing every slot clears suggestions without another request", async () => {
    const { client, calls } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    await store.acceptSuggestion("v1", "count");
    await store.acceptSuggestion("v2", "len");
    // second accept leaves no pending slots: no further predict call
    expect(calls.length).toBe(2);
    expect(store.isComplete()).toBe(true);
    expect(store.getState().suggestions).toEqual({});
  });

  it("request failure keeps state except the error banner", async () => {
    const { client } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    const before = store.getState();
    // 'total' for v2 has no golden response -> mock answers 400
    await store.overrideName("v2", "unknowable");
    const after = store.getState();
    expect(after.error).toMatch("predict failed (400)");
    expect(after.suggestions).toEqual(before.suggestions);
    expect(after.requestInFlight).toBe(false);
  });
});

describe("stale responses", () => {
  it("discards a response that arrives after its accepted-set was superseded", async () => {
    const mock = mockService({ deferred: true });
    const store = new WorkbenchStore(mock.client);

    const load = store.loadFunction(TEXT, SLOTS);
    expect(mock.pending.length).toBe(1);
    mock.pending[0]();
    await load;

    // accept -> request 2 pending; undo before its response arrives
    const accept = store.acceptSuggestion("v1", "count");
    expect(mock.pending.length).toBe(2);
    const undo = store.undo();
    expect(mock.pending.length).toBe(3);

    // resolve the undo request first, then the superseded accept request
    mock.pending[2]();
    await undo;
    const settled = JSON.stringify(store.getState().suggestions);
    mock.pending[1]();
    await accept;

    // the late accept-response must be provably dropped
    expect(JSON.stringify(store.getState().suggestions)).toBe(settled);
    expect(JSON.stringify(store.getState().suggestions)).toBe(
      JSON.stringify(GOLDEN.get(acceptedFingerprint({}))!.suggestions),
    );
  });

  it("only the latest of competing identical-set requests applies", async () => {
    const mock = mockService({ deferred: true });
    const store = new WorkbenchStore(mock.client);
    const load = store.loadFunction(TEXT, SLOTS);
    mock.pending[0]();
    await load;

    const r1 = store.refresh();
    const r2 = store.refresh();
    expect(mock.pending.length).toBe(3);
    mock.pending[2]();
    await r2;
    mock.pending[1]();
    await r1; // stale token: ignored, no flicker back to in-flight
    expect(store.getState().requestInFlight).toBe(false);
  });
});

describe("export", () => {
  it("produces renamed text with rank provenance", async () => {
    const { client } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    await store.acceptSuggestion("v1", "total"); // rank 2
    await store.acceptSuggestion("v2", "size"); // rank 1 in refreshed panel
    const result = store.exportResult();
    expect(result.renamedText).toBe("long total; total = size + 1;");
    expect(result.names).toEqual({
      v1: { name: "total", source: "accepted", rank: 2 },
      v2: { name: "size", source: "accepted", rank: 1 },
    });
  });
});

describe("helpers", () => {
  it("substituteSpans is byte-accurate for multi-byte text", () => {
    const text = "int éé; éé = 1;"; // 2-byte chars
    const spans: [number, number][] = [[4, 8], [10, 14]];
    const out = substituteSpans(text, [{ spans, replacement: "n" }]);
    expect(out).toBe("int n; n = 1;");
  });

  it("fingerprints are order-insensitive", () => {
    expect(acceptedFingerprint({ a: "x", b: "y" })).toBe(
      acceptedFingerprint({ b: "y", a: "x" }),
    );
    expect(acceptedFingerprint({ a: "x" })).not.toBe(acceptedFingerprint({ a: "z" }));
  });

  it("segments substitute chosen names into the code view", async () => {
    const { client } = mockService();
    const store = new WorkbenchStore(client);
    await store.loadFunction(TEXT, SLOTS);
    await store.acceptSuggestion("v1", "count");
    const parts = segments(store.getState());
    const rendered = parts.map((p) => p.text).join("");
    expect(rendered).toBe("long count; count = v2 + 1;");
    expect(parts.filter((p) => p.placeholder === "v1").map((p) => p.text)).toEqual([
      "count",
      "count",
    ]);
  });
});
