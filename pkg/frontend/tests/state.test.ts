import { describe, expect, it } from "vitest";

import type { PoolLine, SessionDoc } from "../src/api.js";
import { DEFAULT_VIEW, SessionState, boardOrder, moveIndex, poolView } from "../src/state.js";

function line(id: number, text: string, surprisal: number, novelty: number, inBand: boolean): PoolLine {
  return {
    id,
    text,
    tokens: [],
    provenance: { kind: "prior", latent: [0, 0] },
    score: { surprisal, novelty, in_band: inBand },
  };
}

function doc(pool: PoolLine[], pinned: number[] = [], arrangement: number[] = []): SessionDoc {
  return {
    id: "s0001",
    created: "",
    modified: "",
    model_refs: {},
    band: {},
    resolved_band: null,
    next_line_id: Math.max(0, ...pool.map((l) => l.id)) + 1,
    pool,
    pinned,
    arrangement,
  };
}

describe("moveIndex", () => {
  it("returns null for a drop on the same index (no request)", () => {
    expect(moveIndex([1, 2, 3], 1, 1)).toBeNull();
  });

  it("returns null for out-of-range indices", () => {
    expect(moveIndex([1, 2], 0, 5)).toBeNull();
    expect(moveIndex([1, 2], -1, 0)).toBeNull();
  });

  it("moves forward and backward without mutating the input", () => {
    const items = [10, 20, 30, 40];
    expect(moveIndex(items, 0, 2)).toEqual([20, 30, 10, 40]);
    expect(moveIndex(items, 3, 0)).toEqual([40, 10, 20, 30]);
    expect(items).toEqual([10, 20, 30, 40]);
  });
});

describe("poolView", () => {
  const pool = [
    line(1, "a", 3.0, 0.2, true),
    line(2, "b", 1.0, 0.9, false),
    line(3, "c", 2.0, 0.5, true),
  ];

  it("keeps arrival order by default and passes line objects through untouched", () => {
    const out = poolView(pool, DEFAULT_VIEW);
    expect(out.map((l) => l.id)).toEqual([1, 2, 3]);
    out.forEach((l, i) => expect(l).toBe(pool[i])); // same references, never copies
  });

  it("sorts by surprisal and novelty", () => {
    expect(poolView(pool, { sort: "surprisal", descending: false, inBandOnly: false }).map((l) => l.id)).toEqual([2, 3, 1]);
    expect(poolView(pool, { sort: "novelty", descending: true, inBandOnly: false }).map((l) => l.id)).toEqual([2, 3, 1]);
  });

  it("filters to in-band lines only", () => {
    expect(poolView(pool, { sort: "arrival", descending: false, inBandOnly: true }).map((l) => l.id)).toEqual([1, 3]);
  });
});

describe("boardOrder", () => {
  it("is the arrangement followed by unplaced pinned ids", () => {
    const d = doc([line(1, "a", 1, 0, true), line(2, "b", 1, 0, true), line(3, "c", 1, 0, true)], [1, 2, 3], [3, 1]);
    expect(boardOrder(d)).toEqual([3, 1, 2]);
  });

  it("is always a subsequence of the pinned set", () => {
    const d = doc([line(1, "a", 1, 0, true), line(2, "b", 1, 0, true)], [2], [2, 1]);
    expect(boardOrder(d)).toEqual([2]);
  });
});

describe("SessionState optimistic pin", () => {
  it("flips immediately and rolls back on rejection", () => {
    const state = new SessionState();
    state.apply(doc([line(1, "a", 1, 0, true)], [], []));
    const { pinnedNow, rollback } = state.togglePinOptimistic(1);
    expect(pinnedNow).toBe(true);
    expect(state.isPinned(1)).toBe(true);
    rollback();
    expect(state.isPinned(1)).toBe(false);
  });

  it("unpin removes the line from the arrangement too", () => {
    const state = new SessionState();
    state.apply(doc([line(1, "a", 1, 0, true), line(2, "b", 1, 0, true)], [1, 2], [2, 1]));
    state.togglePinOptimistic(1);
    expect(state.doc!.arrangement).toEqual([2]);
  });
});

describe("SessionState.appendLines", () => {
  it("appends service lines verbatim and highlights them", () => {
    const state = new SessionState();
    state.apply(doc([line(1, "a", 1, 0, true)]));
    const fresh = line(2, "b", 2, 1, false);
    state.appendLines([fresh]);
    expect(state.doc!.pool[1]).toBe(fresh);
    expect(state.highlighted.has(2)).toBe(true);
    expect(state.doc!.next_line_id).toBe(3);
  });
});
