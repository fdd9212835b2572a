// Pure view/board logic, separated from the DOM so it can be tested headless.
// Line objects pass through untouched: sorting and filtering reorder
// references, never copy or rewrite them.

import type { PoolLine, SessionDoc } from "./api.js";

export type SortKey = "arrival" | "surprisal" | "novelty";

export interface ViewOptions {
  sort: SortKey;
  descending: boolean;
  inBandOnly: boolean;
}

export const DEFAULT_VIEW: ViewOptions = { sort: "arrival", descending: false, inBandOnly: false };

export function poolView(pool: readonly PoolLine[], opts: ViewOptions): PoolLine[] {
  let lines = opts.inBandOnly ? pool.filter((l) => l.score?.in_band) : [...pool];
  if (opts.sort !== "arrival") {
    const key = opts.sort;
    lines = [...lines].sort((a, b) => (a.score?.[key] ?? Infinity) - (b.score?.[key] ?? Infinity));
  }
  if (opts.descending) lines.reverse();
  return lines;
}

/** Reorder for a drag from one index to another; null means "no request". */
export function moveIndex<T>(items: readonly T[], from: number, to: number): T[] | null {
  if (from === to) return null;
  if (from < 0 || to < 0 || from >= items.length || to >= items.length) return null;
  const next = [...items];
  const moved = next.splice(from, 1)[0] as T;
  next.splice(to, 0, moved);
  return next;
}

/**
 * The board shows every pinned line: arranged ids first in their stored
 * order, then pinned-but-unplaced ids by arrival. Saving sends the visible
 * order, so the persisted arrangement is exactly what the artist sees.
 */
export function boardOrder(doc: SessionDoc): number[] {
  const placed = doc.arrangement.filter((id) => doc.pinned.includes(id));
  const rest = doc.pinned.filter((id) => !placed.includes(id)).sort((a, b) => a - b);
  return [...placed, ...rest];
}

export class SessionState {
  doc: SessionDoc | null = null;
  highlighted: Set<number> = new Set();

  apply(doc: SessionDoc): void {
    this.doc = doc;
  }

  appendLines(added: PoolLine[]): void {
    if (!this.doc) throw new Error("no session loaded");
    this.doc.pool.push(...added);
    const ids = added.map((l) => l.id);
    this.doc.next_line_id = Math.max(this.doc.next_line_id, ...ids.map((i) => i + 1));
    this.highlighted = new Set(ids);
  }

  byId(id: number): PoolLine | undefined {
    return this.doc?.pool.find((l) => l.id === id);
  }

  isPinned(id: number): boolean {
    return this.doc?.pinned.includes(id) ?? false;
  }

  /**
   * Optimistic pin/unpin: flips local state immediately and returns a
   * rollback closure for when the service rejects the call.
   */
  togglePinOptimistic(id: number): { pinnedNow: boolean; rollback: () => void } {
    if (!this.doc) throw new Error("no session loaded");
    const doc = this.doc;
    const before = { pinned: [...doc.pinned], arrangement: [...doc.arrangement] };
    let pinnedNow: boolean;
    if (doc.pinned.includes(id)) {
      doc.pinned = doc.pinned.filter((p) => p !== id);
      doc.arrangement = doc.arrangement.filter((p) => p !== id);
      pinnedNow = false;
    } else {
      doc.pinned = [...doc.pinned, id];
      pinnedNow = true;
    }
    return {
      pinnedNow,
      rollback: () => {
        doc.pinned = before.pinned;
        doc.arrangement = before.arrangement;
      },
    };
  }
}
