// Pure view/board logic, separated from the DOM so it can be tested headless.
// Line objects pass through untouched: sorting and filtering reorder
// references, never copy or rewrite them.
export const DEFAULT_VIEW = { sort: "arrival", descending: false, inBandOnly: false };
export function poolView(pool, opts) {
    let lines = opts.inBandOnly ? pool.filter((l) => l.score?.in_band) : [...pool];
    if (opts.sort !== "arrival") {
        const key = opts.sort;
        lines = [...lines].sort((a, b) => (a.score?.[key] ?? Infinity) - (b.score?.[key] ?? Infinity));
    }
    if (opts.descending)
        lines.reverse();
    return lines;
}
/** Reorder for a drag from one index to another; null means "no request". */
export function moveIndex(items, from, to) {
    if (from === to)
        return null;
    if (from < 0 || to < 0 || from >= items.length || to >= items.length)
        return null;
    const next = [...items];
    const moved = next.splice(from, 1)[0];
    next.splice(to, 0, moved);
    return next;
}
/**
 * The board shows every pinned line: arranged ids first in their stored
 * order, then pinned-but-unplaced ids by arrival. Saving sends the visible
 * order, so the persisted arrangement is exactly what the artist sees.
 */
export function boardOrder(doc) {
    const placed = doc.arrangement.filter((id) => doc.pinned.includes(id));
    const rest = doc.pinned.filter((id) => !placed.includes(id)).sort((a, b) => a - b);
    return [...placed, ...rest];
}
export class SessionState {
    constructor() {
        this.doc = null;
        this.highlighted = new Set();
    }
    apply(doc) {
        this.doc = doc;
    }
    appendLines(added) {
        if (!this.doc)
            throw new Error("no session loaded");
        this.doc.pool.push(...added);
        const ids = added.map((l) => l.id);
        this.doc.next_line_id = Math.max(this.doc.next_line_id, ...ids.map((i) => i + 1));
        this.highlighted = new Set(ids);
    }
    byId(id) {
        return this.doc?.pool.find((l) => l.id === id);
    }
    isPinned(id) {
        return this.doc?.pinned.includes(id) ?? false;
    }
    /**
     * Optimistic pin/unpin: flips local state immediately and returns a
     * rollback closure for when the service rejects the call.
     */
    togglePinOptimistic(id) {
        if (!this.doc)
            throw new Error("no session loaded");
        const doc = this.doc;
        const before = { pinned: [...doc.pinned], arrangement: [...doc.arrangement] };
        let pinnedNow;
        if (doc.pinned.includes(id)) {
            doc.pinned = doc.pinned.filter((p) => p !== id);
            doc.arrangement = doc.arrangement.filter((p) => p !== id);
            pinnedNow = false;
        }
        else {
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
