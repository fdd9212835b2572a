// DOM layer: renders the pool and the arrangement board, and wires every
// interaction to exactly one API call. Optimistic updates roll back on any
// non-2xx response.

import { ApiClient, ApiError, type PoolLine, type SessionDoc } from "./api.js";
import { DEFAULT_VIEW, SessionState, boardOrder, moveIndex, poolView, type ViewOptions } from "./state.js";

const api = new ApiClient("");
const state = new SessionState();
const view: ViewOptions = { ...DEFAULT_VIEW };

let pendingBridge: number | null = null;
let dragFrom: number | null = null;
let interpolationStrip: { parents: [number, number]; lines: PoolLine[] } | null = null;

const $ = <T extends HTMLElement>(selector: string): T => {
  const el = document.querySelector(selector);
  if (!el) throw new Error(`missing element ${selector}`);
  return el as T;
};

function setStatus(message: string, isError = false): void {
  const bar = $("#status");
  bar.textContent = message;
  bar.className = isError ? "status error" : "status";
}

function glyph(kind: string): string {
  return kind === "prior" ? "○" : kind === "neighborhood" ? "≈" : "⋯";
}

function scoreBadges(line: PoolLine): string {
  if (!line.score) return "";
  const band = line.score.in_band ? "in-band" : "off-band";
  return (
    `<span class="badge" title="surprisal (nats/token)">s ${line.score.surprisal.toFixed(2)}</span>` +
    `<span class="badge" title="novelty (fraction of new trigrams)">n ${line.score.novelty.toFixed(2)}</span>` +
    `<span class="badge ${band}" title="inside the surprisal band">${line.score.in_band ? "band" : "out"}</span>`
  );
}

function renderPool(): void {
  const doc = state.doc;
  const list = $("#pool-list");
  list.innerHTML = "";
  if (!doc) return;
  const lines = poolView(doc.pool, view);
  $("#pool-count").textContent = `${lines.length} / ${doc.pool.length} lines`;
  if (!doc.pool.length) {
    list.innerHTML = '<li class="hint">empty pool: set n and press generate</li>';
    return;
  }
  for (const line of lines) {
    const item = document.createElement("li");
    item.className = "pool-line" + (state.highlighted.has(line.id) ? " fresh" : "");
    if (pendingBridge === line.id) item.classList.add("bridge-source");

    const text = document.createElement("span");
    text.className = "text";
    text.textContent = line.text || "(empty line)";

    const meta = document.createElement("span");
    meta.className = "meta";
    meta.innerHTML = `<span class="glyph" title="${line.provenance.kind}">${glyph(line.provenance.kind)}</span>` + scoreBadges(line);

    const actions = document.createElement("span");
    actions.className = "actions";
    const pinButton = document.createElement("button");
    pinButton.textContent = state.isPinned(line.id) ? "★" : "☆";
    pinButton.title = state.isPinned(line.id) ? "unpin" : "pin";
    pinButton.onclick = () => togglePin(line.id);
    const moreButton = document.createElement("button");
    moreButton.textContent = "more";
    moreButton.title = "sample the latent neighborhood of this line";
    moreButton.onclick = () => moreLikeThis(line.id);
    const bridgeButton = document.createElement("button");
    bridgeButton.textContent = "bridge";
    bridgeButton.title = "interpolate between this line and a second one";
    bridgeButton.onclick = () => bridgeFrom(line.id);
    actions.append(pinButton, moreButton, bridgeButton);

    item.append(text, meta, actions);
    list.append(item);
  }
}

function renderStrip(): void {
  const host = $("#strip");
  if (!interpolationStrip || !state.doc) {
    host.innerHTML = "";
    host.classList.add("hidden");
    return;
  }
  const [a, b] = interpolationStrip.parents;
  const left = state.byId(a)?.text ?? "?";
  const right = state.byId(b)?.text ?? "?";
  host.classList.remove("hidden");
  host.innerHTML =
    `<div class="strip-title">bridge: “${left}” → “${right}”` +
    `<button id="strip-close">×</button></div>` +
    interpolationStrip.lines.map((l) => `<div class="strip-line">${l.text || "(empty)"}</div>`).join("");
  $("#strip-close").onclick = () => {
    interpolationStrip = null;
    renderStrip();
  };
}

function renderBoard(): void {
  const doc = state.doc;
  const list = $("#board-list");
  list.innerHTML = "";
  if (!doc) return;
  const order = boardOrder(doc);
  $("#board-count").textContent = `${order.length} pinned`;
  order.forEach((id, index) => {
    const line = state.byId(id);
    if (!line) return;
    const item = document.createElement("li");
    item.className = "board-line";
    item.draggable = true;
    item.dataset.index = String(index);
    item.innerHTML = `<span class="grip">☰</span><span class="text"></span>`;
    (item.querySelector(".text") as HTMLElement).textContent = line.text || "(empty line)";
    item.addEventListener("dragstart", () => {
      dragFrom = index;
      item.classList.add("dragging");
    });
    item.addEventListener("dragend", () => item.classList.remove("dragging"));
    item.addEventListener("dragover", (event) => event.preventDefault());
    item.addEventListener("drop", (event) => {
      event.preventDefault();
      if (dragFrom === null) return;
      void dropAt(dragFrom, index);
      dragFrom = null;
    });
    list.append(item);
  });
}

function renderAll(): void {
  renderPool();
  renderStrip();
  renderBoard();
  $("#session-id").textContent = state.doc ? state.doc.id : "no session";
}

async function dropAt(from: number, to: number): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  const order = boardOrder(doc);
  const next = moveIndex(order, from, to);
  if (next === null) return; // dropped in place: no request
  const before = [...doc.arrangement];
  doc.arrangement = next;
  renderBoard();
  try {
    state.apply(await api.putArrangement(doc.id, next));
    setStatus("arrangement saved");
  } catch (err) {
    doc.arrangement = before; // service rejected: revert and surface it
    setStatus(describe(err), true);
  }
  renderAll();
}

async function togglePin(id: number): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  const { pinnedNow, rollback } = state.togglePinOptimistic(id);
  renderAll();
  try {
    state.apply(pinnedNow ? await api.pin(doc.id, id) : await api.unpin(doc.id, id));
  } catch (err) {
    rollback();
    setStatus(describe(err), true);
  }
  renderAll();
}

async function moreLikeThis(id: number): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  const radius = Number(($("#radius") as HTMLInputElement).value) || 0.1;
  try {
    setStatus("sampling neighborhood…");
    const { added } = await api.vary(doc.id, { line_id: id, mode: "neighborhood", radius, n: 8 });
    state.appendLines(added);
    setStatus(`${added.length} neighborhood lines added`);
  } catch (err) {
    setStatus(describe(err), true);
  }
  renderAll();
}

async function bridgeFrom(id: number): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  if (pendingBridge === null) {
    pendingBridge = id;
    setStatus("bridge: now pick the second line");
    renderPool();
    return;
  }
  if (pendingBridge === id) {
    pendingBridge = null;
    setStatus("bridge cancelled");
    renderPool();
    return;
  }
  const first = pendingBridge;
  pendingBridge = null;
  try {
    setStatus("interpolating…");
    const { added } = await api.vary(doc.id, { line_id: first, mode: "interpolate", other_line_id: id, steps: 5 });
    state.appendLines(added);
    interpolationStrip = { parents: [first, id], lines: added };
    setStatus(`${added.length} bridge lines added`);
  } catch (err) {
    setStatus(describe(err), true);
  }
  renderAll();
}

async function generate(): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  const n = Number(($("#gen-n") as HTMLInputElement).value) || 50;
  const temperature = Number(($("#gen-temp") as HTMLInputElement).value) || 1.0;
  const seedRaw = ($("#gen-seed") as HTMLInputElement).value.trim();
  const applyBand = ($("#gen-band") as HTMLInputElement).checked;
  try {
    setStatus(`generating ${n} lines…`);
    const body: { n: number; temperature: number; apply_band: boolean; seed?: number } = {
      n,
      temperature,
      apply_band: applyBand,
    };
    if (seedRaw !== "") body.seed = Number(seedRaw);
    const { added, report } = await api.generatePool(doc.id, body);
    state.appendLines(added);
    setStatus(`added ${added.length} lines (seed ${report.seed})`);
  } catch (err) {
    setStatus(describe(err), true);
  }
  renderAll();
}

async function exportPoem(): Promise<void> {
  const doc = state.doc;
  if (!doc) return;
  try {
    const text = await api.exportText(doc.id); // downloaded verbatim, never rebuilt client-side
    const blob = new Blob([text], { type: "text/plain;charset=utf-8" });
    const anchor = document.createElement("a");
    anchor.href = URL.createObjectURL(blob);
    anchor.download = `${doc.id}.txt`;
    anchor.click();
    URL.revokeObjectURL(anchor.href);
    setStatus("poem downloaded");
  } catch (err) {
    setStatus(describe(err), true);
  }
}

async function newSession(): Promise<void> {
  try {
    const { id } = await api.createSession({});
    state.apply(await api.getSession(id));
    state.highlighted.clear();
    interpolationStrip = null;
    setStatus(`session ${id} created`);
  } catch (err) {
    setStatus(describe(err), true);
  }
  renderAll();
}

async function loadSession(): Promise<void> {
  const id = ($("#session-input") as HTMLInputElement).value.trim();
  if (!id) return;
  try {
    state.apply(await api.getSession(id));
    setStatus(`session ${id} loaded`);
  } catch (err) {
    setStatus(describe(err), true);
  }
  renderAll();
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

function wireControls(): void {
  $("#new-session").onclick = () => void newSession();
  $("#load-session").onclick = () => void loadSession();
  $("#generate").onclick = () => void generate();
  $("#export-text").onclick = () => void exportPoem();
  ($("#export-json") as HTMLAnchorElement).onclick = (event) => {
    if (!state.doc) return event.preventDefault();
    ($("#export-json") as HTMLAnchorElement).href = api.exportJsonUrl(state.doc.id);
  };
  const sortSelect = $("#sort") as HTMLSelectElement;
  sortSelect.onchange = () => {
    view.sort = sortSelect.value as ViewOptions["sort"];
    renderPool();
  };
  const descBox = $("#desc") as HTMLInputElement;
  descBox.onchange = () => {
    view.descending = descBox.checked;
    renderPool();
  };
  const bandBox = $("#in-band-only") as HTMLInputElement;
  bandBox.onchange = () => {
    view.inBandOnly = bandBox.checked;
    renderPool();
  };
}

wireControls();
renderAll();
setStatus("create or load a session to begin");
