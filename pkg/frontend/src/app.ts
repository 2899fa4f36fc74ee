/**
 * Single-page client wiring.
 *
 * Flow: define up to three object queries, search once, then refine
 * spatially for free: canvas drags and chip edits re-filter the shortlist
 * payload locally (see filter.ts); only object/t changes re-contact the
 * server. Recommendations arrive as constraint sets and drop into the same
 * chip editor.
 */

import { ApiClient } from "./api.js";
import {
  clampBox,
  hitTest,
  moveBox,
  resizeBox,
  type CanvasBox,
  type ResizeHandle,
} from "./canvas.js";
import { clientFilter } from "./filter.js";
import { drawBoxes, OBJECT_COLORS, resultCard } from "./render.js";
import {
  addChip,
  applyRecommendation,
  chipsToConstraintSet,
  newSession,
  removeBoxChips,
  removeChip,
  syncCanvasChips,
  undo,
  type SessionState,
} from "./state.js";
import type { CatalogEntry, ShortlistPayload } from "./types.js";

const DEBOUNCE_MS = 150;

interface AppState {
  session: SessionState;
  boxes: CanvasBox[];
  payload: ShortlistPayload | null;
  includeFailing: boolean;
  catalog: CatalogEntry[];
  snapshotId: string | null;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(baseUrl = ""): void {
  const api = new ApiClient(baseUrl);
  const state: AppState = {
    session: newSession(1),
    boxes: [],
    payload: null,
    includeFailing: false,
    catalog: [],
    snapshotId: null,
  };

  const queryCanvas = el<HTMLCanvasElement>("query-canvas");
  const resultsGrid = el<HTMLElement>("results");
  const chipList = el<HTMLElement>("chips");
  const status = el<HTMLElement>("status");

  // ---- object query rows ----
  function definedObjects(): Array<{ by_category: string; attributes: string[] }> {
    const out = [];
    for (let i = 0; i < 3; i++) {
      const category = el<HTMLInputElement>(`category-${i}`).value.trim();
      if (!category) continue;
      const attributes = el<HTMLInputElement>(`attributes-${i}`).value
        .split(",").map((s) => s.trim()).filter(Boolean);
      out.push({ by_category: category, attributes });
    }
    return out;
  }

  // ---- local refiltering (never touches the server) ----
  function refilter(): void {
    if (!state.payload) return;
    const constraints = chipsToConstraintSet(state.session);
    resultsGrid.replaceChildren();
    try {
      const results = clientFilter(state.payload, constraints, state.includeFailing);
      const dims = new Map(state.payload.images.map(
        (img) => [img.image_id, [img.width, img.height] as const]));
      for (const result of results.slice(0, 60)) {
        const [w, h] = dims.get(result.image_id) ?? [640, 480];
        resultsGrid.append(resultCard(result, w, h));
      }
      status.textContent = `${results.filter((r) => r.passes).length} passing / `
        + `${state.payload.images.length} candidates (local refilter)`;
    } catch (err) {
      status.textContent = String(err);
    }
  }

  function renderChips(): void {
    chipList.replaceChildren();
    state.session.chips.forEach((chip, i) => {
      const node = document.createElement("span");
      node.className = `chip chip-${chip.origin}`;
      node.textContent =
        `${chip.name} ${chip.sign > 0 ? ">=" : "<="} ${chip.theta.toFixed(3)}`;
      const close = document.createElement("button");
      close.textContent = "x";
      close.onclick = () => {
        state.session = removeChip(state.session, i);
        renderChips();
        refilter();
      };
      node.append(close);
      chipList.append(node);
    });
  }

  // ---- canvas editing ----
  function redrawQueryCanvas(): void {
    drawBoxes(
      queryCanvas,
      state.boxes.map((b) => [b.left, b.top, b.right, b.bottom]),
      1, 1,
    );
  }

  let dragging: { index: number; handle: ResizeHandle; lastX: number; lastY: number } | null = null;
  let debounceTimer: number | undefined;

  function canvasFractions(event: PointerEvent): [number, number] {
    const rect = queryCanvas.getBoundingClientRect();
    return [
      (event.clientX - rect.left) / rect.width,
      (event.clientY - rect.top) / rect.height,
    ];
  }

  function scheduleCanvasSync(): void {
    window.clearTimeout(debounceTimer);
    debounceTimer = window.setTimeout(() => {
      state.session = syncCanvasChips(state.session, state.boxes);
      renderChips();
      refilter();
    }, DEBOUNCE_MS);
  }

  queryCanvas.addEventListener("pointerdown", (event) => {
    const [x, y] = canvasFractions(event);
    for (let i = state.boxes.length - 1; i >= 0; i--) {
      const test = hitTest(state.boxes[i], x, y);
      if (test.hit) {
        dragging = { index: i, handle: test.handle, lastX: x, lastY: y };
        queryCanvas.setPointerCapture(event.pointerId);
        return;
      }
    }
  });

  queryCanvas.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    const [x, y] = canvasFractions(event);
    const box = state.boxes[dragging.index];
    state.boxes[dragging.index] = dragging.handle
      ? resizeBox(box, dragging.handle, x, y)
      : moveBox(box, x - dragging.lastX, y - dragging.lastY);
    dragging.lastX = x;
    dragging.lastY = y;
    redrawQueryCanvas();
    scheduleCanvasSync();
  });

  queryCanvas.addEventListener("pointerup", () => {
    dragging = null;
  });

  el<HTMLButtonElement>("add-box").onclick = () => {
    const used = new Set(state.boxes.map((b) => b.objectIndex));
    const objectIndex = [0, 1, 2].find((i) => !used.has(i));
    if (objectIndex === undefined) return;
    state.boxes.push(clampBox({
      objectIndex,
      left: 0.1 + 0.25 * objectIndex,
      top: 0.3,
      right: 0.3 + 0.25 * objectIndex,
      bottom: 0.7,
    }));
    redrawQueryCanvas();
    scheduleCanvasSync();
  };

  el<HTMLButtonElement>("remove-box").onclick = () => {
    const box = state.boxes.pop();
    if (box) state.session = removeBoxChips(state.session, box.objectIndex);
    redrawQueryCanvas();
    renderChips();
    refilter();
  };

  // ---- manual chip form ----
  el<HTMLButtonElement>("add-chip").onclick = () => {
    const select = el<HTMLSelectElement>("chip-feature");
    const f = parseInt(select.value, 10);
    const entry = state.catalog[f];
    if (!entry) return;
    state.session = addChip(state.session, {
      f,
      name: entry.name,
      theta: parseFloat(el<HTMLInputElement>("chip-theta").value || "0"),
      sign: el<HTMLSelectElement>("chip-sign").value === ">=" ? 1 : -1,
      origin: "manual",
    });
    renderChips();
    refilter();
  };

  el<HTMLButtonElement>("undo").onclick = () => {
    state.session = undo(state.session);
    renderChips();
    refilter();
  };

  el<HTMLInputElement>("include-failing").onchange = (event) => {
    state.includeFailing = (event.target as HTMLInputElement).checked;
    refilter();
  };

  // ---- searching (object edits go to the server) ----
  async function runSearch(): Promise<void> {
    const objects = definedObjects();
    if (!objects.length) {
      status.textContent = "define at least one object";
      return;
    }
    const arity = objects.length;
    if (state.session.arity !== arity) {
      state.session = newSession(arity);
      state.boxes = state.boxes.filter((b) => b.objectIndex < arity);
    }
    status.textContent = "searching...";
    try {
      const response = await api.search({
        objects,
        top_k: 60,
        t: parseInt(el<HTMLInputElement>("t-input").value || "1", 10),
        include_failing: state.includeFailing,
      });
      state.payload = response.shortlist;
      state.snapshotId = response.snapshot_id;
      state.catalog = await api.catalog(arity);
      populateFeatureSelect();
      renderChips();
      refilter();
    } catch (err) {
      if ((err as Error).name !== "AbortError") status.textContent = String(err);
    }
  }

  function populateFeatureSelect(): void {
    const select = el<HTMLSelectElement>("chip-feature");
    select.replaceChildren();
    for (const entry of state.catalog) {
      const option = document.createElement("option");
      option.value = String(entry.index);
      option.textContent = `${entry.name} [${entry.unit}]`;
      select.append(option);
    }
  }

  el<HTMLButtonElement>("search").onclick = () => void runSearch();

  // ---- recommendation panels ----
  el<HTMLButtonElement>("recommend-mining").onclick = async () => {
    const objects = definedObjects();
    if (!objects.length || !state.payload) return;
    try {
      const recs = await api.recommendMining({ objects, K: 5 });
      const panel = el<HTMLElement>("mining-panel");
      panel.replaceChildren();
      for (const rec of recs) {
        const card = document.createElement("div");
        card.className = "rec-card";
        const canvas = document.createElement("canvas");
        canvas.width = 120;
        canvas.height = 90;
        drawBoxes(canvas, rec.representative.boxes as Array<[number, number, number, number]>,
                  640, 480);
        const label = document.createElement("div");
        label.textContent =
          `${rec.cluster_size} results, F=${rec.metrics.f_value.toFixed(2)}`;
        card.append(canvas, label);
        card.onclick = () => {
          state.session = applyRecommendation(state.session, rec.constraints);
          renderChips();
          refilter();
        };
        panel.append(card);
      }
    } catch (err) {
      status.textContent = String(err);
    }
  };

  el<HTMLButtonElement>("recommend-language").onclick = async () => {
    const objects = definedObjects();
    if (objects.length < 2) {
      status.textContent = "language recommendations need two categories";
      return;
    }
    try {
      const { recommendations } = await api.recommendLanguage(
        objects[0].by_category, objects[1].by_category, 5);
      const panel = el<HTMLElement>("language-panel");
      panel.replaceChildren();
      for (const rec of recommendations) {
        const button = document.createElement("button");
        button.className = "rec-chip";
        button.textContent = `${rec.predicate} (${(rec.likelihood * 100).toFixed(0)}%)`;
        button.onclick = () => {
          state.session = applyRecommendation(state.session, rec.constraints);
          renderChips();
          refilter();
        };
        panel.append(button);
      }
    } catch (err) {
      status.textContent = String(err);
    }
  };

  // color hints for the object rows
  for (let i = 0; i < 3; i++) {
    el<HTMLElement>(`swatch-${i}`).style.background = OBJECT_COLORS[i];
  }
  redrawQueryCanvas();
  void api.indexStats().then((stats) => {
    status.textContent = `index: ${stats.regions} regions / ${stats.images} images`;
  }).catch(() => {
    status.textContent = "server unreachable; start `rbir serve` first";
  });
}
