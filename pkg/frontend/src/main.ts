// DOM wiring: upload an image, edit the label list, watch the overlay and
// the before/after panel follow each committed edit.

import { SegmentClient, decodeLabelMap } from "./api.js";
import type { SegmentResponse } from "./api.js";
import { debounce } from "./debounce.js";
import { OverlayError, labelAt, renderOverlay } from "./overlay.js";
import type { RgbaImage } from "./overlay.js";
import { LabelEditError, SessionState } from "./state.js";
import type { EditAction } from "./state.js";

const SERVICE_BASE = new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8600";

const client = new SegmentClient(SERVICE_BASE);
const state = new SessionState(client);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const fileInput = el<HTMLInputElement>("file");
const labelInput = el<HTMLInputElement>("label-input");
const addButton = el<HTMLButtonElement>("label-add");
const chipRow = el<HTMLDivElement>("chips");
const banner = el<HTMLDivElement>("banner");
const canvas = el<HTMLCanvasElement>("view");
const hoverOut = el<HTMLSpanElement>("hover");
const opacitySlider = el<HTMLInputElement>("opacity");
const legendList = el<HTMLUListElement>("legend");
const historyPanel = el<HTMLDivElement>("history");
const vocabList = el<HTMLDataListElement>("vocab");
const healthOut = el<HTMLSpanElement>("health");

function showBanner(message: string): void {
  banner.textContent = message;
  banner.hidden = false;
}

function clearBanner(): void {
  banner.hidden = true;
}

async function commitEdit(action: EditAction): Promise<void> {
  clearBanner();
  try {
    await state.editLabels(action);
  } catch (err) {
    if (err instanceof LabelEditError) {
      state.inlineError = { label: err.label, message: err.message };
    } else {
      showBanner(err instanceof Error ? err.message : String(err));
    }
  }
  renderAll();
}

// Renames arrive per keystroke, so they are debounced; Enter flushes.
const debouncedRename = debounce((from: string, to: string) => {
  void commitEdit({ kind: "rename", from, to });
}, 300);

function renderChips(): void {
  chipRow.textContent = "";
  state.labels.forEach((label, i) => {
    const chip = document.createElement("span");
    chip.className = "chip";

    const name = document.createElement("input");
    name.value = label;
    name.size = Math.max(4, label.length);
    name.addEventListener("input", () => {
      debouncedRename(label, name.value);
    });
    name.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter") debouncedRename.flush();
    });
    chip.appendChild(name);

    const left = document.createElement("button");
    left.textContent = "←";
    left.disabled = i === 0;
    left.addEventListener("click", () => void commitEdit({ kind: "reorder", from: i, to: i - 1 }));
    chip.appendChild(left);

    const right = document.createElement("button");
    right.textContent = "→";
    right.disabled = i === state.labels.length - 1;
    right.addEventListener("click", () => void commitEdit({ kind: "reorder", from: i, to: i + 1 }));
    chip.appendChild(right);

    const drop = document.createElement("button");
    drop.textContent = "×";
    drop.addEventListener("click", () => void commitEdit({ kind: "remove", label }));
    chip.appendChild(drop);

    if (state.inlineError && state.inlineError.label === label) {
      chip.classList.add("chip-error");
      const note = document.createElement("span");
      note.className = "inline-error";
      note.textContent = state.inlineError.message;
      chip.appendChild(note);
    }
    chipRow.appendChild(chip);
  });
  // an error on a label that validation never let into the list still
  // needs somewhere to show up
  if (state.inlineError && !state.labels.includes(state.inlineError.label)) {
    const note = document.createElement("span");
    note.className = "inline-error";
    note.textContent = `${state.inlineError.label}: ${state.inlineError.message}`;
    chipRow.appendChild(note);
  }
}

function drawResponse(target: HTMLCanvasElement, image: RgbaImage, response: SegmentResponse, opacity: number): void {
  const map = decodeLabelMap(response.label_map);
  if (response.width !== image.width || response.height !== image.height) {
    throw new OverlayError(
      `response is ${response.width}x${response.height}, image is ${image.width}x${image.height}`
    );
  }
  const pixels = renderOverlay(image, map, response.legend, opacity);
  target.width = image.width;
  target.height = image.height;
  const ctx = target.getContext("2d")!;
  ctx.putImageData(new ImageData(new Uint8ClampedArray(pixels), image.width, image.height), 0, 0);
}

function renderView(): void {
  if (!state.image) return;
  const ctx = canvas.getContext("2d")!;
  canvas.width = state.image.width;
  canvas.height = state.image.height;
  if (!state.latest) {
    const copy = new Uint8ClampedArray(state.image.data);
    ctx.putImageData(new ImageData(copy, state.image.width, state.image.height), 0, 0);
    return;
  }
  try {
    drawResponse(canvas, state.image, state.latest, state.opacity);
  } catch (err) {
    if (err instanceof OverlayError) showBanner(err.message);
    else throw err;
  }
}

function renderLegend(): void {
  legendList.textContent = "";
  if (!state.latest) return;
  for (const entry of state.latest.legend) {
    const item = document.createElement("li");
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = entry.color;
    item.appendChild(swatch);
    item.appendChild(document.createTextNode(` ${entry.label}`));
    legendList.appendChild(item);
  }
}

// Before/after panel for the last two committed edits: labels dropped since
// the previous run are underlined on the left, labels added are bold on the
// right, so an edit reads at a glance.
function renderHistory(): void {
  historyPanel.textContent = "";
  if (!state.image || state.history.length === 0) return;
  const last = state.history.length - 1;
  const entries = state.history.slice(Math.max(0, last - 1));
  entries.forEach((entry, slot) => {
    const isAfter = slot === entries.length - 1;
    const other = entries.length === 2 ? entries[1 - slot] : null;
    const column = document.createElement("div");
    column.className = "history-column";

    const title = document.createElement("div");
    title.textContent = entries.length === 2 ? (isAfter ? "after" : "before") : "latest";
    column.appendChild(title);

    const shot = document.createElement("canvas");
    try {
      drawResponse(shot, state.image!, entry.response, state.opacity);
    } catch {
      // a stale entry that no longer matches the image is simply not drawn
    }
    column.appendChild(shot);

    const caption = document.createElement("div");
    for (const label of entry.labels) {
      const word = document.createElement("span");
      word.textContent = label;
      word.className = "word";
      if (other) {
        if (isAfter && !other.labels.includes(label)) word.classList.add("added");
        if (!isAfter && !other.labels.includes(label)) word.classList.add("removed");
      }
      caption.appendChild(word);
    }
    column.appendChild(caption);
    historyPanel.appendChild(column);
  });
}

function renderAll(): void {
  renderChips();
  renderView();
  renderLegend();
  renderHistory();
}

async function loadImage(file: File): Promise<void> {
  const buf = await file.arrayBuffer();
  let b64 = "";
  const bytes = new Uint8Array(buf);
  for (let i = 0; i < bytes.length; i += 0x8000) {
    b64 += String.fromCharCode(...bytes.subarray(i, i + 0x8000));
  }
  const bitmap = await createImageBitmap(new Blob([buf]));
  const scratch = document.createElement("canvas");
  scratch.width = bitmap.width;
  scratch.height = bitmap.height;
  const ctx = scratch.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  state.setImage(btoa(b64), { width: bitmap.width, height: bitmap.height, data: data.data });
  clearBanner();
  if (state.labels.length > 0) await state.segmentNow();
  renderAll();
}

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void loadImage(file).catch((err) => showBanner(String(err)));
});

function addFromInput(): void {
  const label = labelInput.value.trim();
  if (!label) return;
  labelInput.value = "";
  void commitEdit({ kind: "add", label });
}

addButton.addEventListener("click", addFromInput);
labelInput.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") addFromInput();
});

opacitySlider.addEventListener("input", () => {
  state.opacity = Number(opacitySlider.value) / 100;
  renderView();
  renderHistory();
});

canvas.addEventListener("mousemove", (ev) => {
  if (!state.latest || !state.image) return;
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((ev.clientX - rect.left) / rect.width) * state.image.width);
  const y = Math.floor(((ev.clientY - rect.top) / rect.height) * state.image.height);
  if (x < 0 || y < 0 || x >= state.image.width || y >= state.image.height) return;
  const map = decodeLabelMap(state.latest.label_map);
  const idx = labelAt(map, state.latest.width, state.latest.height, x, y);
  const entry = state.latest.legend[idx];
  hoverOut.textContent = entry ? `(${x}, ${y}) → ${entry.label}` : "";
});

async function boot(): Promise<void> {
  state.setLabels(["other"]);
  renderAll();
  try {
    const info = await client.health();
    healthOut.textContent = `model ${info.checkpoint_digest.slice(0, 8)}`;
    const words = await client.vocabulary();
    vocabList.textContent = "";
    for (const word of words) {
      const opt = document.createElement("option");
      opt.value = word;
      vocabList.appendChild(opt);
    }
  } catch (err) {
    showBanner(`service unreachable at ${SERVICE_BASE}: ${err instanceof Error ? err.message : err}`);
  }
}

void boot();
