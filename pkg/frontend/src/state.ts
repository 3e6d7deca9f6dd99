// Session state for the label-editing loop: one image, an ordered label
// list, the latest server response, and an append-only history of every
// committed (labels, response) pair. Each committed edit issues exactly one
// /segment request; a newer edit cancels any request still in flight.

import { ApiError } from "./api.js";
import type { SegmentRequest, SegmentResponse } from "./api.js";
import type { RgbaImage } from "./overlay.js";

export type EditAction =
  | { kind: "add"; label: string }
  | { kind: "remove"; label: string }
  | { kind: "reorder"; from: number; to: number }
  | { kind: "rename"; from: string; to: string };

export interface HistoryEntry {
  labels: string[];
  response: SegmentResponse;
}

export interface InlineError {
  label: string;
  message: string;
}

/** Raised by client-side validation; never reaches the network. */
export class LabelEditError extends Error {
  constructor(readonly label: string, message: string) {
    super(message);
    this.name = "LabelEditError";
  }
}

export interface Segmenter {
  segment(req: SegmentRequest, signal?: AbortSignal): Promise<SegmentResponse>;
}

function touchedLabel(action: EditAction): string | null {
  switch (action.kind) {
    case "add":
      return action.label;
    case "rename":
      return action.to;
    default:
      return null;
  }
}

/** Apply an edit to a label list, enforcing nonempty and no-duplicates. */
export function applyEdit(labels: readonly string[], action: EditAction): string[] {
  const next = [...labels];
  switch (action.kind) {
    case "add": {
      const label = action.label.trim();
      if (!label) throw new LabelEditError(action.label, "label is empty");
      if (next.includes(label)) {
        throw new LabelEditError(label, `duplicate label "${label}"`);
      }
      next.push(label);
      return next;
    }
    case "remove": {
      const at = next.indexOf(action.label);
      if (at < 0) {
        throw new LabelEditError(action.label, `no label "${action.label}" to remove`);
      }
      next.splice(at, 1);
      if (next.length === 0) {
        throw new LabelEditError(action.label, "cannot remove the last label");
      }
      return next;
    }
    case "reorder": {
      const { from, to } = action;
      if (from < 0 || from >= next.length || to < 0 || to >= next.length) {
        throw new LabelEditError("", `reorder ${from} -> ${to} outside list of ${next.length}`);
      }
      const [moved] = next.splice(from, 1);
      next.splice(to, 0, moved);
      return next;
    }
    case "rename": {
      const at = next.indexOf(action.from);
      if (at < 0) {
        throw new LabelEditError(action.from, `no label "${action.from}" to rename`);
      }
      const to = action.to.trim();
      if (!to) throw new LabelEditError(action.from, "new name is empty");
      if (to !== action.from && next.includes(to)) {
        throw new LabelEditError(to, `duplicate label "${to}"`);
      }
      next[at] = to;
      return next;
    }
  }
}

function isAbort(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}

/** Pick which label a server rejection should be pinned to in the UI. */
function offendingLabel(detail: string, labels: readonly string[], touched: string | null): string {
  for (const label of labels) {
    if (label && detail.includes(label)) return label;
  }
  return touched ?? labels[0] ?? "";
}

export class SessionState {
  imageBase64: string | null = null;
  image: RgbaImage | null = null;
  labels: string[] = [];
  latest: SegmentResponse | null = null;
  opacity = 0.6;
  readonly history: HistoryEntry[] = [];
  inlineError: InlineError | null = null;

  private inflight: AbortController | null = null;
  private seq = 0;

  constructor(private readonly client: Segmenter) {}

  /** Loading an image starts a fresh session: history begins again. */
  setImage(base64: string, image: RgbaImage): void {
    this.imageBase64 = base64;
    this.image = image;
    this.latest = null;
    this.inlineError = null;
    this.history.length = 0;
  }

  setLabels(labels: readonly string[]): void {
    if (labels.length === 0) throw new LabelEditError("", "label list is empty");
    const seen = new Set<string>();
    for (const label of labels) {
      if (!label.trim()) throw new LabelEditError(label, "label is empty");
      if (seen.has(label)) throw new LabelEditError(label, `duplicate label "${label}"`);
      seen.add(label);
    }
    this.labels = [...labels];
  }

  /**
   * Validate and apply one edit, then commit it. Validation failures throw
   * before any request is made; server rejections land in `inlineError`
   * with the previous overlay (and history) left untouched.
   */
  async editLabels(action: EditAction): Promise<SegmentResponse | null> {
    const next = applyEdit(this.labels, action);
    this.labels = next;
    return this.commit(next, touchedLabel(action));
  }

  /** Re-issue a past label set; the server is stateless so the recorded
   * response should come back byte-identical. */
  async replay(index: number): Promise<SegmentResponse | null> {
    const entry = this.history[index];
    if (!entry) throw new RangeError(`no history entry ${index}`);
    return this.commit([...entry.labels], null);
  }

  /** Segment the current image with the current labels (first run). */
  async segmentNow(): Promise<SegmentResponse | null> {
    if (this.labels.length === 0) throw new LabelEditError("", "label list is empty");
    return this.commit([...this.labels], null);
  }

  private async commit(labels: string[], touched: string | null): Promise<SegmentResponse | null> {
    if (!this.imageBase64) throw new Error("no image loaded");
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const ticket = ++this.seq;
    try {
      const response = await this.client.segment(
        { image: this.imageBase64, labels: [...labels] },
        controller.signal
      );
      if (ticket !== this.seq) return null; // a newer edit superseded this one
      this.latest = response;
      this.inlineError = null;
      this.history.push({ labels: [...labels], response });
      return response;
    } catch (err) {
      if (isAbort(err) || ticket !== this.seq) return null;
      if (err instanceof ApiError && err.status === 400) {
        this.inlineError = { label: offendingLabel(err.detail, labels, touched), message: err.detail };
        return null;
      }
      throw err;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
