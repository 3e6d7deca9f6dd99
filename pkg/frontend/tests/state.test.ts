import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError, decodeLabelMap } from "../src/api.js";
import type { SegmentRequest, SegmentResponse } from "../src/api.js";
import { renderOverlay } from "../src/overlay.js";
import type { RgbaImage } from "../src/overlay.js";
import { LabelEditError, SessionState, applyEdit } from "../src/state.js";

// Stand-in server: a fixed scene where each pixel belongs to a named class,
// responses index labels by their position in the request (pixels of absent
// classes fall back to "other"), and colors are keyed by label name. That is
// exactly the behavior the real service exhibits, minus the model.
const TRUTH = ["red", "red", "blue", "other", "blue", "other"];
const COLORS: Record<string, string> = {
  other: "#202028",
  red: "#d03030",
  blue: "#3050d0",
  green: "#30b050",
};

function fakeSegment(req: SegmentRequest): SegmentResponse {
  const unknown = req.labels.filter((l) => !(l in COLORS));
  if (unknown.length > 0) {
    throw new ApiError(400, `unknown labels: ${unknown.join(", ")}`);
  }
  const bytes = new Uint8Array(TRUTH.length);
  TRUTH.forEach((name, i) => {
    let idx = req.labels.indexOf(name);
    if (idx < 0) idx = req.labels.indexOf("other");
    bytes[i] = idx;
  });
  return {
    label_map: btoa(String.fromCharCode(...bytes)),
    width: 3,
    height: 2,
    legend: req.labels.map((l) => ({ label: l, color: COLORS[l] })),
  };
}

function testImage(): RgbaImage {
  const data = new Uint8ClampedArray(3 * 2 * 4);
  for (let i = 0; i < data.length; i++) data[i] = (i * 37) % 256;
  for (let i = 3; i < data.length; i += 4) data[i] = 255;
  return { width: 3, height: 2, data };
}

function freshState(segment = vi.fn(async (req: SegmentRequest) => fakeSegment(req))) {
  const state = new SessionState({ segment });
  state.setImage("aW1hZ2U=", testImage());
  state.setLabels(["other", "red"]);
  return { state, segment };
}

describe("applyEdit", () => {
  it("keeps the list nonempty and duplicate-free", () => {
    expect(applyEdit(["other"], { kind: "add", label: "red" })).toEqual(["other", "red"]);
    expect(() => applyEdit(["other"], { kind: "remove", label: "other" })).toThrow(LabelEditError);
    expect(() => applyEdit(["other", "red"], { kind: "add", label: "red" })).toThrow(/duplicate/);
    expect(() => applyEdit(["other"], { kind: "add", label: "  " })).toThrow(LabelEditError);
    expect(() => applyEdit(["other", "red"], { kind: "rename", from: "red", to: "other" })).toThrow(
      /duplicate/
    );
  });

  it("reorders by moving one label", () => {
    expect(applyEdit(["a", "b", "c"], { kind: "reorder", from: 2, to: 0 })).toEqual(["c", "a", "b"]);
    expect(applyEdit(["a", "b", "c"], { kind: "reorder", from: 0, to: 2 })).toEqual(["b", "c", "a"]);
  });
});

describe("SessionState", () => {
  it("commits an add with exactly one request and records history", async () => {
    const { state, segment } = freshState();
    const response = await state.editLabels({ kind: "add", label: "blue" });
    expect(segment).toHaveBeenCalledTimes(1);
    expect(segment.mock.calls[0][0].labels).toEqual(["other", "red", "blue"]);
    expect(state.latest).toBe(response);
    expect(state.history).toHaveLength(1);
    expect(state.history[0].labels).toEqual(["other", "red", "blue"]);
  });

  it("commits a remove with exactly one request", async () => {
    const { state, segment } = freshState();
    await state.editLabels({ kind: "remove", label: "red" });
    expect(segment).toHaveBeenCalledTimes(1);
    expect(segment.mock.calls[0][0].labels).toEqual(["other"]);
    expect(state.history).toHaveLength(1);
  });

  it("validation failures never reach the server", async () => {
    const { state, segment } = freshState();
    await expect(state.editLabels({ kind: "add", label: "red" })).rejects.toThrow(/duplicate/);
    state.setLabels(["other"]);
    await expect(state.editLabels({ kind: "remove", label: "other" })).rejects.toThrow(/last label/);
    expect(segment).not.toHaveBeenCalled();
    expect(state.history).toHaveLength(0);
  });

  it("renders a pixel-identical overlay after a reorder-only edit", async () => {
    const { state } = freshState();
    await state.editLabels({ kind: "add", label: "blue" });
    const before = state.latest!;
    await state.editLabels({ kind: "reorder", from: 0, to: 2 });
    const after = state.latest!;

    expect(after.legend.map((e) => e.label)).toEqual(["red", "blue", "other"]);
    expect(after.label_map).not.toBe(before.label_map); // indices did move

    const image = testImage();
    const a = renderOverlay(image, decodeLabelMap(before.label_map), before.legend, 0.7);
    const b = renderOverlay(image, decodeLabelMap(after.label_map), after.legend, 0.7);
    expect(Array.from(b)).toEqual(Array.from(a));
  });

  it("pins a server 400 to the offending label and keeps the previous overlay", async () => {
    const { state, segment } = freshState();
    await state.editLabels({ kind: "add", label: "blue" });
    const good = state.latest;

    const result = await state.editLabels({ kind: "add", label: "zeppelin" });
    expect(result).toBeNull();
    expect(segment).toHaveBeenCalledTimes(2);
    expect(state.inlineError).not.toBeNull();
    expect(state.inlineError!.label).toBe("zeppelin");
    expect(state.inlineError!.message).toContain("zeppelin");
    expect(state.latest).toBe(good); // previous overlay untouched
    expect(state.history).toHaveLength(1); // failed edit recorded nowhere
    expect(state.labels).toContain("zeppelin"); // the chip stays, to be fixed

    // fixing the bad label clears the error on the next good commit
    await state.editLabels({ kind: "rename", from: "zeppelin", to: "green" });
    expect(state.inlineError).toBeNull();
    expect(state.history).toHaveLength(2);
  });

  it("reproduces the earlier overlay when a label is removed then re-added", async () => {
    const { state } = freshState();
    await state.editLabels({ kind: "add", label: "blue" });
    await state.editLabels({ kind: "remove", label: "blue" });
    await state.editLabels({ kind: "add", label: "blue" });

    const first = state.history[0].response;
    const third = state.history[2].response;
    expect(third.label_map).toBe(first.label_map);
    expect(third.legend).toEqual(first.legend);
  });

  it("replays any past label set byte-identically", async () => {
    const { state } = freshState();
    await state.editLabels({ kind: "add", label: "blue" });
    await state.editLabels({ kind: "remove", label: "red" });
    await state.editLabels({ kind: "reorder", from: 0, to: 1 });

    const recorded = state.history[0];
    const replayed = await state.replay(0);
    expect(JSON.stringify(replayed)).toBe(JSON.stringify(recorded.response));
    expect(state.history).toHaveLength(4); // replay appends, never rewrites
    expect(state.history[0]).toBe(recorded);
  });

  it("lets a newer edit supersede a stale in-flight response", async () => {
    // a server that answers out of order and ignores cancellation entirely:
    // the stale response resolving last must not win
    const pending: Array<{ req: SegmentRequest; resolve: (r: SegmentResponse) => void }> = [];
    const segment = vi.fn(
      (req: SegmentRequest) =>
        new Promise<SegmentResponse>((resolve) => {
          pending.push({ req, resolve });
        })
    );
    const state = new SessionState({ segment });
    state.setImage("aW1hZ2U=", testImage());
    state.setLabels(["other", "red"]);

    const first = state.editLabels({ kind: "add", label: "blue" });
    const second = state.editLabels({ kind: "remove", label: "red" });
    expect(pending).toHaveLength(2);

    pending[1].resolve(fakeSegment(pending[1].req));
    await second;
    pending[0].resolve(fakeSegment(pending[0].req));
    await first;

    expect(state.latest!.legend.map((e) => e.label)).toEqual(["other", "blue"]);
    expect(state.history).toHaveLength(1);
    expect(state.history[0].labels).toEqual(["other", "blue"]);
  });

  it("aborts the superseded request's signal", async () => {
    const seen: AbortSignal[] = [];
    const segment = vi.fn(
      (req: SegmentRequest, signal?: AbortSignal) =>
        new Promise<SegmentResponse>((resolve, reject) => {
          seen.push(signal!);
          signal!.addEventListener("abort", () =>
            reject(new DOMException("canceled", "AbortError"))
          );
          if (seen.length === 2) resolve(fakeSegment(req));
        })
    );
    const state = new SessionState({ segment });
    state.setImage("aW1hZ2U=", testImage());
    state.setLabels(["other", "red"]);

    const first = state.editLabels({ kind: "add", label: "blue" });
    const second = state.editLabels({ kind: "add", label: "green" });
    expect(seen[0].aborted).toBe(true);
    expect(seen[1].aborted).toBe(false);
    expect(await first).toBeNull();
    expect(await second).not.toBeNull();
    expect(state.history).toHaveLength(1);
  });

  it("starts a fresh history when a new image is loaded", async () => {
    const { state } = freshState();
    await state.editLabels({ kind: "add", label: "blue" });
    expect(state.history).toHaveLength(1);
    state.setImage("bmV4dA==", testImage());
    expect(state.history).toHaveLength(0);
    expect(state.latest).toBeNull();
    expect(state.labels).toEqual(["other", "red", "blue"]); // labels survive
  });
});
