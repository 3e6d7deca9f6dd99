// Pure pixel compositing, kept free of canvas so it can run under test.
// Colors come from the server legend and are keyed by label name, which is
// what makes a reorder-only edit render the exact same pixels.

import type { LegendEntry } from "./api.js";

export class OverlayError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "OverlayError";
  }
}

export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, 4 bytes per pixel
}

export function hexToRgb(hex: string): [number, number, number] {
  const m = /^#([0-9a-fA-F]{6})$/.exec(hex);
  if (!m) throw new OverlayError(`bad legend color ${JSON.stringify(hex)}`);
  const v = parseInt(m[1], 16);
  return [(v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff];
}

/**
 * Blend label colors over the image. opacity 0 returns the original pixels
 * untouched, opacity 1 returns pure label colors; rounding is exact at both
 * endpoints because the inputs are integers.
 */
export function renderOverlay(
  image: RgbaImage,
  labelMap: Uint8Array,
  legend: LegendEntry[],
  opacity: number
): Uint8ClampedArray {
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new OverlayError(`opacity ${opacity} outside [0, 1]`);
  }
  const pixels = image.width * image.height;
  if (labelMap.length !== pixels) {
    throw new OverlayError(
      `label map has ${labelMap.length} pixels, image is ` +
        `${image.width}x${image.height} (${pixels})`
    );
  }
  const palette = legend.map((entry) => hexToRgb(entry.color));
  const out = new Uint8ClampedArray(pixels * 4);
  for (let i = 0; i < pixels; i++) {
    const idx = labelMap[i];
    if (idx >= palette.length) {
      throw new OverlayError(`label index ${idx} outside legend of ${palette.length}`);
    }
    const color = palette[idx];
    const o = i * 4;
    for (let c = 0; c < 3; c++) {
      const orig = image.data[o + c];
      out[o + c] = Math.round(orig + (color[c] - orig) * opacity);
    }
    out[o + 3] = 255;
  }
  return out;
}

/** Index of the winning label at (x, y); feeds the hover readout. */
export function labelAt(
  labelMap: Uint8Array,
  width: number,
  height: number,
  x: number,
  y: number
): number {
  if (x < 0 || y < 0 || x >= width || y >= height) {
    throw new RangeError(`(${x}, ${y}) outside ${width}x${height}`);
  }
  return labelMap[y * width + x];
}
