// Thin client for the segmentation service JSON endpoints. The browser
// never computes segmentation itself; every label map comes from /segment.

export interface LegendEntry {
  label: string;
  // "#rrggbb", derived server-side from a hash of the label name, so the
  // same label keeps the same color no matter where it sits in the list
  color: string;
}

export interface ScoreSummary {
  label: string;
  min: number;
  max: number;
  mean: number;
}

export interface SegmentResponse {
  // base64 of one byte per pixel, row-major; each byte indexes `legend`
  label_map: string;
  width: number;
  height: number;
  legend: LegendEntry[];
  scores?: ScoreSummary[];
}

export interface SegmentOptions {
  temperature?: number;
  return_scores?: boolean;
}

export interface SegmentRequest {
  image: string; // base64-encoded image file (PNG, JPEG, ...)
  labels: string[];
  options?: SegmentOptions;
}

export interface HealthInfo {
  status: string;
  checkpoint_digest: string;
  table_digest: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function readDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (typeof body?.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall back to the status line
  }
  return res.statusText || `status ${res.status}`;
}

export class SegmentClient {
  constructor(readonly base: string = "") {}

  async segment(req: SegmentRequest, signal?: AbortSignal): Promise<SegmentResponse> {
    const res = await fetch(`${this.base}/segment`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
    if (!res.ok) throw new ApiError(res.status, await readDetail(res));
    return res.json() as Promise<SegmentResponse>;
  }

  async vocabulary(): Promise<string[]> {
    const res = await fetch(`${this.base}/vocabulary`);
    if (!res.ok) throw new ApiError(res.status, await readDetail(res));
    const body = await res.json();
    return body.labels as string[];
  }

  async health(): Promise<HealthInfo> {
    const res = await fetch(`${this.base}/health`);
    if (!res.ok) throw new ApiError(res.status, await readDetail(res));
    return res.json() as Promise<HealthInfo>;
  }
}

export function decodeLabelMap(b64: string): Uint8Array {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return bytes;
}
