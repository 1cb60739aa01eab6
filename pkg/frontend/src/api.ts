/** Typed client for the remixer inference service. */

import { blobBytes } from "./wav.js";

export const GAIN_LIMIT_DB = 24;

export interface SessionInfo {
  session_id: string;
  duration_s: number;
  sample_rate: number;
  k: number;
  labels: string[];
}

export interface ModelInfo {
  variant: "baseline" | "model1" | "model2";
  config: Record<string, number>;
  checkpoint_hash: string;
  labels: string[];
}

export interface RemixResult {
  /** Raw WAV bytes exactly as served. */
  wav: ArrayBuffer;
  /** Gains the server actually applied (clamp reports reconciled here). */
  appliedGainsDb: number[];
  clamped: boolean;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function errorFrom(response: Response): Promise<ApiError> {
  let message = `${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  return new ApiError(response.status, message);
}

export class RemixerClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  async modelInfo(): Promise<ModelInfo> {
    const r = await this.fetchImpl(`${this.baseUrl}/v1/model`);
    if (!r.ok) throw await errorFrom(r);
    return (await r.json()) as ModelInfo;
  }

  async upload(file: Blob | ArrayBuffer, filename = "mixture.wav"): Promise<SessionInfo> {
    // multipart body built by hand: a plain byte body works identically in
    // browsers and in server-side DOM test environments, with no reliance
    // on the runtime's FormData/File pairing
    const bytes =
      file instanceof ArrayBuffer
        ? new Uint8Array(file)
        : new Uint8Array(await blobBytes(file));
    const boundary = `----remixer-${Date.now().toString(36)}-${Math.random()
      .toString(36)
      .slice(2)}`;
    const encoder = new TextEncoder();
    const head = encoder.encode(
      `--${boundary}\r\n` +
        `Content-Disposition: form-data; name="file"; filename="${filename}"\r\n` +
        `Content-Type: audio/wav\r\n\r\n`,
    );
    const tail = encoder.encode(`\r\n--${boundary}--\r\n`);
    const body = new Uint8Array(head.length + bytes.length + tail.length);
    body.set(head, 0);
    body.set(bytes, head.length);
    body.set(tail, head.length + bytes.length);
    const r = await this.fetchImpl(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "content-type": `multipart/form-data; boundary=${boundary}` },
      body,
    });
    if (!r.ok) throw await errorFrom(r);
    return (await r.json()) as SessionInfo;
  }

  async remix(sessionId: string, gainsDb: number[]): Promise<RemixResult> {
    const r = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}/remix`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ gains_db: gainsDb }),
    });
    if (!r.ok) throw await errorFrom(r);
    const applied = r.headers.get("X-Applied-Gains-Db");
    return {
      wav: await r.arrayBuffer(),
      appliedGainsDb: applied ? (JSON.parse(applied) as number[]) : gainsDb,
      clamped: r.headers.get("X-Clamped") === "1",
    };
  }

  async stems(sessionId: string): Promise<ArrayBuffer> {
    const r = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}/stems`);
    if (!r.ok) throw await errorFrom(r);
    return await r.arrayBuffer();
  }
}
